"""Ray-cast synthetic indoor scenes with exact plane equations.

A box room (six walls) seen from a camera inside it, plus optional floating
rectangular slabs and one sphere.  The world frame shares the camera's axis
convention (x right, y down, z forward) before the camera yaw/pitch is applied.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, DepthMap, Plane3D, orient_normals
from .normals import CombinedNormalMap


@dataclass(frozen=True)
class RoomSpec:
    size: tuple = (4.0, 3.0, 5.0)  # x, y, z extents in metres
    camera_position: tuple = (2.0, 1.5, 1.0)
    yaw: float = 10.0  # degrees about the y axis
    pitch: float = 5.0  # degrees about the x axis
    extra_planes: int = 0
    sphere: bool = False
    noise_sigma: float = 0.0
    rng_seed: int = 0


@dataclass
class SyntheticScene:
    planes: list  # Plane3D per label 1..N, camera frame
    extents: list  # [x0, y0, x1, y1) pixel box per plane
    depth: DepthMap
    clean_depth: DepthMap
    seg: np.ndarray
    normals: CombinedNormalMap
    cam: CameraIntrinsics
    noise_sigma: float = 0.0
    sphere: tuple = None  # (centre, radius) in camera frame
    plane_of_label: dict = field(default_factory=dict)

    def plane_dict(self):
        return {i + 1: p for i, p in enumerate(self.planes)}


def _rotation(yaw, pitch):
    y, p = np.radians(yaw), np.radians(pitch)
    ry = np.array([[np.cos(y), 0, np.sin(y)], [0, 1, 0], [-np.sin(y), 0, np.cos(y)]])
    rx = np.array([[1, 0, 0], [0, np.cos(p), -np.sin(p)], [0, np.sin(p), np.cos(p)]])
    return ry @ rx


def _intersect_plane(rays, normal, offset):
    denom = rays @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        z = offset / denom
    return np.where((np.abs(denom) > 1e-12) & (z > 0), z, np.inf)


def generate_scene(spec=RoomSpec(), cam=None):
    size = np.asarray(spec.size, dtype=np.float64)
    pos = np.asarray(spec.camera_position, dtype=np.float64)
    if size.shape != (3,) or not (size > 0).all():
        raise ValueError(f"room size must be three positive extents, got {spec.size}")
    if not ((pos > 0) & (pos < size)).all():
        raise ValueError(f"camera {tuple(pos)} is not inside the room {tuple(size)}")
    if spec.noise_sigma < 0 or spec.extra_planes < 0:
        raise ValueError("noise_sigma and extra_planes must be non-negative")
    cam = cam or CameraIntrinsics.centered(64, 48)
    rng = np.random.default_rng(spec.rng_seed)
    rot = _rotation(spec.yaw, spec.pitch)  # camera -> world
    rays = cam.rays()

    to_cam = lambda n_w, d_w: (rot.T @ n_w, d_w - n_w @ pos)  # noqa: E731
    planes = []
    for axis in range(3):
        for d_w in (0.0, size[axis]):
            n_w = np.zeros(3)
            n_w[axis] = 1.0
            planes.append(to_cam(n_w, d_w))

    depth = np.full(cam.shape, np.inf)
    owner = np.full(cam.shape, -1)
    for i, (n, d) in enumerate(planes):
        z = _intersect_plane(rays, n, d)
        closer = z < depth
        depth[closer], owner[closer] = z[closer], i
    room_depth = depth.copy()

    inside = lambda p_w, margin=0.05: bool(((p_w > margin) & (p_w < size - margin)).all())  # noqa: E731
    for _ in range(spec.extra_planes):
        for _attempt in range(100):
            v, u = rng.integers(0, cam.height), rng.integers(0, cam.width)
            ray = rays[v, u]
            z = rng.uniform(0.35, 0.75) * room_depth[v, u]
            centre = z * ray
            facing = -ray / np.linalg.norm(ray)
            tilt = rng.normal(size=3)
            normal = facing + rng.uniform(0.0, 0.8) * (tilt - (tilt @ facing) * facing) / np.linalg.norm(tilt)
            normal /= np.linalg.norm(normal)
            a1 = np.cross(normal, [0.0, 1.0, 0.0])
            a1 /= np.linalg.norm(a1)
            a2 = np.cross(normal, a1)
            h1, h2 = rng.uniform(0.15, 0.5, size=2) * z
            corners = [centre + s1 * h1 * a1 + s2 * h2 * a2 for s1 in (-1, 1) for s2 in (-1, 1)]
            if all(inside(rot @ c + pos) for c in corners):
                break
        else:
            raise ValueError("could not place an extra plane inside the room")
        offset = normal @ centre
        zc = _intersect_plane(rays, normal, offset)
        rel = zc[..., None] * rays - centre
        with np.errstate(invalid="ignore"):
            on = (np.abs(rel @ a1) <= h1) & (np.abs(rel @ a2) <= h2) & (zc < depth)
        planes.append((normal, offset))
        depth[on], owner[on] = zc[on], len(planes) - 1

    sphere = None
    if spec.sphere:
        for _attempt in range(100):
            v = rng.integers(cam.height // 4, 3 * cam.height // 4)
            u = rng.integers(cam.width // 4, 3 * cam.width // 4)
            ray = rays[v, u]
            z = rng.uniform(0.35, 0.6) * room_depth[v, u]
            radius = rng.uniform(0.2, 0.35) * z
            centre = z * ray
            if z - radius > 0.2 and inside(rot @ centre + pos, radius + 0.05):
                break
        else:
            raise ValueError("could not place the sphere inside the room")
        rr = np.sum(rays * rays, axis=-1)
        rc = rays @ centre
        disc = rc ** 2 - rr * (centre @ centre - radius ** 2)
        with np.errstate(invalid="ignore"):
            zs = (rc - np.sqrt(disc)) / rr
        hit = (disc > 0) & (zs > 0) & (zs < depth)
        depth[hit], owner[hit] = zs[hit], -2
        sphere = (centre, radius)

    seg = np.zeros(cam.shape, dtype=np.int64)
    normals = np.zeros(cam.shape + (3,))
    out_planes, extents, plane_of_label = [], [], {}
    for i, (n, d) in enumerate(planes):
        region = owner == i
        if not region.any():
            continue
        label = len(out_planes) + 1
        seg[region] = label
        n_or = orient_normals(n)
        flip = float(n_or @ n)
        rows, cols = np.flatnonzero(region.any(1)), np.flatnonzero(region.any(0))
        out_planes.append(Plane3D(n_or, flip * d, int(region.sum()), 0.0))
        extents.append([int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1])
        normals[region] = n_or
        plane_of_label[label] = i
    if sphere is not None:
        hit = owner == -2
        pts = rays[hit] * depth[hit][:, None]
        normals[hit] = orient_normals((pts - sphere[0]) / sphere[1])

    clean = DepthMap(depth)
    noisy = depth
    if spec.noise_sigma > 0:
        noisy = np.maximum(depth + rng.normal(0.0, spec.noise_sigma, cam.shape), 1e-3)
    cnm = CombinedNormalMap(normals, seg, clean.valid.copy(),
                            {i + 1: p for i, p in enumerate(out_planes)})
    return SyntheticScene(out_planes, extents, DepthMap(noisy), clean, seg, cnm, cam,
                          spec.noise_sigma, sphere, plane_of_label)


def generate_plane_scene(cam=None, distance=2.0, normal=(0.0, 0.0, -1.0), noise_sigma=0.0,
                         rng_seed=0):
    """A single plane filling the view; pixels whose ray misses it are invalid."""
    cam = cam or CameraIntrinsics.centered(64, 48)
    n = orient_normals(np.asarray(normal, dtype=np.float64) / np.linalg.norm(normal))
    offset = -float(distance)
    z = _intersect_plane(cam.rays(), n, offset)
    valid = np.isfinite(z)
    z = np.where(valid, z, 0.0)
    if noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        z = np.where(valid, np.maximum(z + rng.normal(0.0, noise_sigma, z.shape), 1e-3), 0.0)
    seg = valid.astype(np.int64)
    plane = Plane3D(n, offset, int(valid.sum()), 0.0)
    normals = np.where(valid[..., None], n, 0.0)
    rows, cols = np.flatnonzero(valid.any(1)), np.flatnonzero(valid.any(0))
    extent = [int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1] if valid.any() else [0, 0, 0, 0]
    clean = DepthMap(np.where(valid, _intersect_plane(cam.rays(), n, offset), 0.0))
    return SyntheticScene([plane], [extent], DepthMap(z, valid), clean, seg,
                          CombinedNormalMap(normals, seg, valid, {1: plane}), cam, noise_sigma)
