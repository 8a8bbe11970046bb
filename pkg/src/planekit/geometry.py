"""Camera model, backprojection, plane fitting and planar depth rendering.

Conventions: the camera looks along +z with its origin at the optical
center, pixel (u, v) is (column, row), and a plane is ``n . P = d`` with a
unit normal oriented by :func:`orient_normals`.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, ShapeMismatchError

# |component| at or below this counts as zero when choosing a normal's sign
ORIENT_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @classmethod
    def centered(cls, width, height, focal=None):
        """Square pixels, principal point at the image center."""
        focal = 0.8 * width if focal is None else focal
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def rays(self):
        """(H, W, 3) grid of ((u - cx)/fx, (v - cy)/fy, 1)."""
        v, u = np.indices(self.shape, dtype=np.float64)
        return np.stack(
            [(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1
        )

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass
class DepthMap:
    """Metric depth grid.  Non-finite or non-positive values are never valid."""

    values: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeMismatchError(f"depth must be 2-D, got shape {self.values.shape}")
        usable = np.isfinite(self.values) & (self.values > 0)
        if self.valid is None:
            self.valid = usable
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != self.values.shape:
                raise ShapeMismatchError(
                    f"validity mask {valid.shape} does not match depth {self.values.shape}"
                )
            self.valid = valid & usable

    @property
    def shape(self):
        return self.values.shape

    def filled(self, fill=0.0):
        """Depth values with invalid pixels replaced by ``fill``."""
        return np.where(self.valid, self.values, fill)


@dataclass
class PointCloud:
    points: np.ndarray
    pixel_of: np.ndarray
    group_of: np.ndarray

    def __len__(self):
        return len(self.points)

    def group(self, label):
        return np.flatnonzero(self.group_of == label)


@dataclass
class Plane3D:
    normal: np.ndarray
    offset: float
    inlier_count: int = 0
    rms_residual: float = 0.0

    def signed_distance(self, points):
        return np.asarray(points, dtype=np.float64) @ self.normal - self.offset

    def to_dict(self):
        return {"normal": [float(c) for c in self.normal], "offset": float(self.offset),
                "inlier_count": int(self.inlier_count),
                "rms_residual": float(self.rms_residual)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["normal"], dtype=np.float64), float(d["offset"]),
                   int(d.get("inlier_count", 0)), float(d.get("rms_residual", 0.0)))


def orient_normals(normals):
    """Flip normals so z <= 0; when z is zero the first nonzero component is negative.

    Works on a single 3-vector or any (..., 3) stack.  Components within
    ``ORIENT_TOL`` of zero are treated as zero so that roundoff cannot
    choose opposite signs for the same surface.
    """
    n = np.asarray(normals, dtype=np.float64)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    key = np.where(np.abs(z) > ORIENT_TOL, z, np.where(np.abs(x) > ORIENT_TOL, x, y))
    sign = np.where(key > 0, -1.0, 1.0)
    return n * sign[..., None]


def orientation_sign(normals):
    """The +/-1 factor :func:`orient_normals` would apply."""
    n = np.asarray(normals, dtype=np.float64)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    key = np.where(np.abs(z) > ORIENT_TOL, z, np.where(np.abs(x) > ORIENT_TOL, x, y))
    return np.where(key > 0, -1.0, 1.0)


def angle_between(n1, n2, unsigned=False):
    """Angle in radians between direction vectors, accurate near 0."""
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    cross = np.linalg.norm(np.cross(n1, n2), axis=-1)
    dot = np.sum(n1 * n2, axis=-1)
    if unsigned:
        dot = np.abs(dot)
    return np.arctan2(cross, dot)


def _check_grid(name, grid, cam):
    if grid.shape != cam.shape:
        raise ShapeMismatchError(f"{name} is {grid.shape} but camera expects {cam.shape}")


def backproject(depth, cam, seg=None):
    """Lift every valid depth pixel to a camera-frame point, in row-major order."""
    _check_grid("depth", depth.values, cam)
    if seg is not None:
        seg = np.asarray(seg)
        _check_grid("segmentation", seg, cam)
    v, u = np.nonzero(depth.valid)
    z = depth.values[v, u]
    points = np.stack([z * (u - cam.cx) / cam.fx, z * (v - cam.cy) / cam.fy, z], axis=1)
    groups = seg[v, u].astype(np.int64) if seg is not None else np.zeros(len(z), dtype=np.int64)
    return PointCloud(points.reshape(-1, 3), np.stack([u, v], axis=1).reshape(-1, 2), groups)


def project(points, cam):
    """Pixel coordinates (u, v) of camera-frame points."""
    p = np.asarray(points, dtype=np.float64)
    return np.stack([cam.fx * p[..., 0] / p[..., 2] + cam.cx,
                     cam.fy * p[..., 1] / p[..., 2] + cam.cy], axis=-1)


def point_grid(depth, cam):
    """(H, W, 3) backprojected points; invalid pixels hold NaN."""
    _check_grid("depth", depth.values, cam)
    pts = cam.rays() * depth.values[..., None]
    pts[~depth.valid] = np.nan
    return pts


def fit_plane_pca(points):
    """Least-squares plane through ``points`` (N x 3) by principal component analysis."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateInputError(f"plane fit needs at least 3 points, got {len(pts)}")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    if not evals[2] > 0 or evals[1] <= 1e-12 * evals[2]:
        raise DegenerateInputError("points are colinear or coincident")
    normal = orient_normals(evecs[:, 0])
    residual = centered @ normal
    return Plane3D(normal, float(normal @ centroid), len(pts),
                   float(np.sqrt(np.mean(residual ** 2))))


def default_ransac_threshold(points):
    """max(1 cm, 1% of the median depth of the points)."""
    z = np.asarray(points, dtype=np.float64)[:, 2]
    return max(0.01, 0.01 * float(np.median(z)))


def fit_plane_ransac(points, threshold=None, iterations=256, rng_seed=0):
    """Consensus plane from minimal 3-point samples, refined by PCA on its inliers.

    Candidates are ranked by inlier count, ties broken by lower RMS inlier
    distance.  ``threshold`` defaults to :func:`default_ransac_threshold`.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < 3:
        raise DegenerateInputError(f"RANSAC needs at least 3 points, got {n}")
    if threshold is None:
        threshold = default_ransac_threshold(pts)
    if threshold <= 0 or iterations < 1:
        raise ValueError("threshold must be > 0 and iterations >= 1")

    rng = np.random.default_rng(rng_seed)
    best_count, best_rms, best_inliers = 0, np.inf, None
    for _ in range(iterations):
        a, b, c = pts[rng.choice(n, 3, replace=False)]
        normal = np.cross(b - a, c - a)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal /= norm
        dist = np.abs(pts @ normal - normal @ a)
        inliers = dist <= threshold
        count = int(inliers.sum())
        if count < 3:
            continue
        rms = float(np.sqrt(np.mean(dist[inliers] ** 2)))
        if count > best_count or (count == best_count and rms < best_rms):
            best_count, best_rms, best_inliers = count, rms, inliers
    if best_inliers is None:
        raise DegenerateInputError("no RANSAC candidate reached 3 inliers")
    return fit_plane_pca(pts[best_inliers])


@dataclass
class PlanarRender:
    depth: DepthMap
    planes: dict = field(default_factory=dict)  # instance index -> Plane3D
    skipped: list = field(default_factory=list)  # instance indices without a usable fit


def render_planar_depth(depth, masks, cam, fit="pca", mask_threshold=0.5,
                        ransac_threshold=None, ransac_iterations=256, rng_seed=0):
    """Replace each masked region's depth by its fitted plane.

    Instances are visited by descending score; a pixel belongs to the first
    mask that covers it.  Pixels whose ray is nearly parallel to the plane, or
    meets it behind the camera, keep their input depth.
    """
    _check_grid("depth", depth.values, cam)
    stack = masks.binarized(mask_threshold)
    if stack.shape[1:] != depth.shape:
        raise ShapeMismatchError(f"masks {stack.shape[1:]} do not match depth {depth.shape}")
    if fit not in ("pca", "ransac"):
        raise ValueError(f"unknown fit method {fit!r}")

    rays = cam.rays()
    values = depth.values.copy()
    valid = depth.valid.copy()
    claimed = np.zeros(depth.shape, dtype=bool)
    result = PlanarRender(depth=None)
    for m in np.argsort(-np.asarray(masks.scores, dtype=np.float64), kind="stable"):
        m = int(m)
        region = stack[m]
        support = region & depth.valid
        if support.sum() < 3:
            result.skipped.append(m)
            continue
        pts = rays[support] * depth.values[support][:, None]
        try:
            if fit == "pca":
                plane = fit_plane_pca(pts)
            else:
                plane = fit_plane_ransac(pts, ransac_threshold, ransac_iterations,
                                         rng_seed + m)
        except DegenerateInputError:
            result.skipped.append(m)
            continue
        result.planes[m] = plane

        target = region & ~claimed
        denom = rays[target] @ plane.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            z = plane.offset / denom
        ok = (np.abs(denom) >= 1e-6) & (z > 0)
        tv, tu = np.nonzero(target)
        values[tv[ok], tu[ok]] = z[ok]
        valid[tv[ok], tu[ok]] = True
        claimed |= region
    result.depth = DepthMap(values, valid)
    return result
