"""Triplet sampling, triplet normals, combined normal maps and the plane surface normal loss.

Planar groups (label >= 1) only reject near-colinear triplets; the
non-planar group (label 0) also requires every pairwise 3D distance to reach
``min_distance``.  Planar triplets are compared against the fitted plane
normal of their ground-truth region, non-planar triplets against the same
pixel triplet lifted through the ground-truth depth.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import DegenerateInputError, ShapeMismatchError
from .geometry import backproject, fit_plane_pca, orient_normals, orientation_sign, point_grid

log = logging.getLogger(__name__)

# rejection sampling draws at most this many candidates per requested triplet
ATTEMPTS_PER_TRIPLET = 100
# cross products at or below this norm are treated as degenerate
CROSS_EPS = 1e-12


@dataclass(frozen=True)
class SamplingConfig:
    triplets_per_group: int = 100
    min_angle: float = 15.0
    min_distance: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        if self.triplets_per_group < 1:
            raise ValueError("triplets_per_group must be >= 1")
        if not 0 < self.min_angle < 90:
            raise ValueError("min_angle must lie in (0, 90) degrees")
        if self.min_distance < 0:
            raise ValueError("min_distance must be >= 0")


@dataclass
class TripletBatch:
    triplets: np.ndarray  # (T, 3) indices into a PointCloud
    group_of: np.ndarray  # (T,)
    normals: np.ndarray = None  # (T, 3) once filled
    shortfall: dict = field(default_factory=dict)  # group -> triplets missing
    skipped_groups: list = field(default_factory=list)  # groups with < 3 points
    dropped: int = 0  # degenerate triplets removed by triplet_normals

    def __len__(self):
        return len(self.triplets)

    @property
    def warning_count(self):
        return len(self.shortfall) + self.dropped


@dataclass
class CombinedNormalMap:
    normals: np.ndarray  # (H, W, 3)
    region_of: np.ndarray  # (H, W) group labels
    valid: np.ndarray  # (H, W)
    planes: dict = field(default_factory=dict)  # planar label -> Plane3D


def triplet_mask(a, b, c, min_angle, min_distance=None):
    """Vectorised restriction predicate over (T, 3) point arrays."""
    ab, ac = b - a, c - a
    lab = np.linalg.norm(ab, axis=-1)
    lac = np.linalg.norm(ac, axis=-1)
    nonzero = (lab > 0) & (lac > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.sum(ab * ac, axis=-1) / (lab * lac)
    angle = np.degrees(np.arccos(np.clip(np.nan_to_num(cos), -1.0, 1.0)))
    ok = nonzero & (angle >= min_angle) & (angle <= 180.0 - min_angle)
    if min_distance is not None:
        lbc = np.linalg.norm(c - b, axis=-1)
        ok &= (lab >= min_distance) & (lac >= min_distance) & (lbc >= min_distance)
    return ok


def sample_triplets(cloud, cfg):
    """K restricted triplets per group; each group draws from its own (seed, label) stream."""
    k = cfg.triplets_per_group
    out_idx, out_group = [], []
    batch = TripletBatch(np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64))
    for label in np.unique(cloud.group_of):
        label = int(label)
        members = cloud.group(label)
        if len(members) < 3:
            batch.skipped_groups.append(label)
            continue
        rng = np.random.default_rng([cfg.rng_seed, label])
        cand = rng.integers(0, len(members), size=(ATTEMPTS_PER_TRIPLET * k, 3))
        distinct = (cand[:, 0] != cand[:, 1]) & (cand[:, 0] != cand[:, 2]) & (cand[:, 1] != cand[:, 2])
        idx = members[cand]
        pts = cloud.points[idx]
        min_distance = cfg.min_distance if label == 0 else None
        accept = distinct & triplet_mask(pts[:, 0], pts[:, 1], pts[:, 2], cfg.min_angle, min_distance)
        chosen = np.flatnonzero(accept)[:k]
        if len(chosen) < k:
            batch.shortfall[label] = k - len(chosen)
            log.warning("group %d: %d of %d triplets accepted", label, len(chosen), k)
        out_idx.append(idx[chosen])
        out_group.append(np.full(len(chosen), label, dtype=np.int64))
    if out_idx:
        batch.triplets = np.concatenate(out_idx)
        batch.group_of = np.concatenate(out_group)
    return batch


def _cross_normals(a, b, c):
    cross = np.cross(b - a, c - a)
    norm = np.linalg.norm(cross, axis=-1)
    good = norm > CROSS_EPS
    normals = np.zeros_like(cross)
    normals[good] = orient_normals(cross[good] / norm[good, None])
    return normals, good


def triplet_normals(cloud, batch):
    """Unit camera-facing normals of each triplet; degenerate triplets are dropped."""
    p = cloud.points[batch.triplets]
    normals, good = _cross_normals(p[:, 0], p[:, 1], p[:, 2]) if len(batch) else (
        np.zeros((0, 3)), np.zeros(0, dtype=bool))
    dropped = int((~good).sum())
    if dropped:
        log.warning("dropped %d degenerate triplets", dropped)
    return replace(batch, triplets=batch.triplets[good], group_of=batch.group_of[good],
                   normals=normals[good], dropped=batch.dropped + dropped)


def _local_normals(pts, usable, window):
    count, first, second = kernels.window_moments(np.nan_to_num(pts), usable, window)
    n = np.maximum(count, 1)[..., None]
    mean = first / n
    s = second / n
    cov = np.empty(count.shape + (3, 3))
    pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    for slot, (i, j) in enumerate(pairs):
        cov[..., i, j] = cov[..., j, i] = s[..., slot] - mean[..., i] * mean[..., j]
    ok = usable & (count >= 3)
    normals = np.zeros(count.shape + (3,))
    if ok.any():
        evals, evecs = np.linalg.eigh(cov[ok])
        nondegenerate = evals[:, 1] > 1e-12 * evals[:, 2]
        local = orient_normals(evecs[:, :, 0])
        ok_idx = np.flatnonzero(ok.ravel())
        ok.ravel()[ok_idx[~nondegenerate]] = False
        normals.reshape(-1, 3)[ok_idx[nondegenerate]] = local[nondegenerate]
    return normals, ok


def combined_normal_map(gt_depth, gt_seg, cam, window=3):
    """Plane-model normals on planar regions, windowed least-squares normals elsewhere.

    Local normals only use non-planar neighbours, so they do not blend across
    a plane boundary.
    """
    seg = np.asarray(gt_seg).astype(np.int64)
    if seg.shape != gt_depth.shape:
        raise ShapeMismatchError(f"segmentation {seg.shape} does not match depth {gt_depth.shape}")
    h, w = seg.shape
    normals = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    planes = {}
    cloud = backproject(gt_depth, cam, seg)
    for label in np.unique(seg):
        label = int(label)
        if label <= 0:
            continue
        pts = cloud.points[cloud.group_of == label]
        try:
            plane = fit_plane_pca(pts)
        except DegenerateInputError:
            log.warning("planar region %d has no usable plane fit", label)
            continue
        planes[label] = plane
        region = seg == label
        normals[region] = plane.normal
        valid[region] = True

    pts = point_grid(gt_depth, cam)
    usable = gt_depth.valid & (seg <= 0)
    local, ok = _local_normals(pts, usable, window)
    normals[ok] = local[ok]
    valid[ok] = True
    return CombinedNormalMap(normals, seg, valid, planes)


@dataclass
class PsnSample:
    """A frozen triplet sample: pixel triplets and their target normals."""

    pixels: np.ndarray  # (T, 3, 2) integer (u, v)
    targets: np.ndarray  # (T, 3)
    group_of: np.ndarray  # (T,)
    dropped: int = 0


def prepare_psn_sample(pred_depth, gt_depth, gt_seg, cam, cfg, window=3, cnm=None):
    """Sample triplets on the predicted cloud and attach their target normals."""
    seg = np.asarray(gt_seg).astype(np.int64)
    if not (pred_depth.shape == gt_depth.shape == seg.shape):
        raise ShapeMismatchError(
            f"pred {pred_depth.shape}, gt {gt_depth.shape} and seg {seg.shape} must match"
        )
    cloud = backproject(pred_depth, cam, seg)
    batch = triplet_normals(cloud, sample_triplets(cloud, cfg))
    pixels = cloud.pixel_of[batch.triplets]
    if cnm is None:
        cnm = combined_normal_map(gt_depth, seg, cam, window)

    targets = np.zeros((len(batch), 3))
    keep = np.zeros(len(batch), dtype=bool)
    planar = batch.group_of >= 1
    if planar.any():
        u, v = pixels[planar, 0, 0], pixels[planar, 0, 1]
        targets[planar] = cnm.normals[v, u]
        keep[planar] = cnm.valid[v, u]
    rest = np.flatnonzero(~planar)
    if len(rest):
        u, v = pixels[rest, :, 0], pixels[rest, :, 1]
        gt_ok = gt_depth.valid[v, u].all(axis=1)
        p = cam.rays()[v, u] * gt_depth.filled(1.0)[v, u][..., None]
        n, good = _cross_normals(p[:, 0], p[:, 1], p[:, 2])
        targets[rest] = n
        keep[rest] = gt_ok & good
    dropped = int((~keep).sum())
    if not keep.any():
        raise DegenerateInputError("no triplet survived sampling and target lookup")
    return PsnSample(pixels[keep], targets[keep], batch.group_of[keep], batch.dropped + dropped)


def _sample_points(pred_depth, sample, cam):
    u, v = sample.pixels[..., 0], sample.pixels[..., 1]
    rays = cam.rays()[v, u]
    return rays * pred_depth.values[v, u][..., None], rays


def psn_loss_from_sample(pred_depth, sample, cam):
    p, _ = _sample_points(pred_depth, sample, cam)
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    n = orient_normals(cross / np.linalg.norm(cross, axis=-1, keepdims=True))
    return float(np.mean(1.0 - np.sum(n * sample.targets, axis=-1)))


def psn_orientation_signs(pred_depth, sample, cam):
    """Per-triplet flip (+1/-1) applied by the camera-facing rule; the loss jumps where it changes."""
    p, _ = _sample_points(pred_depth, sample, cam)
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return orientation_sign(cross / np.linalg.norm(cross, axis=-1, keepdims=True))


def psn_grad_from_sample(pred_depth, sample, cam):
    """Gradient of :func:`psn_loss_from_sample` w.r.t. every predicted depth pixel."""
    p, rays = _sample_points(pred_depth, sample, cam)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    cross = np.cross(e1, e2)
    norm = np.linalg.norm(cross, axis=-1, keepdims=True)
    unit = cross / norm
    s = orientation_sign(unit)[:, None]
    t = sample.targets
    # d/dc of -(s c.t / |c|), averaged over triplets
    g = -s * (t - np.sum(unit * t, axis=-1, keepdims=True) * unit) / norm / len(t)
    d_b = np.cross(e2, g)
    d_c = np.cross(g, e1)
    d_points = np.stack([-(d_b + d_c), d_b, d_c], axis=1)
    d_z = np.sum(d_points * rays, axis=-1)
    grad = np.zeros(pred_depth.shape)
    np.add.at(grad, (sample.pixels[..., 1].ravel(), sample.pixels[..., 0].ravel()), d_z.ravel())
    return grad


def psn_loss(pred_depth, gt_depth, gt_seg, cam, cfg, window=3):
    sample = prepare_psn_sample(pred_depth, gt_depth, gt_seg, cam, cfg, window)
    return psn_loss_from_sample(pred_depth, sample, cam)


def psn_loss_grad(pred_depth, gt_depth, gt_seg, cam, cfg, window=3):
    sample = prepare_psn_sample(pred_depth, gt_depth, gt_seg, cam, cfg, window)
    return psn_grad_from_sample(pred_depth, sample, cam)
