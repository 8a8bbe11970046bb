"""Per-image work items behind the CLI subcommands.

Every function here is a pure function of its arguments (seeds included) so
the CLI can fan work out to a process pool and fold results in manifest
order.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import io
from .errors import DegenerateInputError
from .geometry import (CameraIntrinsics, DepthMap, Plane3D, angle_between, backproject,
                       fit_plane_pca, fit_plane_ransac, render_planar_depth)
from .gradient import dgs_loss, dgs_loss_grad, gradient_map
from .losses import dice_loss, focal_loss, rmse_loss, total_loss
from .masks import InstanceMaskSet
from .metrics import (depth_edges, depth_metrics, greedy_assign, ibims_dbe, ibims_dde, ibims_pe,
                      mask_iou)
from .normals import (prepare_psn_sample, psn_grad_from_sample, psn_loss_from_sample,
                      psn_orientation_signs)
from .synth import RoomSpec, generate_plane_scene, generate_scene

log = logging.getLogger(__name__)


def image_seed(seed, index):
    """Schedule-independent per-image seed."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def run_pool(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@dataclass
class Sample:
    id: str
    pred: DepthMap
    gt: DepthMap
    seg: np.ndarray
    cam: CameraIntrinsics
    meta: dict
    pred_masks: InstanceMaskSet

    @property
    def gt_planes(self):
        planes = self.meta.get("planes") or {}
        return {int(k): Plane3D.from_dict(v) for k, v in planes.items()}


def load_sample(entry):
    seg, _ = io.read_instance_masks(entry.seg_path)
    if entry.pred_seg_path:
        pred_masks = io.load_mask_set(entry.pred_seg_path)
    else:
        pred_masks = InstanceMaskSet.from_id_grid(seg)
    return Sample(entry.id, io.read_depth(entry.depth_path), io.read_depth(entry.gt_depth_path),
                  seg, CameraIntrinsics.from_dict(io.read_json(entry.intrinsics_path)),
                  io.read_json(entry.meta_path), pred_masks)


# -- synth -------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthJob:
    index: int
    seed: int
    out: str
    width: int = 64
    height: int = 48
    focal: float = None
    layout: str = "room"
    extra_planes: int = 2
    sphere: bool = True
    noise: float = 0.0
    pred_noise: float = 0.01
    score_mode: str = "random"
    depth_format: str = "png"


def synth_one(job):
    rng = np.random.default_rng(image_seed(job.seed, job.index))
    cam = CameraIntrinsics.centered(job.width, job.height, job.focal)
    if job.layout == "plane":
        scene = generate_plane_scene(cam, distance=float(rng.uniform(1.5, 3.0)),
                                     noise_sigma=job.noise, rng_seed=int(rng.integers(2 ** 31)))
    else:
        size = (4.0, 3.0, 5.0)
        spec = RoomSpec(size=size,
                        camera_position=(rng.uniform(1.2, 2.8), rng.uniform(0.9, 2.1), rng.uniform(0.5, 1.5)),
                        yaw=float(rng.uniform(-25, 25)), pitch=float(rng.uniform(-12, 12)),
                        extra_planes=job.extra_planes, sphere=job.sphere, noise_sigma=job.noise,
                        rng_seed=int(rng.integers(2 ** 31)))
        scene = generate_scene(spec, cam)

    pred = scene.depth.values
    if job.pred_noise > 0:
        pred = np.maximum(pred + rng.normal(0.0, job.pred_noise, pred.shape), 1e-3)
    pred = DepthMap(pred, scene.depth.valid)
    n = len(scene.planes)
    scores = np.ones(n) if job.score_mode == "one" else np.round(rng.uniform(0.5, 1.0, n), 4)

    out = Path(job.out)
    sid = f"{job.index:04d}"
    ext = "." + job.depth_format
    paths = {
        "depth_path": f"pred/{sid}{ext}", "gt_depth_path": f"gt/{sid}{ext}",
        "seg_path": f"seg/{sid}.png", "pred_seg_path": f"pred_seg/{sid}.png",
        "meta_path": f"meta/{sid}.json", "intrinsics_path": f"intrinsics/{sid}.json",
    }
    for rel in paths.values():
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
    io.write_depth(out / paths["depth_path"], pred)
    io.write_depth(out / paths["gt_depth_path"], scene.depth)
    io.write_instance_masks(out / paths["seg_path"], scene.seg)
    io.write_instance_masks(out / paths["pred_seg_path"], scene.seg, scores=scores)
    io.write_json(out / paths["meta_path"], {
        "planes": {str(i + 1): p.to_dict() for i, p in enumerate(scene.planes)},
        "extents": scene.extents,
        "sphere": None if scene.sphere is None else
        {"centre": [float(c) for c in scene.sphere[0]], "radius": float(scene.sphere[1])},
        "noise_sigma": job.noise,
    })
    io.write_json(out / paths["intrinsics_path"], cam.to_dict())
    return io.ManifestEntry(id=sid, **paths)


# -- losses ------------------------------------------------------------------------

def _relative_error(a, b, floor=1e-12):
    return abs(a - b) / max(abs(a), abs(b), floor)


def match_instances(pred_masks, seg, iou_threshold, mask_threshold=0.5):
    """Greedy score-ordered matching of predictions to ground-truth instances."""
    n_gt = int(seg.max(initial=0))
    gts = np.stack([seg == i for i in range(1, n_gt + 1)]) if n_gt else np.zeros((0,) + seg.shape, bool)
    order = np.argsort(-pred_masks.scores, kind="mergesort")
    ious = mask_iou(pred_masks.binarized(mask_threshold)[order], gts)
    match = greedy_assign(ious, iou_threshold) if len(order) else np.zeros(0, int)
    pairs = [(int(d), int(g)) for d, g in zip(order, match) if g >= 0]
    targets = np.zeros(len(pred_masks), dtype=np.int64)
    for d, _ in pairs:
        targets[d] = 1
    return gts, targets, pairs


def compute_losses(sample, cfg, seed, grad_checks=None):
    """LossBreakdown and finite-difference checks of the three analytic gradients."""
    gts, targets, pairs = match_instances(sample.pred_masks, sample.seg, cfg.match_iou,
                                          cfg.mask_threshold)
    focal = focal_loss(sample.pred_masks.scores, targets, cfg.focal_alpha, cfg.focal_gamma)
    matched = dict((g, d) for d, g in pairs)
    dice = (float(np.mean([dice_loss(sample.pred_masks.masks[matched[g]], gts[g]) if g in matched else 1.0
                           for g in range(len(gts))])) if len(gts) else 0.0)
    rmse, rmse_grad = rmse_loss(sample.pred, sample.gt)
    grad_map = gradient_map(sample.gt)
    dgs = dgs_loss(grad_map, sample.pred_masks)
    psn_sample = prepare_psn_sample(sample.pred, sample.gt, sample.seg, sample.cam,
                                    cfg.sampling(seed), cfg.normal_window)
    psn = psn_loss_from_sample(sample.pred, psn_sample, sample.cam)
    breakdown = total_loss(focal, dice, rmse, dgs, max(psn, 0.0), cfg.weights())

    n = cfg.grad_checks if grad_checks is None else grad_checks
    checks = {}
    if n > 0:
        rng = np.random.default_rng(image_seed(seed, 1_000_003))
        h = cfg.grad_step
        # DGS: mask entries
        stack = sample.pred_masks.masks
        if len(stack):
            g = dgs_loss_grad(grad_map, stack)
            errs = []
            for _ in range(n):
                j, v, u = rng.integers(len(stack)), rng.integers(stack.shape[1]), rng.integers(stack.shape[2])
                plus, minus = stack.copy(), stack.copy()
                plus[j, v, u] += h
                minus[j, v, u] -= h
                fd = (dgs_loss(grad_map, plus) - dgs_loss(grad_map, minus)) / (2 * h)
                errs.append(_relative_error(g[j, v, u], fd))
            checks["dgs"] = max(errs)
        # RMSE: jointly-valid depth pixels
        joint = np.argwhere(sample.pred.valid & sample.gt.valid)
        errs = []
        for v, u in joint[rng.choice(len(joint), min(n, len(joint)), replace=False)]:
            fd = _fd_depth(lambda d: rmse_loss(d, sample.gt)[0], sample.pred, v, u, h)
            errs.append(_relative_error(rmse_grad[v, u], fd))
        checks["rmse"] = max(errs) if errs else 0.0
        # PSN: pixels touched by the frozen sample.  The camera-facing flip makes the loss
        # jump where a triplet normal crosses z = 0; coordinates whose stencil straddles
        # such a flip have no finite-difference derivative and are passed over.
        g = psn_grad_from_sample(sample.pred, psn_sample, sample.cam)
        touched = np.unique(psn_sample.pixels.reshape(-1, 2), axis=0)
        errs, straddling = [], 0
        for u, v in touched[rng.permutation(len(touched))]:
            if len(errs) == n:
                break
            if not _psn_stencil_smooth(sample.pred, psn_sample, sample.cam, v, u, h):
                straddling += 1
                continue
            fd = _fd_depth(lambda d: psn_loss_from_sample(d, psn_sample, sample.cam), sample.pred, v, u, h)
            errs.append(_relative_error(g[v, u], fd, floor=1e-9))
        if straddling:
            log.info("%s: %d PSN check pixels straddle an orientation flip", sample.id, straddling)
        checks["psn"] = max(errs) if errs else 0.0
    return breakdown, checks


def _psn_stencil_smooth(depth, psn_sample, cam, v, u, h):
    base = psn_orientation_signs(depth, psn_sample, cam)
    for step in (-2 * h, -h, h, 2 * h):
        values = depth.values.copy()
        values[v, u] += step
        if not np.array_equal(psn_orientation_signs(DepthMap(values, depth.valid), psn_sample, cam), base):
            return False
    return True


def _fd_depth(fn, depth, v, u, h):
    """Five-point central difference of fn at one depth pixel (fourth-order in h)."""
    def at(step):
        values = depth.values.copy()
        values[v, u] += step
        return fn(DepthMap(values, depth.valid))
    return (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h)


# -- plane fitting and rendering ------------------------------------------------------

def fit_planes_one(args):
    entry, cfg, seed, use_pred = args
    s = load_sample(entry)
    gt_planes = s.gt_planes
    masks = s.pred_masks if use_pred else InstanceMaskSet.from_id_grid(s.seg)
    cloud_pts = s.cam.rays() * s.pred.values[..., None]
    rows = []
    for i, region in enumerate(masks.binarized(cfg.mask_threshold)):
        support = region & s.pred.valid
        label = i + 1
        for method in ("pca", "ransac"):
            row = {"id": s.id, "instance": label, "method": method, "points": int(support.sum())}
            try:
                pts = cloud_pts[support]
                plane = (fit_plane_pca(pts) if method == "pca" else
                         fit_plane_ransac(pts, cfg.ransac_threshold, cfg.ransac_iterations,
                                          image_seed(seed, label)))
            except DegenerateInputError as exc:
                row.update(status=f"skipped: {exc}")
                rows.append(row)
                continue
            row.update(status="ok", nx=float(plane.normal[0]), ny=float(plane.normal[1]),
                       nz=float(plane.normal[2]), offset=plane.offset,
                       inliers=plane.inlier_count, rms_residual=plane.rms_residual)
            if not use_pred and label in gt_planes:
                row["angle_to_gt_deg"] = float(np.degrees(angle_between(
                    plane.normal, gt_planes[label].normal, unsigned=True)))
            rows.append(row)
    return rows


def render_one(args):
    entry, cfg, seed, out, depth_format = args
    s = load_sample(entry)
    result = render_planar_depth(s.pred, s.pred_masks, s.cam, fit=cfg.fit_method,
                                 mask_threshold=cfg.mask_threshold,
                                 ransac_threshold=cfg.ransac_threshold,
                                 ransac_iterations=cfg.ransac_iterations,
                                 rng_seed=image_seed(seed, 0))
    path = Path(out) / "rendered" / f"{s.id}.{depth_format}"
    path.parent.mkdir(parents=True, exist_ok=True)
    io.write_depth(path, result.depth)
    info = {"id": s.id, "planes": len(result.planes), "skipped": list(map(int, result.skipped))}
    return replace(entry, depth_path=str(path.resolve())), info


# -- evaluation -------------------------------------------------------------------------

def eval_depth_one(entry):
    s = load_sample(entry)
    return {"id": s.id, **depth_metrics(s.pred, s.gt).as_dict()}


def load_seg_pair(entry):
    s = load_sample(entry)
    return s.pred_masks, s.seg


def eval_ibims_one(args):
    entry, cfg = args
    s = load_sample(entry)
    planes = s.gt_planes
    if not planes:
        cloud = backproject(s.gt, s.cam, s.seg)
        for label in np.unique(s.seg[s.seg > 0]):
            try:
                planes[int(label)] = fit_plane_pca(cloud.points[cloud.group_of == label])
            except DegenerateInputError:
                pass
    pe_plan, pe_orie, skipped = ibims_pe(s.pred, s.seg, planes, s.cam)
    dbe = ibims_dbe(s.pred, depth_edges(s.gt, cfg.dbe_threshold), cfg.dbe_threshold,
                    cfg.dbe_max_distance)
    dde = ibims_dde(s.pred, s.gt, cfg.dde_plane_distance)
    return {"id": s.id, "pe_plan": pe_plan, "pe_orie": pe_orie, "pe_skipped": skipped,
            "dbe_acc": None if dbe is None else dbe[0], "dbe_comp": None if dbe is None else dbe[1],
            "dde_0": dde[0], "dde_minus": dde[1], "dde_plus": dde[2]}
