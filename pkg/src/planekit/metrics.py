"""Depth metrics, class-agnostic COCO-style AP, and the iBims PE / DBE / DDE families."""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, ShapeMismatchError
from .geometry import angle_between, backproject, fit_plane_pca
from .gradient import gradient_map
from .masks import boxes_from_masks

IOU_THRESHOLDS = np.linspace(0.5, 0.95, 10)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class DepthMetrics:
    rel: float
    log10: float
    rms: float
    sigma1: float
    sigma2: float
    sigma3: float

    def as_dict(self):
        return asdict(self)


def _joint(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred {pred.shape} and gt {gt.shape} differ")
    joint = pred.valid & gt.valid
    if not joint.any():
        raise DegenerateInputError("no jointly-valid pixels")
    return pred.values[joint], gt.values[joint]


def depth_metrics(pred, gt):
    p, g = _joint(pred, gt)
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        rel=float(np.mean(np.abs(p - g) / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        rms=float(np.sqrt(np.mean((p - g) ** 2))),
        sigma1=float(np.mean(ratio < 1.25)),
        sigma2=float(np.mean(ratio < 1.25 ** 2)),
        sigma3=float(np.mean(ratio < 1.25 ** 3)),
    )


# -- average precision -------------------------------------------------------

def mask_iou(dets, gts):
    """(D, G) IoU matrix of binary mask stacks."""
    dets, gts = np.asarray(dets, dtype=bool), np.asarray(gts, dtype=bool)
    npx = int(np.prod(dets.shape[1:] if dets.ndim == 3 else gts.shape[1:]))
    d = dets.reshape(len(dets), npx).astype(np.float64)
    g = gts.reshape(len(gts), npx).astype(np.float64)
    inter = d @ g.T
    union = d.sum(1)[:, None] + g.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def box_iou(dets, gts):
    """(D, G) IoU matrix of [x0, y0, x1, y1] boxes."""
    d = np.asarray(dets, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    iw = np.clip(np.minimum(d[:, None, 2], g[None, :, 2]) - np.maximum(d[:, None, 0], g[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(d[:, None, 3], g[None, :, 3]) - np.maximum(d[:, None, 1], g[None, :, 1]), 0, None)
    inter = iw * ih
    area = lambda b: (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])  # noqa: E731
    union = area(d)[:, None] + area(g)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def greedy_assign(ious, threshold):
    """COCO matching of score-sorted detections: matched gt index per detection, or -1."""
    n_det, n_gt = ious.shape
    taken = np.zeros(n_gt, dtype=bool)
    match = np.full(n_det, -1)
    for d in range(n_det):
        best, m = min(threshold, 1 - 1e-10), -1
        for g in range(n_gt):
            if taken[g] or ious[d, g] < best:
                continue
            best, m = ious[d, g], g
        if m >= 0:
            taken[m] = True
            match[d] = m
    return match


def greedy_match(ious, threshold):
    """Per-detection TP flags under :func:`greedy_assign`."""
    return greedy_assign(ious, threshold) >= 0


def interpolated_precision(tp_sorted, n_gt):
    """101-point interpolated precision for globally score-sorted TP flags."""
    q = np.zeros(len(RECALL_THRESHOLDS))
    if len(tp_sorted) == 0:
        return q
    tp = np.cumsum(tp_sorted, dtype=np.float64)
    fp = np.cumsum(~tp_sorted, dtype=np.float64)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
    inside = idx < len(precision)
    q[inside] = precision[idx[inside]]
    return q


@dataclass
class APResult:
    ap: float
    ap50: float
    ap75: float
    per_threshold: dict = field(default_factory=dict)
    n_gt: int = 0
    n_det: int = 0


def _gt_stack(gt):
    gt = np.asarray(gt)
    if gt.ndim == 2:  # instance-id grid
        n = int(gt.max()) if gt.size else 0
        return np.stack([gt == i for i in range(1, n + 1)]) if n else np.zeros((0,) + gt.shape, bool)
    return gt.astype(bool)


def average_precision(preds, gts, mode="mask", iou_thresholds=IOU_THRESHOLDS, max_dets=100,
                      mask_threshold=0.5):
    """Class-agnostic AP over a dataset.

    ``preds`` is one InstanceMaskSet per image; ``gts`` is one binary G x H x W
    stack (or instance-id grid) per image.  With no ground truth at all the
    AP fields are NaN and ``n_gt`` is 0.
    """
    if mode not in ("mask", "box"):
        raise ValueError(f"mode must be 'mask' or 'box', got {mode!r}")
    if len(preds) != len(gts):
        raise ShapeMismatchError(f"{len(preds)} prediction sets for {len(gts)} images")
    thresholds = np.asarray(iou_thresholds, dtype=np.float64)
    scores, flags = [], []
    n_gt = 0
    for pred, gt in zip(preds, gts):
        gt = _gt_stack(gt)
        n_gt += len(gt)
        order = np.argsort(-pred.scores, kind="mergesort")[:max_dets]
        if mode == "mask":
            ious = mask_iou(pred.binarized(mask_threshold)[order], gt)
        else:
            ious = box_iou(pred.boxes[order], boxes_from_masks(gt))
        scores.append(pred.scores[order])
        flags.append(np.stack([greedy_match(ious, t) for t in thresholds], axis=0)
                     if len(order) else np.zeros((len(thresholds), 0), dtype=bool))
    scores = np.concatenate(scores) if scores else np.zeros(0)
    flags = np.concatenate(flags, axis=1) if flags else np.zeros((len(thresholds), 0), dtype=bool)
    if n_gt == 0:
        nan = float("nan")
        return APResult(nan, nan, nan, {}, 0, len(scores))
    order = np.argsort(-scores, kind="mergesort")
    per = {round(float(t), 2): float(interpolated_precision(flags[i, order], n_gt).mean())
           for i, t in enumerate(thresholds)}
    return APResult(float(np.mean(list(per.values()))), per.get(0.5, float("nan")),
                    per.get(0.75, float("nan")), per, n_gt, len(scores))


@dataclass(frozen=True)
class SegMetrics:
    ap_mask: float
    ap_mask50: float
    ap_mask75: float
    ap_box: float
    ap_box50: float
    ap_box75: float

    def as_dict(self):
        return asdict(self)


def segmentation_metrics(preds, gts, **kw):
    m = average_precision(preds, gts, "mask", **kw)
    b = average_precision(preds, gts, "box", **kw)
    return SegMetrics(m.ap, m.ap50, m.ap75, b.ap, b.ap50, b.ap75)


# -- iBims families ------------------------------------------------------------

@dataclass
class IbimsMetrics:
    pe_plan: float = None
    pe_orie: float = None
    dbe_acc: float = None
    dbe_comp: float = None
    dde_0: float = None
    dde_minus: float = None
    dde_plus: float = None

    def as_dict(self):
        return asdict(self)


def ibims_pe(pred, gt_regions, gt_planes, cam):
    """Planarity errors: mean RMS distance to the fitted plane (cm) and mean normal angle (deg).

    ``gt_planes`` maps region label to Plane3D (a list is taken as labels
    1..N).  Returns ``(pe_plan, pe_orie, n_skipped)``; both errors are None
    when no region could be fitted.
    """
    if not isinstance(gt_planes, dict):
        gt_planes = {i + 1: p for i, p in enumerate(gt_planes)}
    regions = np.asarray(gt_regions)
    cloud = backproject(pred, cam, regions)
    plan, orie, skipped = [], [], 0
    for label in sorted(gt_planes):
        pts = cloud.points[cloud.group_of == label]
        try:
            plane = fit_plane_pca(pts)
        except DegenerateInputError:
            skipped += 1
            continue
        plan.append(plane.rms_residual * 100.0)
        orie.append(math.degrees(float(angle_between(plane.normal, gt_planes[label].normal,
                                                     unsigned=True))))
    if not plan:
        return None, None, skipped
    return float(np.mean(plan)), float(np.mean(orie)), skipped


def depth_edges(depth, threshold=0.05):
    g = gradient_map(depth)
    return g.valid & (g.values > threshold)


def boundary_errors(pred_edges, gt_edges, max_distance=10.0):
    """Truncated chamfer accuracy and completeness between two edge maps (px).

    Returns None when there are no ground-truth edges.
    """
    pred_edges = np.asarray(pred_edges, dtype=bool)
    gt_edges = np.asarray(gt_edges, dtype=bool)
    if pred_edges.shape != gt_edges.shape:
        raise ShapeMismatchError(f"edge maps {pred_edges.shape} and {gt_edges.shape} differ")
    if not gt_edges.any():
        return None
    if not pred_edges.any():
        return 0.0, float(max_distance)
    to_gt = np.minimum(ndimage.distance_transform_edt(~gt_edges), max_distance)
    to_pred = np.minimum(ndimage.distance_transform_edt(~pred_edges), max_distance)
    return float(to_gt[pred_edges].mean()), float(to_pred[gt_edges].mean())


def ibims_dbe(pred, gt_edges, threshold=0.05, max_distance=10.0):
    return boundary_errors(depth_edges(pred, threshold), gt_edges, max_distance)


def ibims_dde(pred, gt, plane_distance=3.0):
    """Percentages (same side, predicted nearer, predicted farther) of the plane z = plane_distance."""
    p, g = _joint(pred, gt)
    p_front, g_front = p < plane_distance, g < plane_distance
    n = len(p)
    minus = 100.0 * np.count_nonzero(p_front & ~g_front) / n
    plus = 100.0 * np.count_nonzero(~p_front & g_front) / n
    same = 100.0 * np.count_nonzero(p_front == g_front) / n
    return float(same), float(minus), float(plus)


# -- reports -------------------------------------------------------------------

def mean_rows(rows, keys):
    """Per-key mean over rows, skipping None / NaN entries."""
    out = {}
    for k in keys:
        vals = [r[k] for r in rows if r.get(k) is not None and not _isnan(r[k])]
        out[k] = float(np.mean(vals)) if vals else None
    return out


def _isnan(v):
    return isinstance(v, float) and math.isnan(v)


def _fmt(v):
    if v is None:
        return "absent"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


@dataclass
class MetricsReport:
    name: str
    values: dict
    rows: list = field(default_factory=list)

    def to_text(self):
        width = max((len(k) for k in self.values), default=0)
        lines = [f"# {self.name}"] + [f"{k:<{width}}  {_fmt(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    def to_json(self):
        def clean(v):
            return None if _isnan(v) else v
        payload = {"name": self.name,
                   "metrics": {k: clean(v) for k, v in self.values.items()},
                   "images": [{k: clean(v) for k, v in r.items()} for r in self.rows]}
        return json.dumps(payload, indent=2, sort_keys=False) + "\n"

    def to_csv(self):
        if not self.rows:
            return ""
        keys = list(self.rows[0])
        lines = [",".join(keys)] + [",".join(_fmt(r.get(k)) for k in keys) for r in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem=None, per_image=True):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        (out / f"{stem}.txt").write_text(self.to_text())
        (out / f"{stem}.json").write_text(self.to_json())
        if per_image and self.rows:
            (out / f"{stem}_images.csv").write_text(self.to_csv())
        return out / f"{stem}.json"
