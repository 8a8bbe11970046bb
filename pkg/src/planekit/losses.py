"""Focal, Dice and RMSE losses with gradients, and the weighted total."""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import DegenerateInputError, ShapeMismatchError

PROB_CLAMP = 1e-7
DICE_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 3.0  # dice
    beta: float = 5.0  # rmse
    gamma: float = 1.0  # depth-gradient segmentation
    delta: float = 1.0  # plane surface normal

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValueError(f"weight {f.name} must be >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    focal: float
    dice: float
    rmse: float
    dgs: float
    psn: float
    total: float

    def to_record(self):
        """Flat ``key=value`` text, one entry per line."""
        return "".join(f"{k}={v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_record(cls, text):
        items = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(**{f.name: float(items[f.name]) for f in fields(cls)})


def _focal_terms(probs, targets, alpha_t):
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = np.asarray(targets)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"probs {p.shape} and targets {t.shape} differ")
    pos = t == 1
    pt = np.where(pos, p, 1.0 - p)
    aw = np.where(pos, alpha_t, 1.0 - alpha_t)
    return p, pos, pt, aw


def focal_loss(probs, targets, alpha_t=0.25, gamma_f=2.0):
    _, _, pt, aw = _focal_terms(probs, targets, alpha_t)
    if pt.size == 0:
        return 0.0
    return float(np.mean(-aw * (1.0 - pt) ** gamma_f * np.log(pt)))


def focal_loss_grad(probs, targets, alpha_t=0.25, gamma_f=2.0):
    """Gradient w.r.t. the (clamped) probabilities."""
    _, pos, pt, aw = _focal_terms(probs, targets, alpha_t)
    if pt.size == 0:
        return np.zeros(pt.shape)
    d_pt = aw * (gamma_f * (1.0 - pt) ** (gamma_f - 1.0) * np.log(pt) - (1.0 - pt) ** gamma_f / pt)
    return np.where(pos, d_pt, -d_pt) / pt.size


def _dice_sums(pred_mask, gt_mask):
    p = np.asarray(pred_mask, dtype=np.float64)
    g = np.asarray(gt_mask, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeMismatchError(f"pred mask {p.shape} and gt mask {g.shape} differ")
    return p, g, 2.0 * np.sum(p * g) + DICE_EPS, np.sum(p * p) + np.sum(g * g) + DICE_EPS


def dice_loss(pred_mask, gt_mask):
    _, _, num, den = _dice_sums(pred_mask, gt_mask)
    return float(1.0 - num / den)


def dice_loss_grad(pred_mask, gt_mask):
    p, g, num, den = _dice_sums(pred_mask, gt_mask)
    return -(2.0 * g * den - num * 2.0 * p) / den ** 2


def rmse_loss(pred, gt):
    """RMSE over jointly-valid pixels and its gradient w.r.t. the prediction."""
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred {pred.shape} and gt {gt.shape} differ")
    joint = pred.valid & gt.valid
    n = int(joint.sum())
    if n == 0:
        raise DegenerateInputError("no jointly-valid pixels")
    diff = np.where(joint, pred.filled(0.0) - gt.filled(0.0), 0.0)
    loss = float(np.sqrt(np.sum(diff ** 2) / n))
    grad = diff / (loss * n) if loss > 0 else np.zeros(diff.shape)
    return loss, grad


def total_loss(focal, dice, rmse, dgs, psn, weights=LossWeights()):
    parts = {"focal": focal, "dice": dice, "rmse": rmse, "dgs": dgs, "psn": psn}
    for name, value in parts.items():
        if not (math.isfinite(value) and value >= 0):
            raise ValueError(f"loss component {name}={value} must be finite and >= 0")
    total = (focal + weights.alpha * dice + weights.beta * rmse
             + weights.gamma * dgs + weights.delta * psn)
    return LossBreakdown(**{k: float(v) for k, v in parts.items()}, total=float(total))
