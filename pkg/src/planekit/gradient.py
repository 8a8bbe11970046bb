"""Depth-normalized Sobel gradient maps and the depth-gradient segmentation loss.

The loss penalizes mask candidates for covering occlusion boundaries of the
ground-truth depth: with ``G = (Gx^2 + Gy^2) / D^2`` it is the mean over
candidates of the mean over valid pixels of ``G * P_j``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


@dataclass
class GradientMap:
    values: np.ndarray
    valid: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def stencil_valid(valid):
    """True where the whole replicate-padded 3x3 neighbourhood is valid."""
    padded = np.pad(np.asarray(valid, dtype=bool), 1, mode="edge")
    h, w = valid.shape
    ok = np.ones((h, w), dtype=bool)
    for a in range(3):
        for b in range(3):
            ok &= padded[a:a + h, b:b + w]
    return ok


def sobel_gradients(depth):
    """(Gx, Gy, valid) with edge-replicate padding and stencil validity.

    Evaluated in separable form (central difference, then [1, 2, 1]
    smoothing) so a constant neighbourhood gives exactly zero.
    """
    h, w = depth.shape
    if h < 3 or w < 3:
        raise ShapeMismatchError(f"Sobel needs at least a 3x3 image, got {h}x{w}")
    p = np.pad(depth.filled(0.0), 1, mode="edge")
    dx = p[:, 2:] - p[:, :-2]
    dy = p[2:, :] - p[:-2, :]
    gx = dx[:-2] + 2.0 * dx[1:-1] + dx[2:]
    gy = dy[:, :-2] + 2.0 * dy[:, 1:-1] + dy[:, 2:]
    valid = stencil_valid(depth.valid)
    return np.where(valid, gx, 0.0), np.where(valid, gy, 0.0), valid


def gradient_map(depth):
    gx, gy, valid = sobel_gradients(depth)
    z = depth.filled(1.0)
    values = np.where(valid, (gx ** 2 + gy ** 2) / z ** 2, 0.0)
    return GradientMap(values, valid)


def _stack(masks):
    return masks.masks if hasattr(masks, "masks") else np.asarray(masks, dtype=np.float64)


def _check(gradient, stack):
    if stack.ndim != 3 or stack.shape[1:] != gradient.shape:
        raise ShapeMismatchError(
            f"mask stack {stack.shape} does not match gradient map {gradient.shape}"
        )


def dgs_loss(gradient, masks):
    """Per-image depth-gradient segmentation loss (0 for an empty stack)."""
    stack = _stack(masks)
    _check(gradient, stack)
    n_valid = int(gradient.valid.sum())
    if len(stack) == 0 or n_valid == 0:
        return 0.0
    g = np.where(gradient.valid, gradient.values, 0.0)
    per_mask = np.tensordot(stack, g, axes=([1, 2], [0, 1])) / n_valid
    return float(per_mask.mean())


def dgs_loss_grad(gradient, masks):
    """d(dgs_loss)/d(mask entries), an M x H x W stack."""
    stack = _stack(masks)
    _check(gradient, stack)
    n_valid = int(gradient.valid.sum())
    out = np.zeros(stack.shape)
    if len(stack) == 0 or n_valid == 0:
        return out
    out[:] = np.where(gradient.valid, gradient.values, 0.0) / (len(stack) * n_valid)
    return out
