"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def conv3x3_replicate(x, k):
    """3x3 cross-correlation over channels with edge-replicate padding."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    cin, h, w = x.shape
    if k.shape[1:] != (cin, 3, 3):
        raise ValueError(f"kernel shape {k.shape[:4]} does not match {cin} input channels")
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros((k.shape[0], h, w))
    for a in range(3):
        for b in range(3):
            out += np.einsum("oc,chw->ohw", k[:, :, a, b], padded[:, a:a + h, b:b + w])
    return out


def window_moments(points, valid, window):
    """Neighbourhood moments of ``points[q] - points[p]`` over valid q.

    Same contract as the compiled kernel: returns count (H, W), first
    moments (H, W, 3) and second moments (H, W, 6) ordered xx, xy, xz,
    yy, yz, zz.
    """
    points = np.asarray(points, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    h, w = valid.shape
    count = np.zeros((h, w), dtype=np.int64)
    first = np.zeros((h, w, 3))
    second = np.zeros((h, w, 6))
    pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    for di in range(-window, window + 1):
        for dj in range(-window, window + 1):
            # centre slice [i0:i1, j0:j1] sees neighbours shifted by (di, dj)
            i0, i1 = max(0, -di), min(h, h - di)
            j0, j1 = max(0, -dj), min(w, w - dj)
            if i0 >= i1 or j0 >= j1:
                continue
            centre = points[i0:i1, j0:j1]
            neigh = points[i0 + di:i1 + di, j0 + dj:j1 + dj]
            ok = valid[i0:i1, j0:j1] & valid[i0 + di:i1 + di, j0 + dj:j1 + dj]
            d = np.where(ok[..., None], neigh - centre, 0.0)
            count[i0:i1, j0:j1] += ok
            first[i0:i1, j0:j1] += d
            for slot, (p, q) in enumerate(pairs):
                second[i0:i1, j0:j1, slot] += d[..., p] * d[..., q]
    return count, first, second
