"""Backend selection for the per-pixel hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback is used.  ``use_backend`` switches at runtime (for benchmarks and
the cross-backend tests).
"""

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active = "compiled" if _compiled is not None else "python"


def available_backends():
    return sorted(_BACKENDS)


def active_backend():
    return _active


def use_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    previous, _active = _active, name
    return previous


def conv3x3_replicate(x, k):
    x = np.ascontiguousarray(x, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    return _BACKENDS[_active].conv3x3_replicate(x, k)


def window_moments(points, valid, window):
    points = np.ascontiguousarray(points, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.uint8)
    if _active == "python":
        valid = valid.astype(bool)
    return _BACKENDS[_active].window_moments(points, valid, int(window))
