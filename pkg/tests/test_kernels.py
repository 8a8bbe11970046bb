import numpy as np
import pytest
from hypothesis import given, strategies as st

from planekit import kernels
from planekit import _fallback

needs_compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                                    reason="compiled extension not built")


def loop_conv(x, k):
    cin, h, w = x.shape
    out = np.zeros((k.shape[0], h, w))
    for o in range(k.shape[0]):
        for v in range(h):
            for u in range(w):
                for c in range(cin):
                    for a in range(3):
                        for b in range(3):
                            vv, uu = min(max(v + a - 1, 0), h - 1), min(max(u + b - 1, 0), w - 1)
                            out[o, v, u] += k[o, c, a, b] * x[c, vv, uu]
    return out


def loop_moments(points, valid, r):
    h, w = valid.shape
    count = np.zeros((h, w), int)
    first, second = np.zeros((h, w, 3)), np.zeros((h, w, 6))
    pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    for v in range(h):
        for u in range(w):
            for vv in range(max(0, v - r), min(h, v + r + 1)):
                for uu in range(max(0, u - r), min(w, u + r + 1)):
                    if valid[v, u] and valid[vv, uu]:
                        d = points[vv, uu] - points[v, u]
                        count[v, u] += 1
                        first[v, u] += d
                        second[v, u] += [d[p] * d[q] for p, q in pairs]
    return count, first, second


def test_fallback_conv_matches_loop():
    rng = np.random.default_rng(0)
    x, k = rng.normal(size=(2, 5, 6)), rng.normal(size=(3, 2, 3, 3))
    np.testing.assert_allclose(_fallback.conv3x3_replicate(x, k), loop_conv(x, k), atol=1e-12)
    with pytest.raises(ValueError):
        _fallback.conv3x3_replicate(x, k[:, :1])


def test_fallback_moments_match_loop():
    rng = np.random.default_rng(1)
    pts, valid = rng.normal(size=(6, 7, 3)), rng.uniform(size=(6, 7)) > 0.2
    for got, want in zip(_fallback.window_moments(pts, valid, 2), loop_moments(pts, valid, 2)):
        np.testing.assert_allclose(got, want, atol=1e-12)


@needs_compiled
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.integers(1, 4),
       st.integers(1, 12), st.integers(1, 12))
def test_compiled_conv_equals_fallback(seed, cin, cout, h, w):
    rng = np.random.default_rng(seed)
    x, k = rng.normal(size=(cin, h, w)), rng.normal(size=(cout, cin, 3, 3))
    results = []
    for name in ("compiled", "python"):
        prev = kernels.use_backend(name)
        try:
            results.append(kernels.conv3x3_replicate(x, k))
        finally:
            kernels.use_backend(prev)
    np.testing.assert_allclose(results[0], results[1], rtol=1e-12, atol=1e-12)


@needs_compiled
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 10), st.integers(1, 10), st.integers(1, 3))
def test_compiled_moments_equal_fallback(seed, h, w, r):
    rng = np.random.default_rng(seed)
    pts, valid = rng.normal(size=(h, w, 3)), rng.uniform(size=(h, w)) > 0.3
    results = []
    for name in ("compiled", "python"):
        prev = kernels.use_backend(name)
        try:
            results.append(kernels.window_moments(pts, valid, r))
        finally:
            kernels.use_backend(prev)
    np.testing.assert_array_equal(results[0][0], results[1][0])
    np.testing.assert_allclose(results[0][1], results[1][1], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(results[0][2], results[1][2], rtol=1e-12, atol=1e-12)


def test_backend_switching():
    assert "python" in kernels.available_backends()
    assert kernels.active_backend() in kernels.available_backends()
    prev = kernels.use_backend("python")
    try:
        assert kernels.active_backend() == "python"
    finally:
        kernels.use_backend(prev)
    assert kernels.active_backend() == prev
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
