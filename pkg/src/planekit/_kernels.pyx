# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel kernels. Signatures mirror ``planekit._fallback``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


def conv3x3_replicate(const double[:, :, ::1] x, const double[:, :, :, ::1] k):
    """3x3 cross-correlation over channels with edge-replicate padding."""
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t cout = k.shape[0]
    if k.shape[1] != cin or k.shape[2] != 3 or k.shape[3] != 3:
        raise ValueError("kernel shape %s does not match %d input channels"
                         % ((k.shape[0], k.shape[1], k.shape[2], k.shape[3]), cin))
    out_arr = np.zeros((cout, h, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, c, i, j, a, b, ii
    cdef Py_ssize_t cols[3]
    cdef double acc, kv
    with nogil:
        for o in range(cout):
            for i in range(h):
                for j in range(w):
                    cols[0] = _clamp(j - 1, w)
                    cols[1] = j
                    cols[2] = _clamp(j + 1, w)
                    acc = 0.0
                    for c in range(cin):
                        for a in range(3):
                            ii = _clamp(i + a - 1, h)
                            for b in range(3):
                                kv = k[o, c, a, b]
                                if kv != 0.0:
                                    acc = acc + kv * x[c, ii, cols[b]]
                    out[o, i, j] = acc
    return out_arr


def window_moments(const double[:, :, ::1] points, const unsigned char[:, ::1] valid,
                   int window):
    """Neighbourhood moments of ``points[q] - points[p]`` over valid q.

    Returns ``(count, first, second)`` with shapes (H, W), (H, W, 3) and
    (H, W, 6); second moments are ordered xx, xy, xz, yy, yz, zz.  Pixels
    whose own entry in ``valid`` is false get zero count.
    """
    cdef Py_ssize_t h = points.shape[0], w = points.shape[1]
    count_arr = np.zeros((h, w), dtype=np.int64)
    first_arr = np.zeros((h, w, 3), dtype=np.float64)
    second_arr = np.zeros((h, w, 6), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] count = count_arr
    cdef double[:, :, ::1] first = first_arr
    cdef double[:, :, ::1] second = second_arr
    cdef Py_ssize_t i, j, di, dj, qi, qj
    cdef double px, py, pz, dx, dy, dz
    cdef double s0, s1, s2, t0, t1, t2, t3, t4, t5
    cdef cnp.int64_t n
    with nogil:
        for i in range(h):
            for j in range(w):
                if not valid[i, j]:
                    continue
                px = points[i, j, 0]
                py = points[i, j, 1]
                pz = points[i, j, 2]
                n = 0
                s0 = 0.0; s1 = 0.0; s2 = 0.0
                t0 = 0.0; t1 = 0.0; t2 = 0.0; t3 = 0.0; t4 = 0.0; t5 = 0.0
                for di in range(-window, window + 1):
                    qi = i + di
                    if qi < 0 or qi >= h:
                        continue
                    for dj in range(-window, window + 1):
                        qj = j + dj
                        if qj < 0 or qj >= w or not valid[qi, qj]:
                            continue
                        dx = points[qi, qj, 0] - px
                        dy = points[qi, qj, 1] - py
                        dz = points[qi, qj, 2] - pz
                        n = n + 1
                        s0 = s0 + dx; s1 = s1 + dy; s2 = s2 + dz
                        t0 = t0 + dx * dx; t1 = t1 + dx * dy; t2 = t2 + dx * dz
                        t3 = t3 + dy * dy; t4 = t4 + dy * dz; t5 = t5 + dz * dz
                count[i, j] = n
                first[i, j, 0] = s0; first[i, j, 1] = s1; first[i, j, 2] = s2
                second[i, j, 0] = t0; second[i, j, 1] = t1; second[i, j, 2] = t2
                second[i, j, 3] = t3; second[i, j, 4] = t4; second[i, j, 5] = t5
    return count_arr, first_arr, second_arr
