# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Exact squared Euclidean distance transform (two-pass lower envelope).

Each 1-D pass builds the lower envelope of parabolas rooted at the source
costs; running it over columns and then rows yields, for every pixel, the
exact squared distance to the nearest zero pixel. All attained values are
integers well below 2**53, and the parabola intersections are rationals with
denominator at most twice the image side, so double arithmetic resolves every
envelope boundary exactly for any realistic image size.

The caller must guarantee at least one zero pixel (the Python wrapper pads
the border with zeros before calling in).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double INF = 1e15


cdef void _dt1d(double[::1] f, double[::1] d, Py_ssize_t[::1] v,
                double[::1] z, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k = 0, q, i
    cdef double s
    v[0] = 0
    z[0] = -INF
    z[1] = INF
    for q in range(1, n):
        s = ((f[q] + <double> (q * q)) - (f[v[k]] + <double> (v[k] * v[k]))) \
            / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + <double> (q * q)) - (f[v[k]] + <double> (v[k] * v[k]))) \
                / (2.0 * q - 2.0 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INF
    k = 0
    for i in range(n):
        while z[k + 1] < i:
            k += 1
        d[i] = <double> ((i - v[k]) * (i - v[k])) + f[v[k]]


def squared_edt(const unsigned char[:, ::1] inside not None):
    """Squared distance from every pixel to the nearest zero of ``inside``.

    Returns an int64 array of the same shape. Exact (no approximation), but
    requires at least one zero pixel.
    """
    cdef Py_ssize_t h = inside.shape[0], w = inside.shape[1]
    cdef Py_ssize_t n = h if h > w else w
    cdef Py_ssize_t x, y

    mid_np = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] mid = mid_np
    cdef double[::1] fbuf = np.empty(n, dtype=np.float64)
    cdef double[::1] dbuf = np.empty(n, dtype=np.float64)
    cdef double[::1] zbuf = np.empty(n + 1, dtype=np.float64)
    cdef Py_ssize_t[::1] vbuf = np.empty(n, dtype=np.intp)

    with nogil:
        for x in range(w):
            for y in range(h):
                fbuf[y] = 0.0 if inside[y, x] == 0 else INF
            _dt1d(fbuf, dbuf, vbuf, zbuf, h)
            for y in range(h):
                mid[y, x] = dbuf[y]
        for y in range(h):
            for x in range(w):
                fbuf[x] = mid[y, x]
            _dt1d(fbuf, dbuf, vbuf, zbuf, w)
            for x in range(w):
                mid[y, x] = dbuf[x]

    return mid_np.astype(np.int64)
