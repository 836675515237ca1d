# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``.

Loops are written out by hand: the networks are small (tens of units), so
numpy's per-call overhead dominates and plain C loops win by a wide margin.
"""
import numpy as np


cdef void _affine(const double[:, ::1] W, const double[::1] b,
                  const double[::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t r, c
    cdef double s
    for r in range(W.shape[0]):
        s = b[r]
        for c in range(W.shape[1]):
            s += W[r, c] * x[c]
        out[r] = s


def mlp_forward(weights, biases, z):
    cdef Py_ssize_t i, j, last = len(weights) - 1
    cdef double[::1] h = np.array(z, dtype=np.float64)
    cdef double[::1] nxt
    cdef const double[:, ::1] W
    cdef const double[::1] b
    for i in range(last + 1):
        W = weights[i]
        b = biases[i]
        nxt = np.empty(W.shape[0])
        _affine(W, b, h, nxt)
        if i < last:
            for j in range(nxt.shape[0]):
                if nxt[j] < 0.0:
                    nxt[j] = 0.0
        h = nxt
    return np.asarray(h)


cdef void _interval_layer(const double[:, ::1] W, const double[::1] b,
                          const double[::1] lo, const double[::1] hi,
                          double[::1] pl, double[::1] pu) noexcept nogil:
    cdef Py_ssize_t r, c
    cdef double sl, su, w
    for r in range(W.shape[0]):
        sl = b[r]
        su = b[r]
        for c in range(W.shape[1]):
            w = W[r, c]
            if w >= 0.0:
                sl += w * lo[c]
                su += w * hi[c]
            else:
                sl += w * hi[c]
                su += w * lo[c]
        pl[r] = sl
        pu[r] = su


def interval_forward(weights, biases, lower, upper):
    cdef Py_ssize_t i, j, last = len(weights) - 1
    cdef double[::1] lo = np.array(lower, dtype=np.float64)
    cdef double[::1] hi = np.array(upper, dtype=np.float64)
    cdef double[::1] pl, pu
    cdef const double[:, ::1] W
    out = []
    for i in range(last + 1):
        W = weights[i]
        pl = np.empty(W.shape[0])
        pu = np.empty(W.shape[0])
        _interval_layer(W, biases[i], lo, hi, pl, pu)
        out.append((np.asarray(pl), np.asarray(pu)))
        if i < last:
            lo = np.empty(W.shape[0])
            hi = np.empty(W.shape[0])
            for j in range(W.shape[0]):
                lo[j] = pl[j] if pl[j] > 0.0 else 0.0
                hi[j] = pu[j] if pu[j] > 0.0 else 0.0
    return out


cdef void _relax(const double[::1] l, const double[::1] u, double[::1] up_slope,
                 double[::1] up_int, double[::1] lo_slope) noexcept nogil:
    cdef Py_ssize_t j
    cdef double lj, uj
    for j in range(l.shape[0]):
        lj = l[j]
        uj = u[j]
        if lj >= 0.0:
            up_slope[j] = 1.0
            up_int[j] = 0.0
            lo_slope[j] = 1.0
        elif uj <= 0.0:
            up_slope[j] = 0.0
            up_int[j] = 0.0
            lo_slope[j] = 0.0
        else:
            up_slope[j] = uj / (uj - lj)
            up_int[j] = -uj * lj / (uj - lj)
            lo_slope[j] = 1.0 if uj >= -lj else 0.0


cdef void _relax_rows(double[:, ::1] lam, double[::1] bias, const double[::1] up_slope,
                      const double[::1] up_int, const double[::1] lo_slope,
                      bint upper) noexcept nogil:
    # positive coefficients take the upper line for the upper bound, the
    # lower line for the lower bound; negative coefficients the opposite
    cdef Py_ssize_t r, j
    cdef double a
    for r in range(lam.shape[0]):
        for j in range(lam.shape[1]):
            a = lam[r, j]
            if (a >= 0.0) == upper:
                bias[r] += a * up_int[j]
                lam[r, j] = a * up_slope[j]
            else:
                lam[r, j] = a * lo_slope[j]


cdef void _through_layer(const double[:, ::1] lam, double[::1] bias,
                         const double[:, ::1] W, const double[::1] b,
                         double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t r, j, c
    cdef double a, s
    for r in range(lam.shape[0]):
        s = 0.0
        for j in range(lam.shape[1]):
            s += lam[r, j] * b[j]
        bias[r] += s
        for c in range(W.shape[1]):
            out[r, c] = 0.0
        for j in range(lam.shape[1]):
            a = lam[r, j]
            if a != 0.0:
                for c in range(W.shape[1]):
                    out[r, c] += a * W[j, c]


def crown_bounds(weights, biases, lower, upper):
    intervals = interval_forward(weights, biases, lower, upper)
    cdef Py_ssize_t i, n = len(weights)
    cdef double[:, ::1] lam_hi = np.array(weights[n - 1], dtype=np.float64)
    cdef double[:, ::1] lam_lo = np.array(weights[n - 1], dtype=np.float64)
    cdef double[::1] b_hi = np.array(biases[n - 1], dtype=np.float64)
    cdef double[::1] b_lo = np.array(biases[n - 1], dtype=np.float64)
    cdef double[::1] up_slope, up_int, lo_slope
    cdef double[:, ::1] nxt
    cdef const double[:, ::1] W
    cdef Py_ssize_t m = lam_hi.shape[0]
    for i in range(n - 2, -1, -1):
        l, u = intervals[i]
        k = l.shape[0]
        up_slope = np.empty(k)
        up_int = np.empty(k)
        lo_slope = np.empty(k)
        _relax(l, u, up_slope, up_int, lo_slope)
        _relax_rows(lam_hi, b_hi, up_slope, up_int, lo_slope, True)
        _relax_rows(lam_lo, b_lo, up_slope, up_int, lo_slope, False)
        W = weights[i]
        nxt = np.empty((m, W.shape[1]))
        _through_layer(lam_hi, b_hi, W, biases[i], nxt)
        lam_hi = nxt
        nxt = np.empty((m, W.shape[1]))
        _through_layer(lam_lo, b_lo, W, biases[i], nxt)
        lam_lo = nxt
    return np.asarray(lam_lo), np.asarray(b_lo), np.asarray(lam_hi), np.asarray(b_hi)
