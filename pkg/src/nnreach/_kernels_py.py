"""Pure numpy implementation of the hot kernels.

Mirrors ``_kernels.pyx`` function for function. Networks are passed as
tuples of C-contiguous float64 weight matrices and bias vectors; every
layer but the last is followed by a ReLU.
"""
import numpy as np


def mlp_forward(weights, biases, z):
    h = np.asarray(z, dtype=float)
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        h = W @ h + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def interval_forward(weights, biases, lower, upper):
    """Pre-activation intervals ``[(l_1, u_1), ..., (l_n, u_n)]``."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    out = []
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        Wp = np.maximum(W, 0.0)
        Wn = np.minimum(W, 0.0)
        pl = Wp @ lo + Wn @ hi + b
        pu = Wp @ hi + Wn @ lo + b
        out.append((pl, pu))
        if i < last:
            lo = np.maximum(pl, 0.0)
            hi = np.maximum(pu, 0.0)
    return out


def relax_vectors(l, u):
    """Vectorised ReLU relaxation: (upper slope, upper intercept, lower slope)."""
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    active = l >= 0.0
    unstable = (l < 0.0) & (u > 0.0)
    up_slope = np.where(active, 1.0, 0.0)
    up_int = np.zeros_like(l)
    lo_slope = up_slope.copy()
    if np.any(unstable):
        lu, uu = l[unstable], u[unstable]
        up_slope[unstable] = uu / (uu - lu)
        up_int[unstable] = -uu * lu / (uu - lu)
        lo_slope[unstable] = np.where(uu >= -lu, 1.0, 0.0)
    return up_slope, up_int, lo_slope


def crown_bounds(weights, biases, lower, upper):
    """Affine envelopes ``W_lo z + b_lo <= f(z) <= W_hi z + b_hi`` on the box."""
    intervals = interval_forward(weights, biases, lower, upper)
    n = len(weights)
    lam_hi = np.array(weights[-1], dtype=float)
    lam_lo = lam_hi.copy()
    b_hi = np.array(biases[-1], dtype=float)
    b_lo = b_hi.copy()
    for i in range(n - 2, -1, -1):
        up_slope, up_int, lo_slope = relax_vectors(*intervals[i])
        pos, neg = np.maximum(lam_hi, 0.0), np.minimum(lam_hi, 0.0)
        b_hi = b_hi + pos @ up_int
        lam_hi = pos * up_slope + neg * lo_slope
        pos, neg = np.maximum(lam_lo, 0.0), np.minimum(lam_lo, 0.0)
        b_lo = b_lo + neg @ up_int
        lam_lo = pos * lo_slope + neg * up_slope
        b_hi = b_hi + lam_hi @ biases[i]
        b_lo = b_lo + lam_lo @ biases[i]
        lam_hi = lam_hi @ weights[i]
        lam_lo = lam_lo @ weights[i]
    return lam_lo, b_lo, lam_hi, b_hi
