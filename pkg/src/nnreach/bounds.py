"""Single-step symbolic linear bounds of the network and of the NNDM update.

Pre-activation intervals come from interval arithmetic; the affine envelopes
are then built by back-substituting per-neuron ReLU relaxations from the
output layer down to the input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .nn import MlpModel, Nndm
from .numerics import BoxSet, DimensionError, mat_pos_neg_split


class ReluRelaxation(NamedTuple):
    lower_slope: float
    lower_intercept: float
    upper_slope: float
    upper_intercept: float


@dataclass(frozen=True, eq=False)
class LinearBounds:
    """``W_lo z + b_lo <= output(z) <= W_hi z + b_hi`` for all ``z`` in ``input_box``."""

    W_lo: np.ndarray
    b_lo: np.ndarray
    W_hi: np.ndarray
    b_hi: np.ndarray
    input_box: BoxSet

    def __post_init__(self):
        shape = self.W_lo.shape
        if (self.W_hi.shape != shape or self.b_lo.shape != (shape[0],)
                or self.b_hi.shape != (shape[0],) or shape[1] != self.input_box.dim):
            raise DimensionError("inconsistent linear bound shapes")

    def evaluate(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        return z @ self.W_lo.T + self.b_lo, z @ self.W_hi.T + self.b_hi

    def concretize(self, box: BoxSet | None = None) -> BoxSet:
        box = self.input_box if box is None else box
        Lp, Ln = mat_pos_neg_split(self.W_lo)
        Up, Un = mat_pos_neg_split(self.W_hi)
        lo = Lp @ box.lower + Ln @ box.upper + self.b_lo
        hi = Up @ box.upper + Un @ box.lower + self.b_hi
        return BoxSet(lo, np.maximum(hi, lo))


def interval_forward(model: MlpModel, box: BoxSet) -> list[BoxSet]:
    """Pre-activation interval of every layer (the last entry is the output)."""
    if box.dim != model.input_dim:
        raise DimensionError(f"box of dim {box.dim} for model input dim {model.input_dim}")
    return [BoxSet(l, u) for l, u in
            kernels.interval_forward(model.weights, model.biases, box.lower, box.upper)]


def relu_relax(l: float, u: float) -> ReluRelaxation:
    """Linear lower/upper lines enclosing ``max(0, z)`` on ``[l, u]``."""
    if l > u:
        raise ValueError(f"empty pre-activation interval [{l}, {u}]")
    if l >= 0.0:
        return ReluRelaxation(1.0, 0.0, 1.0, 0.0)
    if u <= 0.0:
        return ReluRelaxation(0.0, 0.0, 0.0, 0.0)
    slope = u / (u - l)
    alpha = 1.0 if u >= -l else 0.0
    return ReluRelaxation(alpha, 0.0, slope, -u * l / (u - l))


def symbolic_bounds_f(model: MlpModel, box: BoxSet) -> LinearBounds:
    """Affine envelopes of ``f`` over a box of ``[x; u]``."""
    if box.dim != model.input_dim:
        raise DimensionError(f"box of dim {box.dim} for model input dim {model.input_dim}")
    W_lo, b_lo, W_hi, b_hi = kernels.crown_bounds(model.weights, model.biases,
                                                  box.lower, box.upper)
    return LinearBounds(W_lo, b_lo, W_hi, b_hi, box)


def symbolic_bounds_step(nndm: Nndm, box: BoxSet) -> LinearBounds:
    """Affine envelopes of ``x_{k+1}`` over a box of ``[x_k; u_k]``."""
    fb = symbolic_bounds_f(nndm.model, box)
    shift = np.zeros((nndm.m_x, nndm.m_x + nndm.m_u))
    shift[:, :nndm.m_x] = np.eye(nndm.m_x)
    dt = nndm.dt
    return LinearBounds(shift + dt * fb.W_lo, dt * fb.b_lo,
                        shift + dt * fb.W_hi, dt * fb.b_hi, box)
