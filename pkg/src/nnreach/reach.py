"""Multi-step reachable sets of the NNDM as functions of the control sequence.

Per-step envelopes of ``x_{j+1}`` over ``[x_j; u_j]`` are chained by
substituting the earlier state's envelope into the later one, which gives
affine bounds of ``x_k`` over ``(x_0, u_0, ..., u_{k-1})``. Concretizing those
against the input boxes yields the box ``R_k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bounds import LinearBounds, symbolic_bounds_step
from .nn import Nndm, nndm_step
from .numerics import (BoxSet, DimensionError, NonStabilizable, dare_gain,
                       mat_pos_neg_split, spectral_radius)


class NoStabilizingGain(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class MultiStepBounds:
    """Affine bounds of a state over ``[x_first; u_first; ...; u_last]``."""

    k: int
    W_lo: np.ndarray
    b_lo: np.ndarray
    W_hi: np.ndarray
    b_hi: np.ndarray
    steps: tuple[LinearBounds, ...] = ()
    boxes: tuple[BoxSet, ...] = ()

    @classmethod
    def from_step(cls, step: LinearBounds) -> MultiStepBounds:
        return cls(1, step.W_lo, step.b_lo, step.W_hi, step.b_hi, (step,))


@dataclass(frozen=True)
class ReachSet:
    k: int
    box: BoxSet


@dataclass(frozen=True, eq=False)
class FeedbackGain:
    G: np.ndarray
    accepted: bool
    radius_upper: float
    radius_lower: float
    gamma: float


def compose_step(acc: MultiStepBounds, step: LinearBounds) -> MultiStepBounds:
    """Extend ``acc`` one step further back by substituting ``step`` for its leading state.

    ``acc`` bounds some state over ``[x_j; u_j..u_{j+i-1}]``, ``step`` bounds
    ``x_j`` over ``[x_{j-1}; u_{j-1}]``; the result is over
    ``[x_{j-1}; u_{j-1}..u_{j+i-1}]``.
    """
    m_x = acc.W_lo.shape[0]
    if step.W_lo.shape[0] != m_x:
        raise DimensionError(f"step bounds {step.W_lo.shape[0]} states, accumulator {m_x}")
    m_u = step.W_lo.shape[1] - m_x
    tail = acc.W_lo.shape[1] - m_x
    if m_u <= 0 or tail < 0 or tail % m_u:
        raise DimensionError(f"accumulator with {acc.W_lo.shape[1]} columns "
                             f"cannot take a step with m_u={m_u}")

    def block(Ws):
        out = np.zeros((m_x + tail, m_x + m_u + tail))
        out[:m_x, :m_x + m_u] = Ws
        out[m_x:, m_x + m_u:] = np.eye(tail)
        return out

    def pad(bs):
        return np.concatenate([bs, np.zeros(tail)])

    S_lo, S_hi = block(step.W_lo), block(step.W_hi)
    s_lo, s_hi = pad(step.b_lo), pad(step.b_hi)
    Lp, Ln = mat_pos_neg_split(acc.W_lo)
    Up, Un = mat_pos_neg_split(acc.W_hi)
    return MultiStepBounds(
        acc.k + 1,
        Lp @ S_lo + Ln @ S_hi, acc.b_lo + Lp @ s_lo + Ln @ s_hi,
        Up @ S_hi + Un @ S_lo, acc.b_hi + Up @ s_hi + Un @ s_lo,
        (step,) + acc.steps,
    )


def _stack(x0_box: BoxSet, u_boxes: Sequence[BoxSet]) -> tuple[np.ndarray, np.ndarray]:
    lo = np.concatenate([x0_box.lower, *[b.lower for b in u_boxes]])
    hi = np.concatenate([x0_box.upper, *[b.upper for b in u_boxes]])
    return lo, hi


def concretize(bounds: MultiStepBounds, x0_box: BoxSet, u_boxes: Sequence[BoxSet]) -> ReachSet:
    lo, hi = _stack(x0_box, u_boxes)
    if lo.shape[0] != bounds.W_lo.shape[1]:
        raise DimensionError(f"{lo.shape[0]} stacked inputs for bounds with "
                             f"{bounds.W_lo.shape[1]} columns")
    Lp, Ln = mat_pos_neg_split(bounds.W_lo)
    Up, Un = mat_pos_neg_split(bounds.W_hi)
    lower = Lp @ lo + Ln @ hi + bounds.b_lo
    upper = Un @ lo + Up @ hi + bounds.b_hi
    return ReachSet(bounds.k, BoxSet(lower, np.maximum(upper, lower)))


def k_step_bounds(nndm: Nndm, x0_box: BoxSet, u_boxes: Sequence[BoxSet]) -> MultiStepBounds:
    """Affine bounds of ``x_k`` over ``(x_0, u_0, ..., u_{k-1})``, ``k = len(u_boxes)``.

    The per-step envelope at step ``j`` is anchored on ``R_j x U_j`` where
    ``R_j`` is the concretized ``j``-step reach box; the returned object keeps
    all anchoring boxes ``R_1..R_k`` in ``boxes``.
    """
    if len(u_boxes) == 0:
        raise ValueError("need at least one control box")
    if x0_box.dim != nndm.m_x or any(b.dim != nndm.m_u for b in u_boxes):
        raise DimensionError("box dimensions do not match the model")
    anchor = x0_box
    steps: list[LinearBounds] = []
    reach: list[BoxSet] = []
    acc = None
    for j, u_box in enumerate(u_boxes):
        step = symbolic_bounds_step(nndm, anchor.product(u_box))
        steps.append(step)
        acc = MultiStepBounds.from_step(step)
        for earlier in reversed(steps[:-1]):
            acc = compose_step(acc, earlier)
        anchor = concretize(acc, x0_box, u_boxes[:j + 1]).box
        reach.append(anchor)
    return MultiStepBounds(acc.k, acc.W_lo, acc.b_lo, acc.W_hi, acc.b_hi,
                           tuple(steps), tuple(reach))


def control_boxes(controls, eps) -> list[BoxSet]:
    controls = [np.atleast_1d(np.asarray(u, dtype=float)) for u in controls]
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (len(controls),))
    if np.any(eps < 0):
        raise ValueError("disturbance radius must be nonnegative")
    return [BoxSet.around(u, e) for u, e in zip(controls, eps)]


def reach_function(nndm: Nndm, x0, controls, eps) -> list[ReachSet]:
    """Reach boxes ``R_1..R_k`` from an exactly known ``x0`` under ``u_i +- eps_i``."""
    boxes = control_boxes(controls, eps)
    bounds = k_step_bounds(nndm, BoxSet.point(x0), boxes)
    return [ReachSet(j + 1, box) for j, box in enumerate(bounds.boxes)]


def _split(step: LinearBounds, m_x: int):
    return (step.W_lo[:, :m_x], step.W_lo[:, m_x:],
            step.W_hi[:, :m_x], step.W_hi[:, m_x:])


def find_feedback_gain(nndm: Nndm, box: BoxSet) -> FeedbackGain:
    """Gain ``G`` stabilising both the upper and lower one-step envelopes on ``box``.

    ``box`` is a region of ``[x; u]``. If both open-loop envelopes are
    already Schur, ``G = 0`` is returned. Otherwise the LQR gain of the
    midpoint envelope (``Q = I``, ``R = I``) is accepted only if both closed
    loops are Schur.
    """
    step = symbolic_bounds_step(nndm, box)
    Wlx, Wlu, Whx, Whu = _split(step, nndm.m_x)
    gamma = max(np.abs(Whx - Wlx).sum(axis=1).max(), np.abs(Whu - Wlu).sum(axis=1).max())
    r_hi, r_lo = spectral_radius(Whx), spectral_radius(Wlx)
    if r_hi < 1.0 and r_lo < 1.0:
        return FeedbackGain(np.zeros((nndm.m_u, nndm.m_x)), True, r_hi, r_lo, float(gamma))
    try:
        G = dare_gain(0.5 * (Wlx + Whx), 0.5 * (Wlu + Whu),
                      np.eye(nndm.m_x), np.eye(nndm.m_u))
    except NonStabilizable:
        return FeedbackGain(np.zeros((nndm.m_u, nndm.m_x)), False, np.inf, np.inf, float(gamma))
    r_hi = spectral_radius(Whx + Whu @ G)
    r_lo = spectral_radius(Wlx + Wlu @ G)
    return FeedbackGain(G, bool(r_hi < 1.0 and r_lo < 1.0), r_hi, r_lo, float(gamma))


def nominal_rollout(nndm: Nndm, x0, controls) -> np.ndarray:
    xs = [np.asarray(x0, dtype=float)]
    for u in controls:
        xs.append(nndm_step(nndm, xs[-1], u))
    return np.array(xs)


def feedback_reach(nndm: Nndm, G, x_nominal, u_nominal, eps: float,
                   steps: int | None = None, symbolic: bool = True) -> list[ReachSet]:
    """Reach boxes under ``u_k = u_hat_k + G (x_k - x_hat_k) + w_k``, ``|w_k| <= eps``.

    ``x_nominal`` holds the undisturbed states ``x_hat_0..x_hat_T``, ``u_nominal``
    the inputs ``u_hat_0..u_hat_{T-1}``. Each step's envelope is anchored on the
    current box with the feedback substituted exactly, giving closed-loop
    bounds over ``[x_k; w_k]``.

    With ``symbolic`` the per-step envelopes are chained back to ``x_0`` before
    concretizing, so the box never re-enters as a variable; otherwise each box
    is concretized from the previous one (subject to the wrapping effect).
    With ``G = 0`` the symbolic mode matches :func:`reach_function` and the
    plain mode is step-by-step open-loop propagation.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    x_nominal = np.asarray(x_nominal, dtype=float)
    u_nominal = np.atleast_2d(np.asarray(u_nominal, dtype=float))
    steps = len(u_nominal) if steps is None else steps
    if eps < 0:
        raise ValueError("disturbance radius must be nonnegative")
    m_x, m_u = nndm.m_x, nndm.m_u
    Gp, Gn = mat_pos_neg_split(G)
    w_box = BoxSet.around(np.zeros(m_u), eps)
    x0 = BoxSet.point(x_nominal[0])
    box = x0
    closed: list[LinearBounds] = []
    out = []
    for k in range(steps):
        xh, uh = x_nominal[k], u_nominal[k]
        dlo, dhi = box.lower - xh, box.upper - xh
        u_box = BoxSet(uh + Gp @ dlo + Gn @ dhi - eps, uh + Gp @ dhi + Gn @ dlo + eps)
        step = symbolic_bounds_step(nndm, box.product(u_box))
        Wlx, Wlu, Whx, Whu = _split(step, m_x)
        # u + w = (uh - G xh) + G x + w, the constant goes into the bias
        off = uh - G @ xh
        cl = LinearBounds(np.hstack([Wlx + Wlu @ G, Wlu]), step.b_lo + Wlu @ off,
                          np.hstack([Whx + Whu @ G, Whu]), step.b_hi + Whu @ off,
                          box.product(w_box))
        if symbolic:
            closed.append(cl)
            acc = MultiStepBounds.from_step(cl)
            for earlier in reversed(closed[:-1]):
                acc = compose_step(acc, earlier)
            box = concretize(acc, x0, [w_box] * (k + 1)).box
        else:
            box = cl.concretize()
        out.append(ReachSet(k + 1, box))
    return out
