"""Tube MPC baseline built on a per-step linearisation of the NNDM."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .nn import Nndm, jacobians
from .numerics import (NonStabilizable, Polytope, Zonotope, dare_gain,
                       spectral_radius, zonotope_area_2d, zonotope_support)
from .solver import SolverOptions, TrackingProblem, initial_guess, solve

log = logging.getLogger(__name__)

DEFAULT_TRUNCATION = 20


class UnstableClosedLoop(ArithmeticError):
    pass


class InfeasibleTightening(ValueError):
    """Constraint tightening produced an empty set."""


@dataclass(frozen=True, eq=False)
class LinearizedSystem:
    A: np.ndarray
    B: np.ndarray
    x: np.ndarray
    u: np.ndarray


@dataclass(frozen=True, eq=False)
class InvariantSet:
    Z: Zonotope
    K: np.ndarray
    truncation: int
    radius: float


def linearize(nndm: Nndm, x, u) -> LinearizedSystem:
    A, B = jacobians(nndm, x, u)
    return LinearizedSystem(A, B, np.array(x, dtype=float), np.array(u, dtype=float))


def invariant_set(sys: LinearizedSystem, K, eps: float,
                  truncation: int = DEFAULT_TRUNCATION) -> InvariantSet:
    """Zonotope outer bound of ``sum_j (A+BK)^j B W`` for ``W = {|w|_inf <= eps}``.

    The first ``truncation`` terms are kept and scaled by ``1/(1 - rho^n)`` to
    cover the tail.
    """
    if truncation < 1:
        raise ValueError("truncation must be at least 1")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Phi = sys.A + sys.B @ K
    rho = spectral_radius(Phi)
    if rho >= 1.0:
        raise UnstableClosedLoop(f"closed-loop spectral radius {rho:.6g} >= 1")
    gens = []
    term = sys.B * eps
    for _ in range(truncation):
        gens.append(term.T)
        term = Phi @ term
    scale = 1.0 / (1.0 - rho ** truncation)
    Z = Zonotope(np.zeros(sys.A.shape[0]), scale * np.vstack(gens))
    return InvariantSet(Z, K, truncation, rho)


def pontryagin_tighten(P: Polytope, Z: Zonotope) -> Polytope:
    """``P - Z``: shrink every face by the support of ``Z`` (taken about 0)."""
    if P.dim != Z.dim:
        raise ValueError(f"{P.dim}-d polytope tightened by {Z.dim}-d zonotope")
    centred = Zonotope(np.zeros(Z.dim), Z.generators)
    h = P.h - np.array([zonotope_support(centred, row) for row in P.H])
    out = Polytope(P.H, h)
    if out.is_empty():
        raise InfeasibleTightening("tightened set is empty")
    return out


def _disturbance_zonotope(m_u: int, eps: float) -> Zonotope:
    return Zonotope(np.zeros(m_u), eps * np.eye(m_u))


@dataclass
class TubeDiagnostics:
    K: np.ndarray
    invariant: InvariantSet | None
    area: float
    set_time: float
    solve_time: float
    converged: bool
    stabilizable: bool = True
    notes: list[str] = field(default_factory=list)
    report: object = None


def tube_control_step(nndm: Nndm, problem: TrackingProblem, x, u_prev=None,
                      options: SolverOptions | None = None, previous=None):
    """One closed-loop tube MPC step from the measured state ``x``.

    The nominal initial state is reset to ``x``, so the applied input is the
    first nominal input. ``u_prev`` is the linearisation input and fallback;
    ``previous`` is an earlier nominal control sequence used as warm start.
    Returns ``(u_applied, diagnostics)``.
    """
    x = np.asarray(x, dtype=float)
    m_u = problem.m_u
    u_prev = np.zeros(m_u) if u_prev is None else np.atleast_1d(np.asarray(u_prev, dtype=float))
    W = _disturbance_zonotope(m_u, problem.eps)
    U_minus_W = Polytope(problem.U.H, problem.U.h - problem.eps * np.abs(problem.U.H).sum(axis=1))
    fallback = U_minus_W.project_point(u_prev)

    t0 = time.perf_counter()
    sys = linearize(nndm, x, u_prev)
    notes = []
    stabilizable = True
    try:
        K = dare_gain(sys.A, sys.B, problem.Q, problem.R)
        inv = invariant_set(sys, K, problem.eps)
        Z = inv.Z
    except (NonStabilizable, UnstableClosedLoop) as exc:
        # no contracting error dynamics: keep only the one-step disturbance image
        stabilizable = False
        notes.append(f"gain: {exc}")
        K = np.zeros((m_u, nndm.m_x))
        inv = None
        Z = W.linear_map(sys.B)
    area = zonotope_area_2d(Z.project((0, 1))) if Z.dim >= 2 else 0.0
    try:
        X_t = pontryagin_tighten(problem.X, Z)
        Xf_t = pontryagin_tighten(problem.Xf, Z)
        KZ = Z.linear_map(K).minkowski_sum(W)
        U_t = pontryagin_tighten(problem.U, KZ)
    except InfeasibleTightening as exc:
        set_time = time.perf_counter() - t0
        notes.append(f"tightening: {exc}")
        return fallback, TubeDiagnostics(K, inv, area, set_time, 0.0, False,
                                         stabilizable, notes)
    set_time = time.perf_counter() - t0

    nominal = TrackingProblem(problem.N, problem.Q, problem.R, problem.Qf, problem.refs,
                              X_t, Xf_t, U_t, problem.eps, problem.dt)
    guess = initial_guess(nominal, "tube", previous)
    report = solve(nominal, nndm, x, "tube", u_init=guess, options=options)
    u = report.controls[0]
    if not report.converged:
        notes.append(f"solver: violation {report.max_violation:.3g}")
        if report.max_violation > (options or SolverOptions()).tol_feas:
            u = fallback
    return u, TubeDiagnostics(K, inv, area, set_time, report.wall_time, report.converged,
                              stabilizable, notes, report)
