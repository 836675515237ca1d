"""Single-shooting NMPC over control sequences with an augmented Lagrangian.

The decision vector is the flattened control sequence; states are obtained by
rolling out the nominal NNDM. Constraints ``g(u) <= 0`` depend on the mode:

``reach``  reach boxes R_i must lie in X (X_f at the horizon), u in U - W
``tube``   nominal states in the (already tightened) X, X_f; u in the given U
``naive``  nominal states in X, X_f; u in U - W

Gradients are central finite differences, so the reach-mode constraints
(piecewise smooth in u) need no derivative of the bound propagation.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .nn import Nndm, nndm_step
from .numerics import Polytope
from .reach import reach_function

log = logging.getLogger(__name__)

MODES = ("reach", "tube", "naive")


class NotConverged(RuntimeError):
    def __init__(self, report):
        super().__init__(f"solver stopped with violation {report.max_violation:.3g}")
        self.report = report


@dataclass(frozen=True, eq=False)
class TrackingProblem:
    N: int
    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    refs: np.ndarray
    X: Polytope
    Xf: Polytope
    U: Polytope
    eps: float
    dt: float

    def __post_init__(self):
        Q, R, Qf = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (self.Q, self.R, self.Qf))
        refs = np.atleast_2d(np.asarray(self.refs, dtype=float))
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        if refs.shape != (self.N + 1, Q.shape[0]):
            raise ValueError(f"need {self.N + 1} references of dim {Q.shape[0]}, got {refs.shape}")
        if np.any(np.diag(Q) < 0) or np.any(np.diag(Qf) < 0):
            raise ValueError("state weights must be positive semidefinite")
        if np.any(np.diag(R) <= 0):
            raise ValueError("input weight must be positive definite")
        if self.eps < 0:
            raise ValueError("disturbance radius must be nonnegative")
        for name, val in (("Q", Q), ("R", R), ("Qf", Qf), ("refs", refs)):
            object.__setattr__(self, name, val)

    @property
    def m_u(self) -> int:
        return self.R.shape[0]

    def input_set(self, mode: str) -> Polytope:
        """Admissible nominal inputs; tube problems arrive pre-tightened."""
        if mode == "tube" or self.eps == 0:
            return self.U
        return Polytope(self.U.H, self.U.h - self.eps * np.abs(self.U.H).sum(axis=1))


@dataclass
class SolveReport:
    controls: np.ndarray
    objective: float
    max_violation: float
    iterations: int
    wall_time: float
    converged: bool
    violation_history: list[float] = field(default_factory=list)


def rollout(nndm: Nndm, x0, controls) -> np.ndarray:
    """Nominal states ``x_1..x_N`` (one row each)."""
    x = np.asarray(x0, dtype=float)
    out = []
    for u in np.atleast_2d(controls):
        x = nndm_step(nndm, x, u)
        out.append(x)
    return np.array(out)


def objective(problem: TrackingProblem, nndm: Nndm, x0, controls) -> float:
    controls = np.atleast_2d(controls)
    xs = np.vstack([np.asarray(x0, dtype=float), rollout(nndm, x0, controls)])
    e = xs - problem.refs
    stage = np.einsum("ij,jk,ik->", e[:-1], problem.Q, e[:-1])
    effort = np.einsum("ij,jk,ik->", controls, problem.R, controls)
    terminal = e[-1] @ problem.Qf @ e[-1]
    return float(stage + effort + terminal)


def constraint_margins(problem: TrackingProblem, nndm: Nndm, x0, controls, mode: str,
                       backoff: float = 0.0) -> np.ndarray:
    """Stacked state then input margins; feasible iff every entry is <= 0.

    ``backoff`` tightens the state faces so that a solution feasible to the
    solver tolerance is strictly feasible for the original sets.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    controls = np.atleast_2d(controls)
    N = problem.N
    parts = []
    if mode == "reach":
        boxes = [r.box for r in reach_function(nndm, x0, controls, problem.eps)]
        for i, box in enumerate(boxes):
            P = problem.Xf if i == N - 1 else problem.X
            parts.append(P.box_margins(box) + backoff)
    else:
        states = rollout(nndm, x0, controls)
        for i, x in enumerate(states):
            P = problem.Xf if i == N - 1 else problem.X
            parts.append(P.margins(x) + backoff)
    U = problem.input_set(mode)
    for u in controls:
        parts.append(U.margins(u))
    return np.concatenate(parts)


def initial_guess(problem: TrackingProblem, mode: str, previous=None) -> np.ndarray:
    """Shift the previous solution by one step, else zero input projected into U."""
    U = problem.input_set(mode)
    if previous is not None:
        prev = np.atleast_2d(np.asarray(previous, dtype=float))
        guess = np.vstack([prev[1:], prev[-1:]])[:problem.N]
        if guess.shape[0] < problem.N:
            guess = np.vstack([guess, np.repeat(guess[-1:], problem.N - guess.shape[0], axis=0)])
    else:
        guess = np.zeros((problem.N, problem.m_u))
    return np.array([U.project_point(u) for u in guess])


@dataclass
class SolverOptions:
    tol_feas: float = 1e-4
    tol_opt: float = 1e-3
    tol_grad: float = 1e-7
    fd_step: float = 1e-5
    max_outer: int = 50
    max_inner: int = 500
    mu0: float = 100.0
    mu_growth: float = 10.0
    mu_max: float = 1e8


def _fd_grad(fun, z, h):
    g = np.empty_like(z)
    for i in range(z.shape[0]):
        zp = z.copy()
        zm = z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (fun(zp) - fun(zm)) / (2.0 * h)
    return g


def _minimize(fun, z, opts: SolverOptions):
    """Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking."""
    f = fun(z)
    g = _fd_grad(fun, z, opts.fd_step)
    t0 = 1.0 / max(1.0, np.abs(g).max())
    its = 0
    stalled = False
    for its in range(1, opts.max_inner + 1):
        gn = np.abs(g).max()
        if gn <= opts.tol_grad:
            break
        t = t0
        gg = g @ g
        while True:
            z_new = z - t * g
            f_new = fun(z_new)
            if f_new <= f - 1e-4 * t * gg:
                break
            t *= 0.5
            if t * gn < 1e-14:
                stalled = True
                break
        if stalled:
            break
        g_new = _fd_grad(fun, z_new, opts.fd_step)
        s = z_new - z
        y = g_new - g
        sy = s @ y
        t0 = (s @ s) / sy if sy > 1e-300 else 2.0 * t
        z, f, g = z_new, f_new, g_new
        if np.abs(s).max() <= 1e-13 * (1.0 + np.abs(z).max()):
            stalled = True
            break
    return z, f, np.abs(g).max(), its, stalled


def solve(problem: TrackingProblem, nndm: Nndm, x0, mode: str, u_init=None,
          options: SolverOptions | None = None) -> SolveReport:
    """Minimise the tracking cost subject to the mode's constraints.

    Returns a report with ``converged=False`` (carrying the least-violating
    iterate) instead of raising when the tolerances are not met.
    """
    opts = options or SolverOptions()
    start = time.perf_counter()
    N, m_u = problem.N, problem.m_u
    x0 = np.asarray(x0, dtype=float)
    z = (initial_guess(problem, mode) if u_init is None
         else np.atleast_2d(np.asarray(u_init, dtype=float))).ravel().copy()

    def J(zz):
        return objective(problem, nndm, x0, zz.reshape(N, m_u))

    def G(zz):
        return constraint_margins(problem, nndm, x0, zz.reshape(N, m_u), mode,
                                  backoff=opts.tol_feas)

    lam = np.zeros(G(z).shape[0])
    mu = opts.mu0
    best = None
    history = []
    prev_viol = np.inf
    iterations = 0
    converged = False
    for _ in range(opts.max_outer):
        def merit(zz, lam=lam, mu=mu):
            shifted = np.maximum(0.0, lam + mu * G(zz))
            return J(zz) + (shifted @ shifted - lam @ lam) / (2.0 * mu)

        z, _, gnorm, its, stalled = _minimize(merit, z, opts)
        iterations += its
        g = G(z)
        viol = max(0.0, float(g.max()))
        history.append(viol)
        obj = J(z)
        if best is None or (viol, obj) < (best[0], best[1]):
            best = (viol, obj, z.copy())
        lam_new = np.maximum(0.0, lam + mu * g)
        complementarity = float(np.abs(np.minimum(lam_new, -g)).max()) if g.size else 0.0
        if viol <= opts.tol_feas and (gnorm <= opts.tol_opt or stalled) \
                and complementarity <= opts.tol_feas:
            converged = True
            best = (viol, obj, z.copy())
            break
        lam = lam_new
        if viol > 0.25 * prev_viol:
            mu = min(mu * opts.mu_growth, opts.mu_max)
        prev_viol = viol

    _, obj, z = best
    controls = z.reshape(N, m_u)
    raw = constraint_margins(problem, nndm, x0, controls, mode)
    viol = max(0.0, float(raw.max()))
    return SolveReport(controls, obj, viol, iterations, time.perf_counter() - start,
                       converged, history)
