"""Dense linear algebra, interval boxes, zonotopes and Riccati utilities.

Everything here works on small dense float64 arrays (state dimension <= 5)
and is a pure function of its inputs. Arrays stored on the set types are
copied and frozen so instances can be shared freely between workers.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class NonStabilizable(ArithmeticError):
    """No stabilizing LQR gain could be found for the given (A, B)."""


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if ndim == 1:
        arr = np.atleast_1d(arr)
    else:
        arr = np.atleast_2d(arr)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def mat_pos_neg_split(M) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(max(M, 0), min(M, 0))`` elementwise; the parts sum to ``M``."""
    M = np.asarray(M, dtype=float)
    return np.maximum(M, 0.0), np.minimum(M, 0.0)


# --------------------------------------------------------------------- sets


@dataclass(frozen=True, eq=False)
class BoxSet:
    """Axis-aligned box ``{x : lower <= x <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.lower, 1, "lower")
        hi = _frozen(self.upper, 1, "upper")
        if lo.shape != hi.shape:
            raise DimensionError(f"bounds differ in length: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def point(cls, x) -> BoxSet:
        return cls(x, x)

    @classmethod
    def around(cls, center, radius) -> BoxSet:
        c = np.asarray(center, dtype=float)
        r = np.broadcast_to(np.asarray(radius, dtype=float), c.shape)
        return cls(c - r, c + r)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, atol: float = 0.0) -> np.ndarray | bool:
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower - atol) & (x <= self.upper + atol)
        return np.all(inside, axis=-1)

    def product(self, other: BoxSet) -> BoxSet:
        """Cartesian product ``self x other``."""
        return BoxSet(np.concatenate([self.lower, other.lower]),
                      np.concatenate([self.upper, other.upper]))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper))))

    def area_2d(self) -> float:
        """Area of the projection onto the first two coordinates."""
        w = self.width
        return float(w[0] * w[1])

    def __repr__(self):
        return f"BoxSet(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


@dataclass(frozen=True, eq=False)
class Zonotope:
    """``{c + G^T beta : |beta|_inf <= 1}`` with generators stored as rows of ``G``."""

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = _frozen(self.center, 1, "center")
        G = np.array(self.generators, dtype=float)
        if G.size == 0:
            G = np.zeros((0, c.shape[0]))
        G = _frozen(G, 2, "generators")
        if G.shape[1] != c.shape[0]:
            raise DimensionError(f"generators have dimension {G.shape[1]}, center {c.shape[0]}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def linear_map(self, M) -> Zonotope:
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[1] != self.dim:
            raise DimensionError(f"map with {M.shape[1]} columns applied to {self.dim}-d zonotope")
        return Zonotope(M @ self.center, self.generators @ M.T)

    def minkowski_sum(self, other: Zonotope) -> Zonotope:
        if other.dim != self.dim:
            raise DimensionError("zonotope dimensions differ")
        return Zonotope(self.center + other.center,
                        np.vstack([self.generators, other.generators]))

    def scale(self, s: float) -> Zonotope:
        return Zonotope(self.center, s * self.generators)

    def project(self, dims=(0, 1)) -> Zonotope:
        idx = list(dims)
        return Zonotope(self.center[idx], self.generators[:, idx])

    def interval_hull(self) -> BoxSet:
        r = np.abs(self.generators).sum(axis=0)
        return BoxSet(self.center - r, self.center + r)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        beta = rng.uniform(-1.0, 1.0, size=(n, self.generators.shape[0]))
        return self.center + beta @ self.generators


def zonotope_support(Z: Zonotope, d) -> float:
    """Support function ``max_{v in Z} d.v = d.c + sum_j |d.g_j|``."""
    d = np.asarray(d, dtype=float)
    if d.shape != (Z.dim,):
        raise DimensionError(f"direction of shape {d.shape} for {Z.dim}-d zonotope")
    return float(d @ Z.center + np.abs(Z.generators @ d).sum())


def zonotope_area_2d(Z: Zonotope) -> float:
    """Area of a planar zonotope: ``4 * sum_{i<j} |det[g_i g_j]|``."""
    if Z.dim != 2:
        raise DimensionError(f"area needs a 2-d zonotope, got {Z.dim}-d")
    G = Z.generators
    if G.shape[0] < 2:
        return 0.0
    cross = np.abs(np.outer(G[:, 0], G[:, 1]) - np.outer(G[:, 1], G[:, 0]))
    return float(4.0 * np.triu(cross, k=1).sum())


@dataclass(frozen=True, eq=False)
class Polytope:
    """H-representation ``{x : H x <= h}``."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = _frozen(self.H, 2, "H")
        h = _frozen(self.h, 1, "h")
        if H.shape[0] != h.shape[0]:
            raise DimensionError(f"H has {H.shape[0]} rows but h has {h.shape[0]} entries")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @classmethod
    def from_box(cls, lower, upper) -> Polytope:
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        eye = np.eye(lo.shape[0])
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def contains(self, x, atol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.all(x @ self.H.T <= self.h + atol, axis=-1)

    def margins(self, x) -> np.ndarray:
        return self.H @ np.asarray(x, dtype=float) - self.h

    def box_margins(self, box: BoxSet) -> np.ndarray:
        """``max_{x in box} H_i x - h_i`` for every face."""
        Hp, Hn = mat_pos_neg_split(self.H)
        return Hp @ box.upper + Hn @ box.lower - self.h

    def is_empty(self) -> bool:
        res = linprog(np.zeros(self.dim), A_ub=self.H, b_ub=self.h,
                      bounds=[(None, None)] * self.dim, method="highs")
        return res.status == 2

    def project_point(self, x, sweeps: int = 200) -> np.ndarray:
        """Approximate Euclidean projection by cyclic halfspace projections."""
        x = np.array(x, dtype=float)
        norms = np.einsum("ij,ij->i", self.H, self.H)
        for _ in range(sweeps):
            moved = False
            for Hi, hi, ni in zip(self.H, self.h, norms):
                viol = Hi @ x - hi
                if viol > 0 and ni > 0:
                    x = x - viol / ni * Hi
                    moved = True
            if not moved:
                break
        return x


# ------------------------------------------------------------ spectral/LQR


def _two_term_radius(Y0: np.ndarray, Y1: np.ndarray, Y2: np.ndarray) -> np.ndarray:
    """Radius estimate per column from the recurrence ``y2 ~ a*y1 + b*y0``.

    A two-dimensional Krylov fit resolves complex-conjugate dominant pairs,
    which plain power iteration cannot.
    """
    g00 = np.einsum("ij,ij->j", Y0, Y0)
    g01 = np.einsum("ij,ij->j", Y0, Y1)
    g11 = np.einsum("ij,ij->j", Y1, Y1)
    r0 = np.einsum("ij,ij->j", Y0, Y2)
    r1 = np.einsum("ij,ij->j", Y1, Y2)
    det = g00 * g11 - g01 * g01
    out = np.zeros(Y0.shape[1])

    ok = det > 1e-10 * g00 * g11
    if np.any(ok):
        b = (g11[ok] * r0[ok] - g01[ok] * r1[ok]) / det[ok]
        a = (g00[ok] * r1[ok] - g01[ok] * r0[ok]) / det[ok]
        disc = a * a + 4.0 * b
        real = disc >= 0
        sq = np.sqrt(np.abs(disc))
        est = np.where(real,
                       np.maximum(np.abs(a + sq), np.abs(a - sq)) / 2.0,
                       np.sqrt(np.abs(b)))
        out[ok] = est

    par = ~ok & (g11 > 0)
    out[par] = np.abs(r1[par]) / g11[par]
    return out


def spectral_radius(M, restarts: int = 100, rtol: float = 1e-6,
                    max_iter: int = 2000, seed: int = 0) -> float:
    """Estimate ``max |lambda(M)|`` by power iteration from random restarts."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"spectral radius of non-square {M.shape} matrix")
    scale = np.abs(M).max() if M.size else 0.0
    if scale == 0.0:
        return 0.0
    M = M / scale
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((M.shape[0], restarts))
    X /= np.linalg.norm(X, axis=0)
    prev = None
    est = 0.0
    for _ in range(max_iter):
        Y1 = M @ X
        Y2 = M @ Y1
        est = float(_two_term_radius(X, Y1, Y2).max())
        n1 = np.linalg.norm(Y1, axis=0)
        if not np.any(n1 > 0):
            return 0.0
        # nilpotent directions die out; reseed them so every restart keeps working
        dead = n1 <= 1e-300
        if np.any(dead):
            Y1[:, dead] = rng.standard_normal((M.shape[0], int(dead.sum())))
            n1[dead] = np.linalg.norm(Y1[:, dead], axis=0)
        X = Y1 / n1
        if prev is not None and abs(est - prev) <= 1e-3 * rtol * max(est, 1e-300):
            break
        prev = est
    return est * scale


def dare_gain(A, B, Q, R, tol: float = 1e-9, max_iter: int = 10_000) -> np.ndarray:
    """Discrete LQR gain ``K`` (closed loop ``A + B K``) by Riccati fixed-point iteration.

    Raises NonStabilizable if the iteration diverges or the resulting closed
    loop is not Schur stable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise DimensionError(f"inconsistent shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}")

    P = Q.copy()
    for _ in range(max_iter):
        S = R + B.T @ P @ B
        BtPA = B.T @ P @ A
        P_next = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(S, BtPA)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)) or np.abs(P_next).max() > 1e12:
            raise NonStabilizable("Riccati iteration diverged")
        done = np.abs(P_next - P).sum(axis=1).max() < tol
        P = P_next
        if done:
            break

    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0:
        raise NonStabilizable(f"closed-loop spectral radius {rho:.6g} >= 1")
    return K
