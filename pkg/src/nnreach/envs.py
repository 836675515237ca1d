"""Pendulum and DubinsCar benchmarks: teachers, constraints, costs, references."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np

from .nn import Nndm, load_nndm
from .numerics import Polytope

DT = 0.1

# pendulum physical parameters (our choice; the benchmark source gives none)
PEND_MASS = 1.0
PEND_LC = 0.5
PEND_INERTIA = 0.25
PEND_DAMPING = 0.1
GRAVITY = 9.81

PLANNER_STEP = 0.08


def pendulum_teacher(x, u) -> np.ndarray:
    """``[theta_dot, theta_ddot]`` for state ``[theta, theta_dot]`` and torque ``[tau]``.

    Accepts single vectors or row-stacked batches.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    theta, theta_dot = x[..., 0], x[..., 1]
    tau = u[..., 0]
    theta_ddot = (tau - PEND_DAMPING * theta_dot
                  - PEND_MASS * GRAVITY * PEND_LC * np.sin(theta)) / PEND_INERTIA
    return np.stack([theta_dot, theta_ddot], axis=-1)


def dubins_teacher(x, u) -> np.ndarray:
    """``[v cos a, v sin a, phi]`` for state ``[px, py, a]`` and input ``[v, phi]``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    alpha = x[..., 2]
    v, phi = u[..., 0], u[..., 1]
    return np.stack([v * np.cos(alpha), v * np.sin(alpha), phi], axis=-1)


def pendulum_reference(t: float) -> np.ndarray:
    return np.array([0.12 * t, 0.12])


def dubins_planner(x, target) -> np.ndarray:
    """Next waypoint on the segment toward ``target``, per-axis step at most 0.08.

    Heading points at the target; at the target itself the current heading
    is kept.
    """
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    d = target[:2] - x[:2]
    if not np.any(d):
        return np.array([x[0], x[1], x[2]])
    scale = min(1.0, *(PLANNER_STEP / abs(di) for di in d if di != 0.0))
    p = x[:2] + scale * d
    return np.array([p[0], p[1], math.atan2(d[1], d[0])])


def sample_disturbance(rng: np.random.Generator, eps: float, m_u: int) -> np.ndarray:
    if eps < 0:
        raise ValueError("disturbance radius must be nonnegative")
    if eps == 0:
        return np.zeros(m_u)
    return rng.uniform(-eps, eps, size=m_u)


@dataclass(frozen=True, eq=False)
class EnvSpec:
    name: str
    m_x: int
    m_u: int
    teacher: Callable
    X: Polytope
    U: Polytope
    x_bounds: tuple[np.ndarray, np.ndarray]
    u_bounds: tuple[np.ndarray, np.ndarray]
    Q: np.ndarray
    R: np.ndarray
    eps_grid: tuple[float, ...]
    default_trajectories: int
    default_steps: int
    dt: float = DT
    Qf: np.ndarray = field(default=None)
    Xf: Polytope = field(default=None)

    def __post_init__(self):
        if self.Qf is None:
            object.__setattr__(self, "Qf", self.Q)
        if self.Xf is None:
            object.__setattr__(self, "Xf", self.X)

    def training_region(self, factor: float = 1.2) -> tuple[np.ndarray, np.ndarray]:
        """Box over ``[x; u]`` spanning ``factor`` times the constraint sets."""
        lo = np.concatenate([self.x_bounds[0], self.u_bounds[0]]) * factor
        hi = np.concatenate([self.x_bounds[1], self.u_bounds[1]]) * factor
        return lo, hi

    def load_model(self) -> Nndm:
        ref = resources.files("nnreach") / "models" / f"{self.name}.json"
        with resources.as_file(ref) as path:
            return load_nndm(path)


def _box_env(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return Polytope.from_box(lo, hi), (lo, hi)


def _pendulum() -> EnvSpec:
    X, xb = _box_env([-math.pi, -10.0], [math.pi, 10.0])
    U, ub = _box_env([-10.0], [10.0])
    return EnvSpec("pendulum", 2, 1, pendulum_teacher, X, U, xb, ub,
                   Q=np.eye(2), R=np.array([[0.01]]), eps_grid=(1.0, 0.1, 0.01),
                   default_trajectories=50, default_steps=50)


def _dubins() -> EnvSpec:
    X, xb = _box_env([-1.0, -1.0, -math.pi], [1.0, 1.0, math.pi])
    U, ub = _box_env([-5.0, -5.0], [5.0, 5.0])
    return EnvSpec("dubins", 3, 2, dubins_teacher, X, U, xb, ub,
                   Q=np.eye(3), R=0.01 * np.eye(2), eps_grid=(0.1, 0.01, 0.001),
                   default_trajectories=20, default_steps=20)


ENVIRONMENTS = {"pendulum": _pendulum, "dubins": _dubins}


def get_env(name: str) -> EnvSpec:
    key = name.lower()
    if key in ("dubinscar", "dubins_car"):
        key = "dubins"
    if key not in ENVIRONMENTS:
        raise KeyError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    return ENVIRONMENTS[key]()


# ------------------------------------------------------------- scenarios


def sample_initial_state(env: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    if env.name == "pendulum":
        return np.array([rng.uniform(-math.pi / 2, math.pi / 2), 0.0])
    return np.array([rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0])


def sample_target(env: EnvSpec, rng: np.random.Generator) -> np.ndarray | None:
    if env.name != "dubins":
        return None
    return np.array([rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0])


def sample_boundary_scenario(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """DubinsCar start and target hugging the upper ``p_y`` wall.

    The target is reached well inside the horizon so the car spends the rest
    of the run holding station against the wall.
    """
    x0 = np.array([rng.uniform(-0.5, -0.2), rng.uniform(0.9, 1.0), 0.0])
    target = np.array([rng.uniform(0.2, 0.5), rng.uniform(0.98, 1.0), 0.0])
    return x0, target
