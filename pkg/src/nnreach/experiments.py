"""Closed-loop tracking runs, method comparisons and the feedback reach demo.

The trained NNDM is the simulated plant: the disturbance enters its control
channel and the controllers plan with the same model, disturbance free.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import (EnvSpec, dubins_planner, get_env, pendulum_reference, sample_boundary_scenario,
                   sample_disturbance, sample_initial_state, sample_target)
from .nn import Nndm, load_nndm, nndm_step
from .numerics import BoxSet
from .output import emit_csv
from .reach import (FeedbackGain, NoStabilizingGain, feedback_reach, find_feedback_gain,
                    nominal_rollout, reach_function)
from .solver import MODES, SolverOptions, TrackingProblem, initial_guess, solve
from .tube import tube_control_step

log = logging.getLogger(__name__)

SCENARIOS = ("standard", "boundary")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "pendulum"
    method: str = "reach"
    eps: float = 0.01
    steps: int | None = None
    horizon: int = 1
    seed: int = 0
    trajectories: int | None = None
    model: str | None = None
    out: str | None = None
    scenario: str = "standard"

    def __post_init__(self):
        try:
            spec = get_env(self.env)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        self.env = spec.name
        if self.method not in MODES:
            raise ConfigError(f"method must be one of {MODES}, got {self.method!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.scenario == "boundary" and spec.name != "dubins":
            raise ConfigError("the boundary scenario exists for dubins only")
        if self.steps is None:
            self.steps = spec.default_steps
        if self.trajectories is None:
            self.trajectories = spec.default_trajectories
        if not (isinstance(self.eps, (int, float)) and math.isfinite(self.eps)) or self.eps < 0:
            raise ConfigError(f"eps must be a finite nonnegative number, got {self.eps!r}")
        self.eps = float(self.eps)
        for name in ("steps", "horizon", "trajectories"):
            val = getattr(self, name)
            if not isinstance(val, int) or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")

    @property
    def spec(self) -> EnvSpec:
        return get_env(self.env)

    def load_model(self) -> Nndm:
        if self.model:
            return load_nndm(self.model)
        return self.spec.load_model()


@dataclass
class StepRecord:
    k: int
    state: np.ndarray       # x_k before the step
    reference: np.ndarray   # r_{k+1}, the target of this step
    input: np.ndarray       # applied nominal input
    disturbance: np.ndarray
    next_state: np.ndarray
    cost: float
    error: float
    area: float
    set_time: float
    solve_time: float
    converged: bool
    violated: bool


@dataclass
class TrajectoryRecord:
    env: str
    method: str
    eps: float
    seed: int
    index: int
    x0: np.ndarray
    target: np.ndarray | None
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def mean_cost(self) -> float:
        return float(np.mean([s.cost for s in self.steps]))

    @property
    def mean_error(self) -> float:
        return float(np.mean([s.error for s in self.steps]))

    @property
    def violations(self) -> int:
        return sum(s.violated for s in self.steps)

    @property
    def unconverged(self) -> int:
        return sum(not s.converged for s in self.steps)

    @property
    def states(self) -> np.ndarray:
        return np.array([self.x0] + [s.next_state for s in self.steps])


def trajectory_streams(seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (initial condition, disturbance) generators for one trajectory.

    Keyed on ``(seed, index)`` only, so every method sees the same starts and
    disturbances and the set does not depend on execution order.
    """
    init = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, 0)))
    dist = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, 1)))
    return init, dist


def _references(spec: EnvSpec, k: int, x, horizon: int, target, last_ref) -> np.ndarray:
    if spec.name == "pendulum":
        return np.array([pendulum_reference((k + i) * spec.dt) for i in range(horizon + 1)])
    refs = [np.asarray(x if last_ref is None else last_ref, dtype=float)]
    wp = x
    for _ in range(horizon):
        wp = dubins_planner(wp, target)
        # heading taken 2*pi-nearest to the previous one so errors do not see the wrap
        wp[2] = refs[-1][2] + _wrap(wp[2] - refs[-1][2]) if len(refs) > 1 \
            else x[2] + _wrap(wp[2] - x[2])
        refs.append(wp)
    return np.array(refs)


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _area(box: BoxSet) -> float:
    w = box.width
    return float(w[0] * w[1])


def run_tracking(config: RunConfig, index: int = 0, nndm: Nndm | None = None,
                 options: SolverOptions | None = None) -> TrajectoryRecord:
    """Simulate one closed-loop trajectory; trajectory ``index`` of the seed's set."""
    spec = config.spec
    nndm = config.load_model() if nndm is None else nndm
    init_rng, dist_rng = trajectory_streams(config.seed, index)
    if config.scenario == "boundary":
        x, target = sample_boundary_scenario(init_rng)
    else:
        x = sample_initial_state(spec, init_rng)
        target = sample_target(spec, init_rng)
    rec = TrajectoryRecord(spec.name, config.method, config.eps, config.seed, index,
                           x.copy(), target)
    previous = None
    u_prev = None
    last_ref = None
    N = config.horizon
    for k in range(config.steps):
        refs = _references(spec, k, x, N, target, last_ref)
        problem = TrackingProblem(N, spec.Q, spec.R, spec.Qf, refs, spec.X, spec.Xf, spec.U,
                                  config.eps, spec.dt)
        area = math.nan
        set_time = 0.0
        if config.method == "tube":
            u, diag = tube_control_step(nndm, problem, x, u_prev, options, previous=previous)
            converged = diag.converged
            area = diag.area
            set_time = diag.set_time
            solve_time = diag.solve_time
            previous = diag.report.controls if diag.report is not None else None
        else:
            guess = initial_guess(problem, config.method, previous)
            report = solve(problem, nndm, x, config.method, u_init=guess, options=options)
            u = report.controls[0]
            converged = report.converged
            solve_time = report.wall_time
            previous = report.controls
            if config.method == "reach":
                t0 = time.perf_counter()
                r1 = reach_function(nndm, x, report.controls[:1], config.eps)[0].box
                set_time = time.perf_counter() - t0
                area = _area(r1)
        w = sample_disturbance(dist_rng, config.eps, spec.m_u)
        x_next = nndm_step(nndm, x, u, w)
        r = refs[1]
        e = x_next - r
        cost = float(e @ spec.Q @ e + u @ spec.R @ u)
        rec.steps.append(StepRecord(k, x.copy(), r.copy(), np.array(u, dtype=float), w, x_next,
                                    cost, float(np.linalg.norm(e)), float(area), set_time,
                                    solve_time, bool(converged),
                                    not spec.X.contains(x_next, atol=0.0)))
        last_ref = r
        u_prev = np.array(u, dtype=float)
        x = x_next
    return rec


def _run_one(args):
    config, index, model_dict = args
    from .nn import nndm_from_dict
    nndm = nndm_from_dict(model_dict) if model_dict is not None else None
    return run_tracking(config, index, nndm)


def run_batch(config: RunConfig, nndm: Nndm | None = None, jobs: int = 1) -> list[TrajectoryRecord]:
    """All ``config.trajectories`` trajectories, optionally in worker processes."""
    nndm = config.load_model() if nndm is None else nndm
    if jobs <= 1:
        return [run_tracking(config, i, nndm) for i in range(config.trajectories)]
    from .nn import nndm_to_dict
    payload = nndm_to_dict(nndm)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, [(config, i, payload) for i in range(config.trajectories)]))


# ------------------------------------------------------------------ tables

def trajectory_header(m_x: int, m_u: int) -> list[str]:
    return (["env", "method", "eps", "seed", "traj", "k"]
            + [f"x{i}" for i in range(m_x)] + [f"r{i}" for i in range(m_x)]
            + [f"u{i}" for i in range(m_u)] + [f"w{i}" for i in range(m_u)]
            + ["cost", "err", "area", "converged", "violated"])


def trajectory_rows(records: list[TrajectoryRecord]):
    for rec in records:
        for s in rec.steps:
            yield ([rec.env, rec.method, rec.eps, rec.seed, rec.index, s.k]
                   + list(s.next_state) + list(s.reference) + list(s.input)
                   + list(s.disturbance) + [s.cost, s.error, s.area, s.converged, s.violated])


TIMING_HEADER = ["env", "method", "eps", "seed", "traj", "k", "set_time", "solve_time"]


def timing_rows(records: list[TrajectoryRecord]):
    for rec in records:
        for s in rec.steps:
            yield [rec.env, rec.method, rec.eps, rec.seed, rec.index, s.k, s.set_time, s.solve_time]


SUMMARY_HEADER = ["env", "scenario", "method", "eps", "trajectories", "steps",
                  "mean_cost", "std_cost", "mean_err", "std_err",
                  "violations", "violating_trajectories", "unconverged"]
TIMING_SUMMARY_HEADER = ["env", "scenario", "method", "eps", "mean_set_time",
                         "mean_solve_time", "max_solve_time"]


@dataclass
class SummaryRow:
    env: str
    scenario: str
    method: str
    eps: float
    trajectories: int
    steps: int
    mean_cost: float
    std_cost: float
    mean_err: float
    std_err: float
    violations: int
    violating_trajectories: int
    unconverged: int
    mean_set_time: float
    mean_solve_time: float
    max_solve_time: float

    def row(self):
        return [self.env, self.scenario, self.method, self.eps, self.trajectories, self.steps,
                self.mean_cost, self.std_cost, self.mean_err, self.std_err,
                self.violations, self.violating_trajectories, self.unconverged]

    def timing_row(self):
        return [self.env, self.scenario, self.method, self.eps, self.mean_set_time,
                self.mean_solve_time, self.max_solve_time]


def summarize(records: list[TrajectoryRecord], scenario: str = "standard") -> SummaryRow:
    """Pooled per-step statistics of one (env, method, eps) group."""
    if not records:
        raise ValueError("no trajectories to summarise")
    steps = [s for r in records for s in r.steps]
    cost = np.array([s.cost for s in steps])
    err = np.array([s.error for s in steps])
    solve_t = np.array([s.solve_time for s in steps])
    set_t = np.array([s.set_time for s in steps])
    r0 = records[0]
    return SummaryRow(r0.env, scenario, r0.method, r0.eps, len(records), len(steps),
                      float(cost.mean()), float(cost.std()), float(err.mean()), float(err.std()),
                      sum(r.violations for r in records),
                      sum(r.violations > 0 for r in records),
                      sum(r.unconverged for r in records),
                      float(set_t.mean()), float(solve_t.mean()), float(solve_t.max()))


def batch_compare(env: str, methods, eps_list, seed: int = 0, trajectories: int | None = None,
                  steps: int | None = None, horizon: int = 1, scenario: str = "standard",
                  model: str | None = None, out=None, jobs: int = 1):
    """Run every (method, eps) pair on a shared trajectory set.

    Returns ``(summary_rows, records)`` where ``records`` maps
    ``(method, eps)`` to trajectory records. With ``out`` the summary, the
    timing summary and the raw per-step tables are written there.
    """
    rows = []
    records = {}
    nndm = None
    for eps in eps_list:
        for method in methods:
            cfg = RunConfig(env, method, eps, steps, horizon, seed, trajectories, model,
                            None, scenario)
            nndm = cfg.load_model() if nndm is None else nndm
            recs = run_batch(cfg, nndm, jobs)
            records[(method, cfg.eps)] = recs
            rows.append(summarize(recs, scenario))
            log.info("%s %s eps=%g cost=%.4g err=%.4g viol=%d", env, method, eps,
                     rows[-1].mean_cost, rows[-1].mean_err, rows[-1].violations)
    if out is not None:
        write_compare(out, rows, records, scenario)
    return rows, records


def write_compare(out, rows, records, scenario="standard"):
    out = Path(out)
    tag = "" if scenario == "standard" else f"_{scenario}"
    emit_csv(out / f"summary{tag}.csv", SUMMARY_HEADER, [r.row() for r in rows])
    emit_csv(out / f"timings_summary{tag}.csv", TIMING_SUMMARY_HEADER,
             [r.timing_row() for r in rows])
    all_recs = [r for recs in records.values() for r in recs]
    if all_recs:
        spec = get_env(all_recs[0].env)
        emit_csv(out / f"steps{tag}.csv", trajectory_header(spec.m_x, spec.m_u),
                 trajectory_rows(all_recs))
        emit_csv(out / f"timings{tag}.csv", TIMING_HEADER, timing_rows(all_recs))


def set_area_series(records: list[TrajectoryRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-step ``(k, mean area, std area)`` across trajectories (k counted from 1)."""
    if not records:
        raise ValueError("no trajectories")
    areas = np.array([[s.area for s in r.steps] for r in records])
    k = np.arange(1, areas.shape[1] + 1)
    return k, areas.mean(axis=0), areas.std(axis=0)


# ------------------------------------------------------------- feedback demo

DEMO_X0 = (-0.8, 0.0, 0.0)
DEMO_INPUT = (0.4, 0.0)
DEMO_STATE_RADIUS = 0.05


@dataclass
class FeedbackDemo:
    gain: FeedbackGain
    x_nominal: np.ndarray
    u_nominal: np.ndarray
    open_widths: np.ndarray      # projected (p_x, p_y) width per step 1..T
    feedback_widths: np.ndarray
    open_boxes: list
    feedback_boxes: list

    def width(self, series: np.ndarray, k: int) -> float:
        return float(series[k - 1])

    @property
    def open_ratio(self) -> float:
        """Open-loop width at the last step over the width at step 5."""
        return float(self.open_widths[-1] / self.open_widths[4])

    @property
    def feedback_ratio(self) -> float:
        """Largest closed-loop width over the closed-loop width at step 5."""
        return float(self.feedback_widths.max() / self.feedback_widths[4])


def _projected_width(box: BoxSet) -> float:
    return float(box.width[:2].max())


def feedback_demo(eps: float = 0.01, steps: int = 35, x0=DEMO_X0, u_nominal=DEMO_INPUT,
                  nndm: Nndm | None = None, model: str | None = None) -> FeedbackDemo:
    """Reach boxes of a straight DubinsCar run with and without a feedback gain.

    The gain comes from the one-step envelopes on a box around the start
    (state radius 0.05, input radius ``eps``). Raises ``NoStabilizingGain``
    when it is not accepted.
    """
    if steps < 5:
        raise ValueError("need at least 5 steps to form the growth ratios")
    if nndm is None:
        nndm = load_nndm(model) if model else get_env("dubins").load_model()
    x0 = np.asarray(x0, dtype=float)
    us = np.tile(np.asarray(u_nominal, dtype=float), (steps, 1))
    xs = nominal_rollout(nndm, x0, us)
    radius = np.concatenate([np.full(nndm.m_x, DEMO_STATE_RADIUS), np.full(nndm.m_u, eps)])
    gain = find_feedback_gain(nndm, BoxSet.around(np.concatenate([x0, us[0]]), radius))
    if not gain.accepted:
        raise NoStabilizingGain(f"closed-loop radii {gain.radius_upper:.4g}, "
                                f"{gain.radius_lower:.4g}")
    open_boxes = [r.box for r in feedback_reach(nndm, np.zeros_like(gain.G), xs, us, eps)]
    fb_boxes = [r.box for r in feedback_reach(nndm, gain.G, xs, us, eps)]
    return FeedbackDemo(gain, xs, us,
                        np.array([_projected_width(b) for b in open_boxes]),
                        np.array([_projected_width(b) for b in fb_boxes]),
                        open_boxes, fb_boxes)
