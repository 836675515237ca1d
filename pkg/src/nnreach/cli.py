"""Command-line entry point: ``nnreach <command> [options]``.

Every option can also come from ``--config file.{toml,json}``; flags given on
the command line win over the file. Exit status is 0 on success, 2 for bad
configuration (including unreadable or unwritable paths) and 3 when more
than half of the control steps did not converge.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .envs import get_env
from .experiments import (ConfigError, RunConfig, batch_compare, feedback_demo, run_batch,
                          set_area_series, summarize, timing_rows, trajectory_header,
                          trajectory_rows, write_compare, SUMMARY_HEADER, TIMING_HEADER)
from .nn import FitConfig, ModelFormatError, Nndm, fit, load_nndm, save_model
from .output import emit_csv, emit_svg, emit_trajectories_svg
from .reach import NoStabilizingGain, reach_function

log = logging.getLogger("nnreach")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNCONVERGED = 3


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _strings(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nnreach", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="TOML or JSON file with option values")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    f = sub.add_parser("fit", help="train an NNDM on teacher samples", argument_default=S)
    f.add_argument("--env")
    f.add_argument("--out")
    f.add_argument("--seed", type=int)
    f.add_argument("--samples", type=int)
    f.add_argument("--epochs", type=int)
    f.add_argument("--hidden", type=lambda s: tuple(int(v) for v in s.split(",")),
                   help="hidden layer widths, e.g. 32,32")

    r = sub.add_parser("reach", help="reach boxes of a control sequence", argument_default=S)
    r.add_argument("--model", help="model JSON (or an environment name)")
    r.add_argument("--x0", type=_floats)
    r.add_argument("--controls", help="inputs separated by ';', components by ','")
    r.add_argument("--eps", type=float)
    r.add_argument("--out", help="CSV path (stdout if omitted)")

    t = sub.add_parser("track", help="closed-loop tracking runs", argument_default=S)
    t.add_argument("--env")
    t.add_argument("--method", choices=("reach", "tube", "naive"))
    t.add_argument("--eps", type=float)
    t.add_argument("--steps", type=int)
    t.add_argument("--n", "--horizon", dest="horizon", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--trajectories", type=int)
    t.add_argument("--scenario", choices=("standard", "boundary"))
    t.add_argument("--model")
    t.add_argument("--jobs", type=int)
    t.add_argument("--out")

    c = sub.add_parser("compare", help="method comparison tables", argument_default=S)
    c.add_argument("--env")
    c.add_argument("--eps-list", dest="eps_list", type=_floats)
    c.add_argument("--methods", type=_strings)
    c.add_argument("--seeds", dest="trajectories", type=int,
                   help="number of seeded trajectories per (method, eps)")
    c.add_argument("--seed", type=int, help="master seed")
    c.add_argument("--steps", type=int)
    c.add_argument("--n", "--horizon", dest="horizon", type=int)
    c.add_argument("--scenario", choices=("standard", "boundary"))
    c.add_argument("--model")
    c.add_argument("--jobs", type=int)
    c.add_argument("--out")

    d = sub.add_parser("feedback-demo", help="reach widths with and without feedback",
                       argument_default=S)
    d.add_argument("--env")
    d.add_argument("--eps", type=float)
    d.add_argument("--steps", type=int)
    d.add_argument("--model")
    d.add_argument("--out")
    return p


DEFAULTS = {
    "fit": {"env": "pendulum", "out": "model.json", "seed": 0, "samples": 50000,
            "epochs": 300, "hidden": (32, 32)},
    "reach": {"model": None, "x0": None, "controls": None, "eps": 0.01, "out": None},
    "track": {"env": "pendulum", "method": "reach", "eps": 0.01, "steps": None, "horizon": 1,
              "seed": 0, "trajectories": 1, "scenario": "standard", "model": None, "jobs": 1,
              "out": "out/track"},
    "compare": {"env": "pendulum", "eps_list": None, "methods": ["reach", "tube", "naive"],
                "trajectories": None, "seed": 0, "steps": None, "horizon": 1,
                "scenario": "standard", "model": None, "jobs": 1, "out": "out/compare"},
    "feedback-demo": {"env": "dubins", "eps": 0.01, "steps": 35, "model": None,
                      "out": "out/feedback"},
}

_ALIASES = {"n": "horizon", "seeds": "trajectories", "eps-list": "eps_list"}


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            doc = tomllib.loads(raw.decode("utf-8"))
        else:
            doc = json.loads(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a table/object")
    return doc


def _normalise(command: str, doc: dict) -> dict:
    """Options for ``command``: top-level keys overlaid by its own section.

    Unknown keys inside the command's section are errors; unknown top-level
    keys are ignored since they may belong to another command.
    """
    allowed = DEFAULTS[command]

    def fold(items, strict):
        out = {}
        for key, val in items:
            key = _ALIASES.get(key, key).replace("-", "_")
            if key not in allowed:
                if strict:
                    raise ConfigError(f"unknown option {key!r} for {command}")
                log.debug("config key %s ignored for %s", key, command)
                continue
            if key == "eps_list" and isinstance(val, (int, float)):
                val = [val]
            elif key in ("eps_list", "x0") and isinstance(val, str):
                val = _floats(val)
            elif key == "methods" and isinstance(val, str):
                val = _strings(val)
            out[key] = val
        return out

    opts = fold(((k, v) for k, v in doc.items() if not isinstance(v, dict)), strict=False)
    section = doc.get(command, doc.get(command.replace("-", "_")))
    if isinstance(section, dict):
        opts.update(fold(section.items(), strict=True))
    return opts


def resolve_options(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then command-line flags."""
    opts = dict(DEFAULTS[args.command])
    if args.config:
        opts.update(_normalise(args.command, load_config_file(args.config)))
    for key in DEFAULTS[args.command]:
        if hasattr(args, key):
            opts[key] = getattr(args, key)
    return opts


# ---------------------------------------------------------------- commands


def _env(name):
    try:
        return get_env(str(name))
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None


def cmd_fit(o: dict) -> int:
    spec = _env(o["env"])
    lo, hi = spec.training_region()
    cfg = FitConfig(lo, hi, samples=int(o["samples"]), hidden=tuple(o["hidden"]),
                    epochs=int(o["epochs"]), seed=int(o["seed"]))
    res = fit(spec.teacher, spec.m_x, cfg)
    out = Path(o["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(Nndm(res.model, spec.dt, spec.m_x, spec.m_u), out)
    print(f"train_mse={res.train_mse:.6g} holdout_mse={res.holdout_mse:.6g} -> {out}")
    return EXIT_OK


def _model_arg(name) -> Nndm:
    if name is None:
        raise ConfigError("--model is required")
    try:
        spec = get_env(name)
    except KeyError:
        if not Path(name).is_file():
            raise ConfigError(f"model file {name} not found") from None
        return load_nndm(name)
    return spec.load_model()


def parse_controls(text, m_u: int) -> np.ndarray:
    if text is None:
        raise ConfigError("--controls is required")
    if isinstance(text, str):
        rows = [_floats(part) for part in text.split(";") if part.strip()]
    else:
        rows = [np.atleast_1d(np.asarray(r, dtype=float)).tolist() for r in text]
    arr = np.array(rows, dtype=float)
    if arr.ndim == 1 or arr.shape[1] != m_u:
        if arr.size % m_u:
            raise ConfigError(f"controls do not split into inputs of size {m_u}")
        arr = arr.reshape(-1, m_u)
    if arr.shape[0] == 0:
        raise ConfigError("need at least one control")
    return arr


def cmd_reach(o: dict) -> int:
    nndm = _model_arg(o["model"])
    if o["x0"] is None:
        raise ConfigError("--x0 is required")
    x0 = np.asarray(o["x0"], dtype=float)
    if x0.shape != (nndm.m_x,):
        raise ConfigError(f"x0 needs {nndm.m_x} components")
    controls = parse_controls(o["controls"], nndm.m_u)
    eps = float(o["eps"])
    if eps < 0:
        raise ConfigError("eps must be nonnegative")
    sets = reach_function(nndm, x0, controls, eps)
    header = (["k"] + [f"lo{i}" for i in range(nndm.m_x)] + [f"hi{i}" for i in range(nndm.m_x)])
    rows = [[r.k] + list(r.box.lower) + list(r.box.upper) for r in sets]
    if o["out"]:
        emit_csv(o["out"], header, rows)
    else:
        from .output import csv_text
        sys.stdout.write(csv_text(header, rows))
    return EXIT_OK


def _run_config(o: dict, method=None, eps=None) -> RunConfig:
    return RunConfig(o["env"], method or o["method"], o["eps"] if eps is None else eps,
                     o["steps"], o["horizon"], o["seed"], o["trajectories"], o["model"],
                     o["out"], o["scenario"])


def _unconverged_share(records) -> float:
    total = sum(len(r.steps) for r in records)
    return sum(r.unconverged for r in records) / max(total, 1)


def cmd_track(o: dict) -> int:
    cfg = _run_config(o)
    records = run_batch(cfg, jobs=int(o["jobs"]))
    out = Path(o["out"])
    spec = cfg.spec
    emit_csv(out / "trajectory.csv", trajectory_header(spec.m_x, spec.m_u), trajectory_rows(records))
    emit_csv(out / "timings.csv", TIMING_HEADER, timing_rows(records))
    emit_csv(out / "summary.csv", SUMMARY_HEADER, [summarize(records, cfg.scenario).row()])
    k = np.arange(1, cfg.steps + 1)
    emit_svg(out / "error.svg",
             {f"traj {r.index}": (k, [s.error for s in r.steps]) for r in records},
             "step", "tracking error")
    if spec.name == "dubins":
        emit_trajectories_svg(out / "paths.svg", {cfg.method: [r.states[:, :2] for r in records]},
                              "p_x", "p_y", bounds=((-1, 1), (-1, 1)))
    row = summarize(records, cfg.scenario)
    print(f"{cfg.env} {cfg.method} eps={cfg.eps:g}: cost={row.mean_cost:.4g} "
          f"err={row.mean_err:.4g} violations={row.violations} unconverged={row.unconverged}")
    return EXIT_UNCONVERGED if _unconverged_share(records) > 0.5 else EXIT_OK


def cmd_compare(o: dict) -> int:
    spec = _env(o["env"])
    eps_list = o["eps_list"] or list(spec.eps_grid)
    methods = list(o["methods"])
    rows, records = batch_compare(spec.name, methods, eps_list, o["seed"], o["trajectories"],
                                  o["steps"], o["horizon"], o["scenario"], o["model"],
                                  None, int(o["jobs"]))
    out = Path(o["out"])
    write_compare(out, rows, records, o["scenario"])
    tag = "" if o["scenario"] == "standard" else f"_{o['scenario']}"
    area_rows = []
    for eps in sorted({r.eps for r in rows}):
        series = {}
        for m in methods:
            if m == "naive":
                continue
            k, mean, std = set_area_series(records[(m, float(eps))])
            series[m] = (k, mean, std)
            area_rows.extend([m, eps, int(kk), mm, ss] for kk, mm, ss in zip(k, mean, std))
        if series:
            emit_svg(out / f"areas{tag}_eps{eps:g}.svg", series, "step", "set area",
                     title=f"{spec.name}, eps={eps:g}", ribbon=True, logy=True)
    emit_csv(out / f"areas{tag}.csv", ["method", "eps", "k", "mean_area", "std_area"], area_rows)
    for r in rows:
        print(f"{r.env} {r.method} eps={r.eps:g}: cost={r.mean_cost:.4g}+-{r.std_cost:.3g} "
              f"err={r.mean_err:.4g}+-{r.std_err:.3g} violations={r.violations} "
              f"unconverged={r.unconverged}")
    all_recs = [x for recs in records.values() for x in recs]
    return EXIT_UNCONVERGED if _unconverged_share(all_recs) > 0.5 else EXIT_OK


def cmd_feedback(o: dict) -> int:
    if _env(o["env"]).name != "dubins":
        raise ConfigError("feedback-demo runs on the dubins environment")
    nndm = _model_arg(o["model"]) if o["model"] else None
    demo = feedback_demo(float(o["eps"]), int(o["steps"]), nndm=nndm)
    out = Path(o["out"])
    k = np.arange(1, len(demo.open_widths) + 1)
    emit_csv(out / "widths.csv", ["k", "open_loop", "feedback"],
             zip(k.tolist(), demo.open_widths, demo.feedback_widths))
    emit_svg(out / "widths.svg", {"G = 0": (k, demo.open_widths),
                                  "feedback G": (k, demo.feedback_widths)},
             "step", "projected reach width", logy=True)
    g = demo.gain
    print(f"gain radii upper={g.radius_upper:.4f} lower={g.radius_lower:.4f} gamma={g.gamma:.4g}")
    print(f"open-loop width(T)/width(5) = {demo.open_ratio:.3f}")
    print(f"feedback max width/width(5) = {demo.feedback_ratio:.3f}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "reach": cmd_reach, "track": cmd_track, "compare": cmd_compare,
            "feedback-demo": cmd_feedback}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except (ConfigError, ModelFormatError, ValueError, OSError) as exc:
        print(f"nnreach: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoStabilizingGain as exc:
        print(f"nnreach: no stabilising gain: {exc}", file=sys.stderr)
        return EXIT_UNCONVERGED


if __name__ == "__main__":
    sys.exit(main())
