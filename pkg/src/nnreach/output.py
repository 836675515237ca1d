"""CSV and SVG writers with byte-stable output."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row of length {len(row)} for {len(header)} columns")
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def emit_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write RFC-4180 CSV; floats use the shortest round-trip repr."""
    path = Path(path)
    text = csv_text(header, rows)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "nnreach"
    plt.rcParams["svg.fonttype"] = "path"
    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    finally:
        fig.clf()
        _pyplot().close(fig)
    return path


def emit_svg(path, series: dict, xlabel: str, ylabel: str, title: str = "",
             ribbon: bool = False, logy: bool = False) -> Path:
    """Line plot of named series.

    With ``ribbon`` each value is ``(x, mean, std)`` and a mean +- std band is
    drawn; otherwise ``(x, y)``.
    """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, data in series.items():
        x = np.asarray(data[0], dtype=float)
        y = np.asarray(data[1], dtype=float)
        line, = ax.plot(x, y, label=name)
        if ribbon:
            s = np.asarray(data[2], dtype=float)
            ax.fill_between(x, y - s, y + s, color=line.get_color(), alpha=0.25, linewidth=0)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if series:
        ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def emit_trajectories_svg(path, trajectories: dict, xlabel: str = "x", ylabel: str = "y",
                          bounds=None, title: str = "") -> Path:
    """2-D state paths; ``trajectories`` maps a label to a list of (T, 2) arrays."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (name, paths) in enumerate(trajectories.items()):
        c = colors[i % len(colors)]
        for j, p in enumerate(paths):
            p = np.asarray(p, dtype=float)
            ax.plot(p[:, 0], p[:, 1], color=c, linewidth=0.8, label=name if j == 0 else None)
    if bounds is not None:
        (x0, x1), (y0, y1) = bounds
        ax.plot([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], "k--", linewidth=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if trajectories:
        ax.legend()
    fig.tight_layout()
    return _save(fig, path)
