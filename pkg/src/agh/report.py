"""Delimited output and figure rendering for training logs and benchmarks.

CSV files are written with a stable column order, ``repr``-formatted floats
and ``\\n`` line endings so identical data produces identical bytes. Figures
render through the Agg backend straight to files; no display is required.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import FormatError  # noqa: E402

TRAIN_COLUMNS = ("epoch", "train_cost", "val_cost", "baseline_cost", "swapped", "seconds")
BENCH_COLUMNS = (
    "solver",
    "instances",
    "failures",
    "mean_objective",
    "mean_gap",
    "mean_seconds",
)
DETAIL_COLUMNS = ("instance", "solver", "status", "objective", "seconds")
EVENT_COLUMNS = (
    "time",
    "revealed",
    "rejected",
    "n_frozen",
    "n_pending",
    "total_cost",
    "incremental_cost",
)


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row[c]) for c in columns])


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        rows = [dict(zip(columns, line)) for line in reader if line]
    return columns, rows


def _require(columns: list[str], needed: tuple[str, ...], path) -> None:
    missing = [c for c in needed if c not in columns]
    if missing:
        raise FormatError(f"{path}: missing CSV columns {missing}")


def training_curve(csv_path, out_path) -> Path:
    """Objective-vs-epoch figure: training / validation / running-best lines."""
    columns, rows = read_csv(csv_path)
    _require(columns, ("epoch", "train_cost", "val_cost"), csv_path)
    if not rows:
        raise FormatError(f"{csv_path}: no data rows")
    epochs = [int(r["epoch"]) for r in rows]
    train = [float(r["train_cost"]) for r in rows]
    val = [float(r["val_cost"]) for r in rows]
    best = []
    for v in val:
        best.append(v if not best else min(best[-1], v))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, train, label="training (sampled)", color="tab:gray", lw=1.0)
    ax.plot(epochs, val, label="validation (greedy)", color="tab:blue", lw=1.5)
    ax.plot(epochs, best, label="validation best so far", color="tab:orange", ls="--")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean total distance")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def gap_bars(csv_path, out_path) -> Path:
    """Mean-gap-per-solver bar chart from a benchmark summary CSV."""
    columns, rows = read_csv(csv_path)
    _require(columns, ("solver", "mean_gap"), csv_path)
    if not rows:
        raise FormatError(f"{csv_path}: no data rows")
    names = [r["solver"] for r in rows]
    gaps = [float(r["mean_gap"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(range(len(names)), gaps, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("mean gap to best found")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def objective_bars(csv_path, out_path) -> Path:
    """Mean-objective-per-solver bar chart from a benchmark summary CSV."""
    columns, rows = read_csv(csv_path)
    _require(columns, ("solver", "mean_objective"), csv_path)
    if not rows:
        raise FormatError(f"{csv_path}: no data rows")
    names = [r["solver"] for r in rows]
    objs = [float(r["mean_objective"]) if r["mean_objective"] else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(range(len(names)), objs, color="tab:green")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("mean total distance")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def render(csv_path, out_dir) -> list[Path]:
    """Render every figure the CSV's columns support; returns written paths."""
    columns, rows = read_csv(csv_path)
    if not rows:
        raise FormatError(f"{csv_path}: no data rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if {"epoch", "train_cost", "val_cost"} <= set(columns):
        written.append(training_curve(csv_path, out_dir / "objective_vs_epoch.png"))
    if {"solver", "mean_gap"} <= set(columns):
        written.append(gap_bars(csv_path, out_dir / "gap_bars.png"))
    if {"solver", "mean_objective"} <= set(columns):
        written.append(objective_bars(csv_path, out_dir / "objective_bars.png"))
    if not written:
        raise FormatError(f"{csv_path}: no renderable columns found")
    return written
