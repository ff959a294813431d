"""Trajectory and sweep figures."""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from zolqr_plots.io import ParseError, read_manifest_level, read_sweep, read_trace


class PlotError(Exception):
    pass


@dataclass
class PlotJob:
    """One rendering task: input CSV(s), output image, optional manifest."""

    inputs: list[str]
    output: str
    kind: str = "trajectories"
    manifest: str | None = None
    logy: bool = False

    def __post_init__(self):
        if self.kind not in ("trajectories", "sweep"):
            raise PlotError(f"unknown plot kind {self.kind!r}")
        if not self.inputs:
            raise PlotError("at least one input CSV is required")
        for path in self.inputs:
            if not Path(path).exists():
                raise PlotError(f"input file not found: {path}")


def _panel_series(path) -> dict:
    """One panel's curves: a CSV file stands alone; a directory merges its
    trace_*.csv files (the harness writes one file per trial)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("trace_*.csv"))
        if not files:
            raise PlotError(f"{path}: no trace_*.csv files")
        merged: dict = {}
        for f in files:
            for trial, points in read_trace(f).items():
                key = trial if trial not in merged else f"{f.name}:{trial}"
                merged[key] = points
        return merged
    return read_trace(path)


@dataclass
class PlotResult:
    output: str
    slope: float | None = None
    intercept: float | None = None
    n_curves: int = 0
    all_infeasible: bool = False


def _reference_level(job: PlotJob) -> float | None:
    if job.manifest is None:
        return None
    return read_manifest_level(job.manifest)


def plot_trajectories(job: PlotJob) -> PlotResult:
    """One cost curve per trial against the iteration index, with a dashed
    line at the optimal cost when a manifest provides it.  Each input becomes
    a panel labeled (a), (b), ...; a directory input merges its per-trial
    trace files into one panel."""
    level = _reference_level(job)
    panels = []
    for path in job.inputs:
        try:
            panels.append(_panel_series(path))
        except ParseError as exc:
            raise PlotError(str(exc)) from exc

    fig, axes = plt.subplots(1, len(panels), figsize=(5.2 * len(panels), 3.6), squeeze=False)
    n_curves = 0
    for i, (ax, series) in enumerate(zip(axes[0], panels)):
        for trial in sorted(series, key=str):
            points = series[trial]
            ss = [s for s, _ in points]
            js = [j for _, j in points]
            finite = [(s, j) for s, j in zip(ss, js) if math.isfinite(j)]
            if not finite:
                continue
            ax.plot([s for s, _ in finite], [j for _, j in finite], lw=0.8, alpha=0.8)
            n_curves += 1
        if level is not None:
            ax.axhline(level, color="black", ls="--", lw=1.0, label="optimal cost")
            ax.legend(loc="upper right", fontsize=8)
        if job.logy:
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("cost")
        if len(panels) > 1:
            ax.set_title(f"({string.ascii_lowercase[i]})")
    fig.tight_layout()
    fig.savefig(job.output, dpi=150)
    plt.close(fig)
    return PlotResult(output=job.output, n_curves=n_curves)


def plot_sweep(job: PlotJob) -> PlotResult:
    """Log-log scatter of the tolerable perturbation bound against the
    accuracy level, with a least-squares line and slope annotation when at
    least two feasible points exist."""
    if len(job.inputs) != 1:
        raise PlotError("sweep plots take exactly one input CSV")
    try:
        rows = read_sweep(job.inputs[0])
    except ParseError as exc:
        raise PlotError(str(exc)) from exc

    feasible = [r for r in rows if not r["infeasible"] and r["delta_max"] > 0]
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    slope = intercept = None
    if feasible:
        eps = np.array([r["eps"] for r in feasible])
        delta = np.array([r["delta_max"] for r in feasible])
        ax.loglog(eps, delta, "o", color="tab:blue", label="measured bound")
        if len(feasible) >= 2:
            slope, intercept = np.polyfit(np.log(eps), np.log(delta), 1)
            slope, intercept = float(slope), float(intercept)
            grid = np.geomspace(eps.min(), eps.max(), 50)
            ax.loglog(grid, np.exp(intercept) * grid**slope, "-", color="tab:orange",
                      label=f"fit, slope {slope:.3f}")
        ax.legend(fontsize=8)
    else:
        ax.text(0.5, 0.5, "all accuracy levels infeasible", ha="center", va="center",
                transform=ax.transAxes)
    ax.set_xlabel("accuracy level")
    ax.set_ylabel("tolerable perturbation bound")
    fig.tight_layout()
    fig.savefig(job.output, dpi=150)
    plt.close(fig)
    return PlotResult(output=job.output, slope=slope, intercept=intercept,
                      n_curves=len(feasible), all_infeasible=not feasible)
