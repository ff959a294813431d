"""Experiment drivers: convergence traces, tolerable-perturbation sweeps, and
rollout-length studies, with seeded reproducible trials and CSV/manifest
artifacts.

Determinism contract: a given ExperimentSpec (including its seed) produces
byte-identical CSVs regardless of the worker count.  Each trial owns an
RngStream keyed by its index; outputs are collected by index, never by
completion order.
"""

from __future__ import annotations

import json
import math
import sys as _sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import zolqr
from zolqr.lqr_core import (
    EstimationError,
    InvalidInputError,
    LtiSystem,
    cost_exact,
    solve_dare,
)
from zolqr.sampling import InitialStateDist, RngStream, sample_sphere
from zolqr.theory_params import (
    ConstantsEstimate,
    DecayFit,
    estimate_constants,
    fit_decay,
    rollout_length_bound,
    sample_sublevel,
)
from zolqr.zo_optim import AlgoConfig, PerturbationModel, RunTrace, run_descent

TRACE_HEADER = "trial,s,J_exact,gap,grad_norm_exact,G_norm,E_norm,tau_flag,diverged"
SUMMARY_HEADER = "trial,final_gap,tau,diverged,iters_run"
SWEEP_HEADER = "eps,delta_max,success_rate,trials,infeasible"
ROLLOUT_HEADER = "t_delta,trial,final_gap,tau,diverged,iters_run"
PREDICTION_HEADER = "eps,t_delta_predicted"

# RngStream ids: trials are small integers; auxiliary draws live far away.
K0_STREAM = 1_000_000
CONSTANTS_STREAM = 1_000_001
DECAY_STREAM = 1_000_002
SWEEP_TRIAL_BASE = 2_000_000
ROLLOUT_TRIAL_BASE = 3_000_000

EXPERIMENTS = ("convergence", "delta_sweep", "rollout_study", "constants_report")


@dataclass
class ExperimentSpec:
    """Everything needed to re-run an experiment."""

    system: LtiSystem
    experiment: str = "convergence"
    trials: int = 20
    seed: int = 0
    mode: str = "two_point"
    eta: float = 5e-6
    r: float = 0.03
    delta: float = 0.0
    iters: int = 3000
    t_delta: int | None = None
    t_delta_grid: tuple[int, ...] = (5, 10, 20, 40)
    eps_list: tuple[float, ...] | None = None
    init_state: str = "signed"
    target_gap: float | None = None
    k0: np.ndarray | None = None
    out_dir: str = "out"
    workers: int = 1
    trace_every: int = 1
    success_fraction: float = 0.75
    bisect_rounds: int = 12
    bisect_rel_width: float = 0.05
    constants_probes: int = 400
    fit_probes: int = 200
    fit_horizon: int = 300
    mu_safety: float = 0.5

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidInputError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if self.init_state not in ("signed", "canonical"):
            raise InvalidInputError("init_state must be 'signed' or 'canonical'")
        if self.workers < 1:
            raise InvalidInputError("workers must be >= 1")
        if self.trace_every < 1:
            raise InvalidInputError("trace_every must be >= 1")
        if self.eps_list is not None:
            if not self.eps_list or any(e <= 0 or not math.isfinite(e) for e in self.eps_list):
                raise InvalidInputError("eps levels must be positive and finite")

    def dist(self) -> InitialStateDist:
        mode = "signed_scaled_basis" if self.init_state == "signed" else "canonical_basis"
        return InitialStateDist(mode, self.system.n)

    def to_json_dict(self) -> dict:
        doc = {
            "experiment": self.experiment,
            "trials": self.trials,
            "seed": self.seed,
            "mode": self.mode,
            "eta": self.eta,
            "r": self.r,
            "delta": self.delta,
            "iters": self.iters,
            "t_delta": self.t_delta,
            "t_delta_grid": list(self.t_delta_grid),
            "eps_list": None if self.eps_list is None else list(self.eps_list),
            "init_state": self.init_state,
            "target_gap": self.target_gap,
            "k0": None if self.k0 is None else np.asarray(self.k0).tolist(),
            "workers": self.workers,
            "trace_every": self.trace_every,
            "success_fraction": self.success_fraction,
            "bisect_rounds": self.bisect_rounds,
            "bisect_rel_width": self.bisect_rel_width,
            "constants_probes": self.constants_probes,
            "fit_probes": self.fit_probes,
            "fit_horizon": self.fit_horizon,
            "mu_safety": self.mu_safety,
        }
        return doc


@dataclass
class SweepRow:
    eps: float
    delta_max: float  # nan when infeasible
    success_rate: float
    trials: int
    infeasible: bool


@dataclass
class SweepResult:
    rows: list[SweepRow]
    slope: float | None
    intercept: float | None


@dataclass
class ExperimentResult:
    status: int  # 0 ok, 3 experiment-failed
    out_dir: Path
    detail: dict = field(default_factory=dict)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    x = float(value)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def trace_csv_rows(trace: RunTrace, trial: int):
    for rec in trace.records:
        tau_flag = trace.tau is not None and rec.s >= trace.tau
        diverged = not math.isfinite(rec.j_exact)
        yield (trial, rec.s, rec.j_exact, rec.gap, rec.grad_norm_exact, rec.g_norm, rec.e_norm, tau_flag, diverged)


def write_trace_csv(path: Path, trace: RunTrace, trial: int) -> None:
    _write_csv(path, TRACE_HEADER, trace_csv_rows(trace, trial))


def _summary_row(trial: int, trace: RunTrace):
    tau = -1 if trace.tau is None else trace.tau
    return (trial, trace.final_gap, tau, trace.diverged, trace.iters_run)


def _run_indexed(fn, indices, workers: int):
    """Run fn(i) for each index, preserving index order in the result list."""
    if workers <= 1:
        return [fn(i) for i in indices]
    results = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {i: pool.submit(fn, i) for i in indices}
        for i, fut in futures.items():
            results[i] = fut.result()
    return [results[i] for i in indices]


def make_initial_policy(sys: LtiSystem, target_gap: float, rng: np.random.Generator, sigma0=None) -> np.ndarray:
    """K* + c*D with random unit D and c bisected so the cost gap matches
    target_gap to 1% relative; the gap blows up toward the stability
    boundary, so a bracket exists along almost every ray."""
    if target_gap <= 0 or not math.isfinite(target_gap):
        raise InvalidInputError("target_gap must be positive and finite")
    if sigma0 is None:
        sigma0 = np.eye(sys.n)
    dare = solve_dare(sys)
    j_star = float(np.trace(dare.p_star @ sigma0))
    k_star = np.asarray(dare.k_star)
    for _ in range(8):
        direction = sample_sphere(sys.m, sys.n, rng)
        gap_at = lambda c: cost_exact(sys, k_star + c * direction, sigma0) - j_star
        c_hi = 1e-4
        bracketed = False
        for _ in range(200):
            if gap_at(c_hi) > target_gap:
                bracketed = True
                break
            c_hi *= 2.0
        if not bracketed:
            continue
        c_lo = 0.0
        for _ in range(200):
            c = 0.5 * (c_lo + c_hi)
            g = gap_at(c)
            if abs(g - target_gap) <= 0.01 * target_gap and math.isfinite(g):
                return k_star + c * direction
            if g > target_gap:
                c_hi = c
            else:
                c_lo = c
        g = gap_at(c_lo)
        if c_lo > 0 and abs(g - target_gap) <= 0.01 * target_gap:
            return k_star + c_lo * direction
    raise EstimationError(
        "could not land the initial policy on the requested gap; reduce target_gap"
    )


def _resolve_k0(spec: ExperimentSpec, sigma0) -> np.ndarray:
    if spec.k0 is not None:
        k0 = np.asarray(spec.k0, dtype=float).reshape(spec.system.m, spec.system.n)
        return k0
    dare = solve_dare(spec.system)
    j_star = float(np.trace(dare.p_star @ sigma0))
    target = spec.target_gap if spec.target_gap is not None else 0.5 * j_star
    rng = RngStream(spec.seed, K0_STREAM).generator()
    return make_initial_policy(spec.system, target, rng, sigma0=sigma0)


def _manifest(spec: ExperimentSpec, k0, config: AlgoConfig | None, constants: ConstantsEstimate | None,
              fit: DecayFit | None = None, extra: dict | None = None) -> dict:
    dare = solve_dare(spec.system)
    sigma0 = spec.dist().second_moment()
    doc = {
        "library_version": zolqr.__version__,
        "created_unix": time.time(),
        "spec": spec.to_json_dict(),
        "system": spec.system.to_json_dict(),
        "k0": None if k0 is None else np.asarray(k0).tolist(),
        "dare": {
            "p_star": np.asarray(dare.p_star).tolist(),
            "k_star": np.asarray(dare.k_star).tolist(),
            "residual": dare.residual,
            "j_star_trace": dare.j_star_trace,
            "j_star_sigma0": float(np.trace(dare.p_star @ sigma0)),
        },
        "config": None if config is None else config.to_json_dict(),
        "constants": None if constants is None else constants.to_json_dict(),
        "decay_fit": None if fit is None else fit.to_json_dict(),
    }
    if extra:
        doc.update(extra)
    return doc


def _write_manifest(out: Path, doc: dict) -> None:
    (out / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def run_convergence_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Seeded independent descents; one trace CSV per trial plus a summary."""
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dist = spec.dist()
    sigma0 = dist.second_moment()
    k0 = _resolve_k0(spec, sigma0)
    config = AlgoConfig(eta=spec.eta, r=spec.r, t_s=spec.iters, mode=spec.mode,
                        delta_bound=spec.delta, t_delta=spec.t_delta)
    if spec.t_delta is not None:
        pert = PerturbationModel("truncation", t_delta=spec.t_delta)
    elif spec.delta > 0:
        pert = PerturbationModel("sphere_uniform", delta=spec.delta)
    else:
        pert = PerturbationModel("sphere_uniform", delta=0.0)

    def one_trial(i: int) -> RunTrace:
        rng = RngStream(spec.seed, i).generator()
        trace = run_descent(spec.system, k0, config, pert, dist, rng,
                            record="full", trace_every=spec.trace_every)
        if spec.iters >= 50_000:
            # Long replication runs: cheap progress checkpointing on stderr.
            print(f"trial {i}: {trace.iters_run} iterations, final gap {trace.final_gap:.6g}",
                  file=_sys.stderr)
        return trace

    traces = _run_indexed(one_trial, range(spec.trials), spec.workers)

    for i, trace in enumerate(traces):
        write_trace_csv(out / f"trace_{i:03d}.csv", trace, i)
    _write_csv(out / "summary.csv", SUMMARY_HEADER, (_summary_row(i, t) for i, t in enumerate(traces)))
    _write_manifest(out, _manifest(spec, k0, config, None))

    all_diverged = all(t.diverged for t in traces)
    detail = {
        "final_gaps": [t.final_gap for t in traces],
        "diverged": [t.diverged for t in traces],
        "delta0": traces[0].delta0 if traces else math.nan,
        "j_star": traces[0].j_star if traces else math.nan,
        "k0": k0,
    }
    return ExperimentResult(status=3 if all_diverged else 0, out_dir=out, detail=detail)


def _default_eps_grid(delta0: float, points: int = 5, decades: float = 1.5, top_fraction: float = 0.06):
    top = top_fraction * delta0
    return tuple(top * 10 ** (-decades * k / (points - 1)) for k in range(points))


def run_delta_sweep(spec: ExperimentSpec) -> tuple[ExperimentResult, SweepResult]:
    """Largest tolerable perturbation bound per accuracy level.

    For each eps (decreasing) the bound is the largest delta at which at
    least success_fraction of the paired-seed trials end below eps.  The
    search expands the bracket upward only for the first feasible eps;
    afterwards the previous delta_max caps the bracket, which enforces
    monotone rows by construction.
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dist = spec.dist()
    sigma0 = dist.second_moment()
    k0 = _resolve_k0(spec, sigma0)
    config = AlgoConfig(eta=spec.eta, r=spec.r, t_s=spec.iters, mode=spec.mode)
    delta0 = cost_exact(spec.system, k0, sigma0) - float(np.trace(solve_dare(spec.system).p_star @ sigma0))
    eps_grid = spec.eps_list if spec.eps_list else _default_eps_grid(delta0)
    eps_grid = tuple(sorted(eps_grid, reverse=True))
    needed = math.ceil(spec.success_fraction * spec.trials)

    def paired_traces(delta: float) -> list[RunTrace]:
        pert = PerturbationModel("sphere_uniform", delta=delta)

        def one_trial(i: int) -> RunTrace:
            rng = RngStream(spec.seed, SWEEP_TRIAL_BASE + i).generator()
            return run_descent(spec.system, k0, config, pert, dist, rng, record="light")

        return _run_indexed(one_trial, range(spec.trials), spec.workers)

    def rate_at(delta: float, eps: float):
        traces = paired_traces(delta)
        wins = sum(1 for t in traces if not t.diverged and t.final_gap < eps)
        return wins, wins / spec.trials

    rows: list[SweepRow] = []
    prev_max: float | None = None
    for eps in eps_grid:
        wins0, rate0 = rate_at(0.0, eps)
        if wins0 < needed:
            rows.append(SweepRow(eps, math.nan, rate0, spec.trials, True))
            continue
        if prev_max is None:
            hi = spec.delta if spec.delta > 0 else 1.0
            lo, lo_rate = 0.0, rate0
            expansions = 0
            while expansions < 40:
                wins, rate = rate_at(hi, eps)
                if wins < needed:
                    break
                lo, lo_rate = hi, rate
                hi *= 2.0
                expansions += 1
        else:
            wins, rate = rate_at(prev_max, eps)
            if wins >= needed:
                # Monotonicity caps delta_max at the previous level exactly.
                rows.append(SweepRow(eps, prev_max, rate, spec.trials, False))
                continue
            lo, lo_rate = 0.0, rate0
            hi = prev_max
        for _ in range(spec.bisect_rounds):
            if hi - lo <= spec.bisect_rel_width * hi:
                break
            mid = 0.5 * (lo + hi)
            wins, rate = rate_at(mid, eps)
            if wins >= needed:
                lo, lo_rate = mid, rate
            else:
                hi = mid
        rows.append(SweepRow(eps, lo, lo_rate, spec.trials, False))
        prev_max = lo

    fit_rows = [(row.eps, row.delta_max) for row in rows if not row.infeasible and row.delta_max > 0]
    slope = intercept = None
    if len(fit_rows) >= 2:
        le = np.log([e for e, _ in fit_rows])
        ld = np.log([dm for _, dm in fit_rows])
        slope_arr = np.polyfit(le, ld, 1)
        slope, intercept = float(slope_arr[0]), float(slope_arr[1])

    _write_csv(out / "sweep.csv", SWEEP_HEADER,
               ((r.eps, r.delta_max, r.success_rate, r.trials, r.infeasible) for r in rows))
    _write_manifest(out, _manifest(spec, k0, config, None,
                                   extra={"sweep_fit": {"slope": slope, "intercept": intercept},
                                          "delta0": delta0}))
    result = SweepResult(rows=rows, slope=slope, intercept=intercept)
    all_infeasible = all(r.infeasible for r in rows)
    return (
        ExperimentResult(status=3 if all_infeasible else 0, out_dir=out,
                         detail={"slope": slope, "rows": rows, "delta0": delta0, "k0": k0}),
        result,
    )


def run_rollout_study(spec: ExperimentSpec) -> ExperimentResult:
    """Final gaps under truncation-driven perturbation across a rollout-length
    grid, alongside the theoretical minimal length per accuracy level."""
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dist = spec.dist()
    sigma0 = dist.second_moment()
    k0 = _resolve_k0(spec, sigma0)
    config = AlgoConfig(eta=spec.eta, r=spec.r, t_s=spec.iters, mode=spec.mode)
    dare = solve_dare(spec.system)
    j_star = float(np.trace(dare.p_star @ sigma0))
    delta0 = cost_exact(spec.system, k0, sigma0) - j_star

    consts = estimate_constants(
        spec.system, k0, spec.constants_probes,
        RngStream(spec.seed, CONSTANTS_STREAM).generator(),
        dist=dist,
    )
    fit_probes = sample_sublevel(
        spec.system, k0, spec.fit_probes,
        RngStream(spec.seed, DECAY_STREAM).generator(), sigma0=sigma0,
    )
    fit = fit_decay(spec.system, fit_probes, spec.fit_horizon)

    rows = []
    for t_delta in spec.t_delta_grid:
        pert = PerturbationModel("truncation", t_delta=int(t_delta))

        def one_trial(i: int) -> RunTrace:
            rng = RngStream(spec.seed, ROLLOUT_TRIAL_BASE + i).generator()
            return run_descent(spec.system, k0, config, pert, dist, rng, record="light")

        traces = _run_indexed(one_trial, range(spec.trials), spec.workers)
        for i, t in enumerate(traces):
            tau = -1 if t.tau is None else t.tau
            rows.append((int(t_delta), i, t.final_gap, tau, t.diverged, t.iters_run))

    eps_list = spec.eps_list if spec.eps_list else (0.1 * delta0,)
    predictions = [
        (eps, rollout_length_bound(fit, spec.system.m * spec.system.n, spec.r, eps, consts,
                                   x0_norm2=dist.c_m, mu_safety=spec.mu_safety))
        for eps in eps_list
    ]

    _write_csv(out / "rollout_study.csv", ROLLOUT_HEADER, rows)
    _write_csv(out / "rollout_predictions.csv", PREDICTION_HEADER, predictions)
    _write_manifest(out, _manifest(spec, k0, config, consts, fit, extra={"delta0": delta0}))
    return ExperimentResult(status=0, out_dir=out,
                            detail={"rows": rows, "predictions": predictions,
                                    "constants": consts, "fit": fit, "k0": k0})


def run_constants_report(spec: ExperimentSpec) -> ExperimentResult:
    """Estimate and serialize the regularity constants and the decay fit."""
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dist = spec.dist()
    sigma0 = dist.second_moment()
    k0 = _resolve_k0(spec, sigma0)
    consts = estimate_constants(
        spec.system, k0, spec.constants_probes,
        RngStream(spec.seed, CONSTANTS_STREAM).generator(),
        dist=dist,
    )
    fit_probes = sample_sublevel(
        spec.system, k0, spec.fit_probes,
        RngStream(spec.seed, DECAY_STREAM).generator(), sigma0=sigma0,
    )
    fit = fit_decay(spec.system, fit_probes, spec.fit_horizon)
    (out / "constants.json").write_text(json.dumps(consts.to_json_dict(), indent=2) + "\n")
    (out / "decay_fit.json").write_text(json.dumps(fit.to_json_dict(), indent=2) + "\n")
    _write_manifest(out, _manifest(spec, k0, None, consts, fit))
    return ExperimentResult(status=0, out_dir=out, detail={"constants": consts, "fit": fit, "k0": k0})
