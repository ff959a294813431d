"""Command-line interface.

Subcommands: convergence, delta-sweep, rollout-study, constants, dare.
Exit codes: 0 success, 2 invalid input, 3 experiment failed.
"""

from __future__ import annotations

import argparse
import sys as _sys

import numpy as np

from zolqr.exp_harness import ExperimentSpec, run_constants_report, run_convergence_experiment, run_delta_sweep, run_rollout_study
from zolqr.lqr_core import LqrError, LtiSystem, solve_dare


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--system", required=True, help="path to a system JSON file (keys A, B, Q, R)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--eta", type=float, default=5e-6)
    parser.add_argument("--r", type=float, default=0.03, help="smoothing radius")
    parser.add_argument("--delta", type=float, default=0.0,
                        help="perturbation bound (sweep: initial upper bracket)")
    parser.add_argument("--iters", type=int, default=3000)
    parser.add_argument("--mode", choices=("one", "two"), default="two")
    parser.add_argument("--init-state", choices=("signed", "canonical"), default="signed")
    parser.add_argument("--target-gap", type=float, default=None,
                        help="initial cost gap for the auto K0 (default 0.5*J(K*))")
    parser.add_argument("--eps", default=None, help="comma-separated accuracy levels")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--trace-every", type=int, default=1)
    parser.add_argument("--t-delta", type=int, default=None, help="rollout length (truncated costs)")
    parser.add_argument("--t-delta-grid", default="5,10,20,40")
    parser.add_argument("--probes", type=int, default=400, help="constant-estimation probe count")


def _parse_eps(text):
    if text is None:
        return None
    try:
        values = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise LqrError(f"bad --eps list: {exc}") from exc
    if not values or any(v <= 0 for v in values):
        raise LqrError("--eps must be a comma list of positive numbers")
    return values


def _spec_from_args(args, experiment: str) -> ExperimentSpec:
    system = LtiSystem.load(args.system)
    grid = tuple(int(tok) for tok in args.t_delta_grid.split(",") if tok.strip())
    return ExperimentSpec(
        system=system,
        experiment=experiment,
        trials=args.trials,
        seed=args.seed,
        mode="one_point" if args.mode == "one" else "two_point",
        eta=args.eta,
        r=args.r,
        delta=args.delta,
        iters=args.iters,
        t_delta=args.t_delta,
        t_delta_grid=grid,
        eps_list=_parse_eps(args.eps),
        init_state=args.init_state,
        target_gap=args.target_gap,
        out_dir=args.out,
        workers=args.workers,
        trace_every=args.trace_every,
        constants_probes=args.probes,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="zolqr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("convergence", "delta-sweep", "rollout-study", "constants", "dare"):
        p = sub.add_parser(name)
        _add_common(p)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0

    try:
        if args.command == "dare":
            system = LtiSystem.load(args.system)
            sol = solve_dare(system)
            np.set_printoptions(precision=12, suppress=False)
            print("P* =")
            print(np.asarray(sol.p_star))
            print("K* =")
            print(np.asarray(sol.k_star))
            print(f"residual = {sol.residual:.3e}")
            print(f"J(K*) = {sol.j_star_trace!r}")
            return 0

        experiment = {
            "convergence": "convergence",
            "delta-sweep": "delta_sweep",
            "rollout-study": "rollout_study",
            "constants": "constants_report",
        }[args.command]
        spec = _spec_from_args(args, experiment)

        if experiment == "convergence":
            result = run_convergence_experiment(spec)
            gaps = result.detail["final_gaps"]
            diverged = sum(result.detail["diverged"])
            print(f"wrote {spec.trials} traces to {result.out_dir}")
            print(f"diverged: {diverged}/{spec.trials}; median final gap: "
                  f"{float(np.median([g for g in gaps if np.isfinite(g)] or [float('inf')])):.6g}")
            if result.status != 0:
                print("experiment failed: every trial diverged", file=_sys.stderr)
            return result.status
        if experiment == "delta_sweep":
            result, sweep = run_delta_sweep(spec)
            for row in sweep.rows:
                tag = " (infeasible)" if row.infeasible else ""
                print(f"eps={row.eps:.6g} delta_max={row.delta_max:.6g} rate={row.success_rate:.2f}{tag}")
            if sweep.slope is not None:
                print(f"log-log slope: {sweep.slope:.4f}")
            if result.status != 0:
                print("experiment failed: every accuracy level infeasible", file=_sys.stderr)
            return result.status
        if experiment == "rollout_study":
            result = run_rollout_study(spec)
            for eps, t_pred in result.detail["predictions"]:
                print(f"eps={eps:.6g}: predicted minimal rollout length {t_pred}")
            print(f"wrote study to {result.out_dir}")
            return result.status
        result = run_constants_report(spec)
        consts = result.detail["constants"]
        print(f"lambda0={consts.lambda0:.6g} phi0={consts.phi0:.6g} mu={consts.mu:.6g} "
              f"rho0={consts.rho0:.6g} theta0={consts.theta0:.6g}")
        print(f"wrote constants to {result.out_dir}")
        return result.status
    except LqrError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
