"""zolqr-plot: render experiment CSVs to figures.

Subcommands: trajectories, sweep.
Exit codes: 0 success, 2 invalid input, 3 nothing plottable (all infeasible).
"""

from __future__ import annotations

import argparse
import sys

from zolqr_plots.figures import PlotError, PlotJob, plot_sweep, plot_trajectories


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="zolqr-plot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("trajectories", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--in", dest="inputs", nargs="+", required=True,
                       help="input CSV file(s)")
        p.add_argument("--out", required=True, help="output image file")
        p.add_argument("--manifest", default=None,
                       help="manifest JSON (provides the optimal-cost level)")
        p.add_argument("--logy", action="store_true", help="log-scale cost axis")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0

    try:
        job = PlotJob(inputs=args.inputs, output=args.out, kind=args.command,
                      manifest=args.manifest, logy=args.logy)
        if args.command == "trajectories":
            result = plot_trajectories(job)
            print(f"wrote {result.output} ({result.n_curves} curves)")
            return 0
        result = plot_sweep(job)
        if result.slope is not None:
            print(f"wrote {result.output} (slope {result.slope:.3f})")
        else:
            print(f"wrote {result.output}")
        return 3 if result.all_infeasible else 0
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
