"""Acceptance for the plotting package (criterion A11), plus an end-to-end
check against artifacts produced by the experiment harness CLI."""

import json
import math
import shutil
import subprocess
import sys

import pytest

from conftest import write_sweep_csv, write_trace_csv
from zolqr_plots.cli import main as cli_main
from zolqr_plots.figures import PlotJob, plot_sweep, plot_trajectories
from zolqr_plots.io import read_manifest_slope


def _report(name, ok, detail=""):
    print(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def test_a11_plots(tmp_path):
    # Synthetic sweep with delta = sqrt(eps): the annotated slope must be
    # 0.500 within 0.001.
    eps_values = [8.0 / 2**k for k in range(8)]
    sweep_csv = write_sweep_csv(tmp_path / "sweep.csv",
                                [(e, math.sqrt(e), 0.9, 20, False) for e in eps_values])
    sweep_out = tmp_path / "sweep.png"
    sweep = plot_sweep(PlotJob(inputs=[str(sweep_csv)], output=str(sweep_out), kind="sweep"))
    slope_ok = sweep.slope is not None and abs(sweep.slope - 0.5) <= 1e-3

    # 20-trial trace rendering with the dashed optimal-cost level.
    trace_csv = write_trace_csv(tmp_path / "trace.csv", trials=20, n_steps=60)
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"dare": {"j_star_sigma0": 100.0}}))
    traj_out = tmp_path / "traj.png"
    traj = plot_trajectories(PlotJob(inputs=[str(trace_csv)], output=str(traj_out),
                                     manifest=str(manifest)))
    traj_ok = traj_out.exists() and traj.n_curves == 20

    ok = slope_ok and traj_ok
    assert _report("A11 (plots)", ok,
                   f"sweep slope={sweep.slope:.4f}, trajectory curves={traj.n_curves}")


@pytest.mark.skipif(shutil.which("zolqr") is None, reason="zolqr CLI not installed")
def test_end_to_end_against_harness_artifacts(tmp_path):
    """Drive the experiment harness through its CLI, then render its real
    artifacts; the sweep figure's fitted slope must match the slope the
    harness recorded in its manifest."""
    system = tmp_path / "sys.json"
    system.write_text(json.dumps({
        "A": [[2.0, 3.0], [1.0, 2.0]],
        "B": [[1.0], [-1.0]],
        "Q": [[2.0, -1.0], [-1.0, 2.0]],
        "R": [[2.0]],
    }))
    conv_dir = tmp_path / "conv"
    subprocess.run(
        ["zolqr", "convergence", "--system", str(system), "--seed", "7", "--trials", "3",
         "--iters", "300", "--eta", "5e-6", "--r", "0.03", "--delta", "0.1",
         "--init-state", "canonical", "--out", str(conv_dir)],
        check=True, capture_output=True, text=True,
    )
    sweep_dir = tmp_path / "sweep"
    subprocess.run(
        ["zolqr", "delta-sweep", "--system", str(system), "--seed", "7", "--trials", "4",
         "--iters", "300", "--eta", "5e-6", "--r", "0.03", "--eps", "25.0,10.0,4.0",
         "--init-state", "canonical", "--out", str(sweep_dir)],
        check=True, capture_output=True, text=True,
    )

    traj_out = tmp_path / "traj.png"
    code = cli_main(["trajectories", "--in", str(conv_dir), "--out", str(traj_out),
                     "--manifest", str(conv_dir / "manifest.json")])
    assert code == 0 and traj_out.exists()

    sweep_out = tmp_path / "sweep.png"
    result = plot_sweep(PlotJob(inputs=[str(sweep_dir / "sweep.csv")], output=str(sweep_out),
                                kind="sweep", manifest=str(sweep_dir / "manifest.json")))
    reported = read_manifest_slope(sweep_dir / "manifest.json")
    if reported is None:
        assert result.slope is None
    else:
        assert result.slope == pytest.approx(reported, abs=1e-9)
