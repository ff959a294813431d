import math

import pytest

TRACE_HEADER = "trial,s,J_exact,gap,grad_norm_exact,G_norm,E_norm,tau_flag,diverged"
SWEEP_HEADER = "eps,delta_max,success_rate,trials,infeasible"


def write_trace_csv(path, trials, n_steps, j_star=100.0, start=150.0):
    """Synthetic decaying-cost trace in the documented schema."""
    lines = [TRACE_HEADER]
    for trial in range(trials):
        for s in range(n_steps + 1):
            j = j_star + (start - j_star) * math.exp(-0.01 * s) * (1 + 0.01 * trial)
            gap = j - j_star
            lines.append(f"{trial},{s},{j!r},{gap!r},1.0,2.0,0.0,0,0")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_sweep_csv(path, rows):
    """rows: iterable of (eps, delta_max, success_rate, trials, infeasible)."""
    lines = [SWEEP_HEADER]
    for eps, delta_max, rate, trials, infeasible in rows:
        dm = "" if delta_max is None else repr(float(delta_max))
        lines.append(f"{eps!r},{dm},{rate!r},{trials},{int(infeasible)}")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def trace_csv(tmp_path):
    return write_trace_csv(tmp_path / "trace.csv", trials=3, n_steps=40)


@pytest.fixture
def sqrt_sweep_csv(tmp_path):
    eps_values = [10.0 / 2**k for k in range(6)]
    rows = [(e, math.sqrt(e), 0.9, 20, False) for e in eps_values]
    return write_sweep_csv(tmp_path / "sweep.csv", rows)
