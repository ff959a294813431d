import json
import math

import numpy as np
import pytest
import scipy.linalg as sla

from zolqr.lqr_core import (
    INF_COST,
    InvalidInputError,
    LtiSystem,
    NotStabilizableError,
    NotStabilizingError,
    cost_exact,
    cost_from_state,
    cost_from_state_many,
    cost_matrix,
    exact_gradient,
    is_stabilizing,
    rollout_cost,
    solve_dare,
    solve_discrete_lyapunov,
    spectral_radius,
)
from zolqr.theory_params import sample_sublevel


# ---------------------------------------------------------------- spectral radius

def test_spectral_radius_zero_matrix():
    assert spectral_radius(np.zeros((2, 2))) == 0.0


def test_spectral_radius_identity():
    assert spectral_radius(np.eye(2)) == pytest.approx(1.0, abs=1e-12)


def test_spectral_radius_benchmark_plant():
    # Roots of lambda^2 - 4 lambda + 1: 2 +- sqrt(3).
    assert spectral_radius([[2.0, 3.0], [1.0, 2.0]]) == pytest.approx(2.0 + math.sqrt(3.0), rel=1e-9)


def test_spectral_radius_matches_eigvals_on_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = rng.standard_normal((2, 2)) * rng.uniform(0.1, 5)
        expected = float(np.max(np.abs(np.linalg.eigvals(m))))
        assert spectral_radius(m) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_spectral_radius_rejects_nonfinite_and_nonsquare():
    with pytest.raises(InvalidInputError):
        spectral_radius(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        spectral_radius(np.ones((2, 3)))


# ---------------------------------------------------------------- stability test

def test_is_stabilizing_scalar_cases():
    s = LtiSystem(A=[[0.5]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
    assert is_stabilizing(s, [[0.0]])
    deadbeat = LtiSystem(A=[[1.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
    assert is_stabilizing(deadbeat, [[1.0]])


def test_is_stabilizing_benchmark_zero_gain_false(bench):
    assert not is_stabilizing(bench, np.zeros((1, 2)))


def test_is_stabilizing_dimension_mismatch(bench):
    with pytest.raises(InvalidInputError):
        is_stabilizing(bench, np.zeros((2, 2)))


def test_is_stabilizing_nonfinite_gain_is_false(bench):
    assert not is_stabilizing(bench, np.full((1, 2), np.inf))


# ---------------------------------------------------------------- Lyapunov solver

def test_lyapunov_nilpotent_closed_loop():
    q = np.array([[2.0, -1.0], [-1.0, 2.0]])
    p = solve_discrete_lyapunov(np.zeros((2, 2)), q)
    np.testing.assert_allclose(p, q, rtol=0, atol=1e-14)


def test_lyapunov_scalar_geometric_series():
    # P = 1.25 / (1 - 0.25) = 5/3.
    p = solve_discrete_lyapunov(np.array([[-0.5]]), np.array([[1.25]]))
    assert p[0, 0] == pytest.approx(5.0 / 3.0, rel=1e-13)


def test_lyapunov_near_unit_radius_converges():
    acl = 0.999 * np.eye(2)
    p = solve_discrete_lyapunov(acl, np.eye(2))
    expected = 1.0 / (1.0 - 0.999**2)
    np.testing.assert_allclose(np.diag(p), expected, rtol=1e-10)
    residual = np.linalg.norm(p - np.eye(2) - acl.T @ p @ acl, "fro")
    assert residual <= 1e-11 * max(1.0, np.linalg.norm(p, "fro"))


def test_lyapunov_rejects_unstable():
    with pytest.raises(NotStabilizingError):
        solve_discrete_lyapunov(np.array([[1.01]]), np.array([[1.0]]))


def test_lyapunov_matches_scipy_on_random_stable_matrices():
    rng = np.random.default_rng(1)
    for _ in range(50):
        raw = rng.standard_normal((3, 3))
        acl = 0.9 * raw / max(1.0, spectral_radius(raw))
        wroot = rng.standard_normal((3, 3))
        w = wroot @ wroot.T
        p = solve_discrete_lyapunov(acl, w)
        # scipy solves X = A X A' + Q, so transpose the closed loop.
        expected = sla.solve_discrete_lyapunov(acl.T, w)
        np.testing.assert_allclose(p, expected, rtol=1e-8, atol=1e-10)


def test_lyapunov_residual_invariant_on_sublevel_probes(bench, k0_canonical, sigma0_canonical):
    probes = sample_sublevel(bench, k0_canonical, 60, np.random.default_rng(5), sigma0=sigma0_canonical)
    for k in probes:
        p = cost_matrix(bench, k)
        acl = bench.closed_loop(k)
        w = bench.Q + k.T @ bench.R @ k
        residual = np.linalg.norm(p - w - acl.T @ p @ acl, "fro")
        assert residual <= 1e-11 * max(1.0, np.linalg.norm(p, "fro"))
        assert np.allclose(p, p.T, atol=1e-10)


# ---------------------------------------------------------------- costs

def test_cost_exact_scalar_geometric(scalar_sys):
    assert cost_exact(scalar_sys, [[0.5]]) == pytest.approx(5.0 / 3.0, rel=1e-13)


def test_cost_exact_at_optimum_is_trace(bench):
    sol = solve_dare(bench)
    assert cost_exact(bench, sol.k_star) == pytest.approx(sol.j_star_trace, rel=1e-12)


def test_cost_exact_zero_sigma0(bench):
    sol = solve_dare(bench)
    assert cost_exact(bench, sol.k_star, np.zeros((2, 2))) == 0.0


def test_cost_exact_unstable_is_sentinel(bench):
    assert cost_exact(bench, np.zeros((1, 2))) == INF_COST


def test_cost_from_state_zero_state(bench):
    sol = solve_dare(bench)
    assert cost_from_state(bench, sol.k_star, np.zeros(2)) == 0.0


def test_cost_from_state_scalar(scalar_sys):
    assert cost_from_state(scalar_sys, [[0.5]], [1.0]) == pytest.approx(5.0 / 3.0, rel=1e-13)


def test_cost_from_state_basis_vector_picks_diagonal(bench):
    sol = solve_dare(bench)
    e1 = np.array([1.0, 0.0])
    assert cost_from_state(bench, sol.k_star, e1) == pytest.approx(sol.p_star[0, 0], rel=1e-12)


def test_cost_matrix_unstable_raises(bench):
    with pytest.raises(NotStabilizingError):
        cost_matrix(bench, np.zeros((1, 2)))


# ---------------------------------------------------------------- rollout cost

def test_rollout_single_stage(scalar_sys):
    # One stage: x0' (Q + K'RK) x0 = 1.25.
    assert rollout_cost(scalar_sys, [[0.5]], [1.0], 1) == pytest.approx(1.25, rel=1e-14)


def test_rollout_two_stages_hand_unrolled(scalar_sys):
    assert rollout_cost(scalar_sys, [[0.5]], [1.0], 2) == pytest.approx(1.5625, rel=1e-14)


def test_rollout_converges_to_infinite_horizon(scalar_sys):
    full = cost_from_state(scalar_sys, [[0.5]], [1.0])
    assert abs(rollout_cost(scalar_sys, [[0.5]], [1.0], 200) - full) <= 1e-10


def test_rollout_monotone_and_below_infinite_horizon(bench):
    sol = solve_dare(bench)
    k = np.asarray(sol.k_star) + 0.02
    x0 = np.array([1.0, -0.5])
    full = cost_from_state(bench, k, x0)
    previous = 0.0
    # Strict ordering holds up to the precision of the two solvers.
    for t in (1, 2, 4, 8, 16, 32, 64):
        value = rollout_cost(bench, k, x0, t)
        assert value >= previous - 1e-12
        assert value < full + 1e-9 * abs(full)
        previous = value
    assert rollout_cost(bench, k, x0, 4) < full


def test_rollout_gap_decays_geometrically(bench):
    sol = solve_dare(bench)
    k = np.asarray(sol.k_star) + 0.02
    x0 = np.array([1.0, 0.0])
    full = cost_from_state(bench, k, x0)
    # Past t ~ 14 the gap sits below the solvers' noise floor; fit before it.
    horizons = np.arange(1, 13)
    gaps = np.array([full - rollout_cost(bench, k, x0, int(t)) for t in horizons])
    assert np.all(gaps > 0)
    logs = np.log(gaps)
    slope, intercept = np.polyfit(horizons, logs, 1)
    fitted = slope * horizons + intercept
    ss_res = np.sum((logs - fitted) ** 2)
    ss_tot = np.sum((logs - logs.mean()) ** 2)
    assert slope < 0
    assert 1 - ss_res / ss_tot >= 0.99


def test_rollout_defined_for_unstable_gain(bench):
    value = rollout_cost(bench, np.zeros((1, 2)), [1.0, 0.0], 5)
    assert math.isfinite(value) and value > 0


def test_rollout_overflow_returns_sentinel(bench):
    assert rollout_cost(bench, np.zeros((1, 2)), [1.0, 0.0], 2000) == INF_COST


def test_rollout_rejects_bad_horizon(bench):
    with pytest.raises(InvalidInputError):
        rollout_cost(bench, np.zeros((1, 2)), [1.0, 0.0], 0)


# ---------------------------------------------------------------- DARE

def test_dare_trivial_scalar():
    s = LtiSystem(A=[[0.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
    sol = solve_dare(s)
    assert sol.p_star[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert sol.k_star[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_dare_golden_ratio_scalar():
    # P solves P^2 = P + 1, the positive root (1 + sqrt(5)) / 2.
    s = LtiSystem(A=[[1.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])
    sol = solve_dare(s)
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    assert sol.p_star[0, 0] == pytest.approx(golden, rel=1e-12)
    assert sol.k_star[0, 0] == pytest.approx(2.0 / (1.0 + math.sqrt(5.0)), rel=1e-10)


def test_dare_benchmark_residual_and_stability(bench):
    sol = solve_dare(bench)
    assert sol.residual <= 1e-10
    assert spectral_radius(bench.closed_loop(sol.k_star)) < 1.0


def test_dare_matches_scipy(bench):
    sol = solve_dare(bench)
    expected = sla.solve_discrete_are(bench.A, bench.B, bench.Q, bench.R)
    np.testing.assert_allclose(sol.p_star, expected, rtol=1e-9)


def test_dare_rejects_unstabilizable_system():
    # Unstable mode outside the input range space.
    with pytest.raises(NotStabilizableError):
        LtiSystem(A=[[2.0, 0.0], [0.0, 2.0]], B=[[1.0], [0.0]], Q=np.eye(2), R=[[1.0]])


# ---------------------------------------------------------------- system validation

def test_system_rejects_asymmetric_q():
    with pytest.raises(InvalidInputError):
        LtiSystem(A=[[0.5]], B=[[1.0]], Q=[[1.0, 0.5], [0.0, 1.0]][:1], R=[[1.0]])


def test_system_rejects_indefinite_r():
    with pytest.raises(InvalidInputError):
        LtiSystem(A=[[0.5]], B=[[1.0]], Q=[[1.0]], R=[[0.0]])


def test_system_rejects_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        LtiSystem(A=np.eye(2), B=[[1.0], [0.0]], Q=np.eye(3), R=[[1.0]])


def test_system_json_roundtrip(tmp_path, bench):
    path = tmp_path / "sys.json"
    bench.save(path)
    loaded = LtiSystem.load(path)
    np.testing.assert_array_equal(loaded.A, bench.A)
    np.testing.assert_array_equal(loaded.B, bench.B)
    np.testing.assert_array_equal(loaded.Q, bench.Q)
    np.testing.assert_array_equal(loaded.R, bench.R)
    doc = json.loads(path.read_text())
    assert set(doc) == {"A", "B", "Q", "R"}


def test_system_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("not json")
    with pytest.raises(InvalidInputError):
        LtiSystem.load(path)


# ---------------------------------------------------------------- exact gradient

def test_exact_gradient_scalar_closed_form(scalar_sys):
    # dJ/dK of (1+K^2)/(1-K^2) at K=0.5 is 4K/(1-K^2)^2 = 32/9.
    g = exact_gradient(scalar_sys, [[0.5]], np.eye(1))
    assert g[0, 0] == pytest.approx(32.0 / 9.0, rel=1e-12)


def test_exact_gradient_zero_at_optimum(bench):
    sol = solve_dare(bench)
    assert np.linalg.norm(exact_gradient(bench, sol.k_star)) <= 1e-8


def test_exact_gradient_unstable_raises(bench):
    with pytest.raises(NotStabilizingError):
        exact_gradient(bench, np.zeros((1, 2)))


def _finite_difference_gradient(sys, k, sigma0, h=1e-6):
    grad = np.zeros_like(k)
    for idx in np.ndindex(*k.shape):
        e = np.zeros_like(k)
        e[idx] = 1.0
        grad[idx] = (cost_exact(sys, k + h * e, sigma0) - cost_exact(sys, k - h * e, sigma0)) / (2 * h)
    return grad


def test_exact_gradient_matches_finite_differences(bench, k0_canonical, sigma0_canonical):
    probes = sample_sublevel(bench, k0_canonical, 100, np.random.default_rng(17), sigma0=sigma0_canonical)
    for k in probes:
        g = exact_gradient(bench, k, sigma0_canonical)
        fd = _finite_difference_gradient(bench, k, sigma0_canonical)
        assert np.linalg.norm(fd - g) <= 1e-5 * np.linalg.norm(g)


def test_directional_derivative_along_random_directions(bench, k0_canonical, sigma0_canonical):
    rng = np.random.default_rng(23)
    probes = sample_sublevel(bench, k0_canonical, 20, rng, sigma0=sigma0_canonical)
    h = 1e-6
    # Tolerance is relative to the gradient scale: a direction nearly
    # orthogonal to the gradient makes the per-projection relative error
    # ill-conditioned without being a gradient defect.
    for k in probes:
        d = rng.standard_normal(k.shape)
        d /= np.linalg.norm(d)
        g = exact_gradient(bench, k, sigma0_canonical)
        fd = (cost_exact(bench, k + h * d, sigma0_canonical) - cost_exact(bench, k - h * d, sigma0_canonical)) / (2 * h)
        assert abs(fd - float(np.sum(g * d))) <= 1e-5 * np.linalg.norm(g)


# ---------------------------------------------------------------- optimality

def test_value_matrix_dominates_optimal(bench, k0_canonical, sigma0_canonical):
    sol = solve_dare(bench)
    probes = sample_sublevel(bench, k0_canonical, 50, np.random.default_rng(29), sigma0=sigma0_canonical)
    for k in probes:
        diff = cost_matrix(bench, k) - sol.p_star
        assert np.min(np.linalg.eigvalsh(0.5 * (diff + diff.T))) >= -1e-8
        assert cost_exact(bench, k) >= cost_exact(bench, sol.k_star) - 1e-8


# ---------------------------------------------------------------- batched costs

def test_batched_costs_match_scalar_path(bench):
    rng = np.random.default_rng(31)
    sol = solve_dare(bench)
    ks = np.asarray(sol.k_star)[None] + 0.2 * rng.standard_normal((300, 1, 2))
    x0s = rng.standard_normal((300, 2))
    batched = cost_from_state_many(bench, ks, x0s)
    for i in range(300):
        single = cost_from_state(bench, ks[i], x0s[i])
        if math.isinf(single):
            assert math.isinf(batched[i])
        else:
            assert batched[i] == pytest.approx(single, rel=1e-9, abs=1e-9)
    assert np.any(~np.isfinite(batched))  # the cloud is wide enough to cross the boundary
