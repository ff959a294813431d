import numpy as np
import pytest

from zolqr.exp_harness import CONSTANTS_STREAM, K0_STREAM, make_initial_policy
from zolqr.lqr_core import LtiSystem, benchmark_system, solve_dare
from zolqr.sampling import InitialStateDist, RngStream
from zolqr.theory_params import estimate_constants, fit_decay, sample_sublevel

TEST_SEED = 7


@pytest.fixture(scope="session")
def bench():
    return benchmark_system()


@pytest.fixture(scope="session")
def scalar_sys():
    # A=0, B=1, Q=1, R=1: P_K = (1 + K^2) / (1 - K^2) in closed form.
    return LtiSystem(A=[[0.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])


@pytest.fixture(scope="session")
def canonical_dist(bench):
    return InitialStateDist("canonical_basis", bench.n)


@pytest.fixture(scope="session")
def signed_dist(bench):
    return InitialStateDist("signed_scaled_basis", bench.n)


@pytest.fixture(scope="session")
def sigma0_canonical(canonical_dist):
    return canonical_dist.second_moment()


@pytest.fixture(scope="session")
def j_star_canonical(bench, sigma0_canonical):
    return float(np.trace(solve_dare(bench).p_star @ sigma0_canonical))


@pytest.fixture(scope="session")
def k0_canonical(bench, sigma0_canonical, j_star_canonical):
    """Auto initial gain at half the optimal cost above the optimum."""
    rng = RngStream(TEST_SEED, K0_STREAM).generator()
    return make_initial_policy(bench, 0.5 * j_star_canonical, rng, sigma0=sigma0_canonical)


@pytest.fixture(scope="session")
def consts_canonical(bench, k0_canonical, canonical_dist):
    rng = RngStream(11, CONSTANTS_STREAM).generator()
    return estimate_constants(bench, k0_canonical, 400, rng, dist=canonical_dist)


@pytest.fixture(scope="session")
def flat_probe(bench, sigma0_canonical, j_star_canonical):
    """Deterministic probe at half the initial gap, along the flattest
    curvature direction at the optimum (the direction with the most clearance
    inside the stabilizing set, so moderate smoothing radii stay usable)."""
    from zolqr.lqr_core import exact_gradient
    from zolqr.theory_params import level_point

    sol = solve_dare(bench)
    k_star = np.asarray(sol.k_star)
    h = 1e-5
    d = bench.m * bench.n
    hess = np.zeros((d, d))
    for j in range(d):
        e = np.zeros((bench.m, bench.n))
        e.flat[j] = 1.0
        gp = exact_gradient(bench, k_star + h * e, sigma0_canonical)
        gm = exact_gradient(bench, k_star - h * e, sigma0_canonical)
        hess[:, j] = ((gp - gm) / (2 * h)).reshape(-1)
    hess = 0.5 * (hess + hess.T)
    _, vecs = np.linalg.eigh(hess)
    flat = vecs[:, 0].reshape(bench.m, bench.n)
    target = 0.25 * j_star_canonical  # Delta0 / 2 with the default Delta0
    plus = level_point(bench, k_star, flat, target, sigma0_canonical, j_star_canonical)
    minus = level_point(bench, k_star, -flat, target, sigma0_canonical, j_star_canonical)
    if np.linalg.norm(plus - k_star) >= np.linalg.norm(minus - k_star):
        return plus
    return minus


@pytest.fixture(scope="session")
def sublevel_probes(bench, k0_canonical, sigma0_canonical):
    rng = RngStream(13, 0).generator()
    return sample_sublevel(bench, k0_canonical, 200, rng, sigma0=sigma0_canonical)


@pytest.fixture(scope="session")
def decay(bench, sublevel_probes):
    return fit_decay(bench, sublevel_probes, 300)
