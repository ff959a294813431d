"""Empirical regularity constants and the theoretical parameter schedules.

The cost is locally Lipschitz (lambda0), has a locally Lipschitz gradient
(phi0), and satisfies a PL inequality mu*(J(K)-J(K*)) <= ||grad J(K)||_F^2
over the sublevel set G0 = {K : J(K)-J(K*) <= 10*Delta0}.  Closed-form
expressions for these constants are not used; they are estimated by probing
G0.  The schedules then instantiate the stepsize/radius/perturbation bounds
and the iteration count T_s = ceil(4/(eta*mu) * log(120*Delta0/eps)), and
the rollout-length bound converts a geometric state-decay envelope
||x_t||^2 <= M * gamma^(2t) * ||x0||^2 into the horizon needed to keep
truncation error within the admissible perturbation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from zolqr.lqr_core import (
    EstimationError,
    InvalidInputError,
    LtiSystem,
    SolverError,
    cost_exact,
    exact_gradient,
    is_stabilizing,
    solve_dare,
    spectral_radius,
)
from zolqr.sampling import sample_sphere
from zolqr.zo_optim import AlgoConfig


class InvalidToleranceError(InvalidInputError):
    """eps fails the schedule precondition eps*log(120*Delta0/eps) < 12*Delta0."""


class FitError(SolverError):
    """Decay fit failed (a probe is too close to instability)."""


@dataclass(frozen=True)
class ConstantsEstimate:
    """Empirical regularity constants over the sublevel set G0.

    lambda0/phi0 are max observed Lipschitz ratios of the cost and its
    gradient (sup estimates), mu the min observed PL ratio combined with the
    curvature floor 2*lambda_min(Hessian at K*), rho0 a ratio-stability
    radius heuristic.  g2/g_inf carry the two-point estimator bounds
    d*lambda0^2 and d*lambda0; the matching one-point bounds depend on the
    smoothing radius and are exposed as methods.
    """

    lambda0: float
    phi0: float
    rho0: float
    mu: float
    delta0: float
    c_m: float
    j_k0: float
    d: int
    g2: float
    g_inf: float
    sample_count: int
    mu_probe_min: float
    mu_floor: float
    notes: str = ""

    @property
    def theta0(self) -> float:
        return min(1.0 / (2.0 * self.phi0), self.rho0 / self.lambda0)

    def one_point_coef(self) -> float:
        """20 * C_m * J(K0) * d, the radius-free part of the one-point bounds."""
        return 20.0 * self.c_m * self.j_k0 * self.d

    def g_inf_one(self, r: float) -> float:
        return self.one_point_coef() / r

    def g2_one(self, r: float) -> float:
        return (self.one_point_coef() / r) ** 2

    def to_json_dict(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "phi0": self.phi0,
            "rho0": self.rho0,
            "mu": self.mu,
            "theta0": self.theta0,
            "delta0": self.delta0,
            "c_m": self.c_m,
            "j_k0": self.j_k0,
            "d": self.d,
            "g2": self.g2,
            "g_inf": self.g_inf,
            "sample_count": self.sample_count,
            "mu_probe_min": self.mu_probe_min,
            "mu_floor": self.mu_floor,
            "notes": self.notes,
        }


@dataclass(frozen=True)
class DecayFit:
    """Envelope ||x_t||^2 <= m_const * gamma^(2t) * ||x0||^2 over probed gains,
    plus beta = max ||Q + K'RK||_2."""

    m_const: float
    gamma: float
    beta: float

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise FitError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.m_const < 1.0:
            raise FitError("m_const must be >= 1")

    def truncation_error_bound(self, t_delta: int, x0_norm2: float) -> float:
        """Upper bound on J - J_truncated for a rollout of length t_delta."""
        return self.m_const * self.beta * self.gamma ** (2 * t_delta) * x0_norm2 / (1.0 - self.gamma**2)

    def to_json_dict(self) -> dict:
        return {"m_const": self.m_const, "gamma": self.gamma, "beta": self.beta}


def level_point(
    sys: LtiSystem,
    anchor: np.ndarray,
    direction: np.ndarray,
    target_gap: float,
    sigma0: np.ndarray,
    j_star: float,
    rel_tol: float = 1e-3,
) -> np.ndarray | None:
    """Point anchor + c*direction whose cost gap is ~target_gap, by bisection.

    The gap grows without bound toward the stability boundary, so a bracket
    always exists along almost every ray; returns None if the doubling search
    fails to find one (degenerate direction).
    """
    gap_at = lambda c: cost_exact(sys, anchor + c * direction, sigma0) - j_star
    c_hi = 1e-4
    for _ in range(200):
        if gap_at(c_hi) > target_gap:
            break
        c_hi *= 2.0
    else:
        return None
    c_lo = 0.0
    for _ in range(80):
        c = 0.5 * (c_lo + c_hi)
        if gap_at(c) > target_gap:
            c_hi = c
        else:
            c_lo = c
        if c_hi - c_lo <= rel_tol * max(c_hi, 1e-300):
            break
    k = anchor + c_lo * direction
    if not is_stabilizing(sys, k):
        return None
    return k


def sample_sublevel(
    sys: LtiSystem,
    k0: np.ndarray,
    n_probes: int,
    rng: np.random.Generator,
    sigma0: np.ndarray | None = None,
    gap_factor: float = 10.0,
) -> list[np.ndarray]:
    """Random gains inside G0: rays from K* and K0, gaps Unif(0.01, 1]*10*Delta0.

    Bisected radii land probes at prescribed gap levels, which covers the
    sublevel boundary region where the sups are attained.
    """
    if sigma0 is None:
        sigma0 = np.eye(sys.n)
    dare = solve_dare(sys)
    j_star = float(np.trace(dare.p_star @ sigma0))
    k0 = np.asarray(k0, dtype=float).reshape(sys.m, sys.n)
    delta0 = cost_exact(sys, k0, sigma0) - j_star
    if not (delta0 > 0 and math.isfinite(delta0)):
        raise InvalidInputError("k0 must be stabilizing with a positive cost gap")
    k_star = np.asarray(dare.k_star)
    probes = []
    attempts = 0
    max_attempts = 20 * n_probes
    while len(probes) < n_probes and attempts < max_attempts:
        attempts += 1
        anchor = k_star if attempts % 2 == 0 else k0
        direction = sample_sphere(sys.m, sys.n, rng)
        target = gap_factor * delta0 * rng.uniform(0.01, 1.0)
        k = level_point(sys, anchor, direction, target, sigma0, j_star)
        if k is None:
            continue
        gap = cost_exact(sys, k, sigma0) - j_star
        if 0.0 < gap <= gap_factor * delta0 * (1.0 + 1e-6):
            probes.append(k)
    if len(probes) < n_probes:
        raise EstimationError(
            f"sublevel sampler produced {len(probes)}/{n_probes} probes in {attempts} attempts"
        )
    return probes


def _hessian_min_eig(sys: LtiSystem, k: np.ndarray, sigma0: np.ndarray, h: float = 1e-5) -> float:
    """Smallest eigenvalue of the cost Hessian at k, by central differences of
    the exact gradient."""
    k = np.asarray(k, dtype=float).reshape(sys.m, sys.n)
    d = sys.m * sys.n
    hess = np.zeros((d, d))
    for j in range(d):
        e = np.zeros((sys.m, sys.n))
        e.flat[j] = 1.0
        gp = exact_gradient(sys, k + h * e, sigma0)
        gm = exact_gradient(sys, k - h * e, sigma0)
        hess[:, j] = ((gp - gm) / (2.0 * h)).reshape(-1)
    hess = 0.5 * (hess + hess.T)
    return float(np.min(np.linalg.eigvalsh(hess)))


def estimate_constants(
    sys: LtiSystem,
    k0,
    probes: int,
    rng: np.random.Generator,
    dist=None,
    sigma0: np.ndarray | None = None,
    gap_factor: float = 10.0,
    rho0_probe_count: int = 80,
    rho0_floor: float = 1e-6,
) -> ConstantsEstimate:
    """Estimate (lambda0, phi0, mu, rho0, ...) from random probes of G0.

    mu is the smaller of the min probe PL ratio and the curvature floor
    2*lambda_min(Hessian at K*): the PL ratio approaches that floor as the
    gap shrinks along the flattest eigendirection, and a probe-only minimum
    is too seed-sensitive to be reproducible.  rho0 walks a geometric step
    grid and keeps the largest step at which every probed local ratio stays
    within 2x its at-point value; it is the weakest-founded estimate and can
    be overridden downstream.
    """
    if probes < 100:
        raise InvalidInputError("need at least 100 probes")
    if sigma0 is None:
        sigma0 = np.eye(sys.n) if dist is None else dist.second_moment()
    c_m = float(sys.n) if dist is None else dist.c_m
    dare = solve_dare(sys)
    j_star = float(np.trace(dare.p_star @ sigma0))
    k0 = np.asarray(k0, dtype=float).reshape(sys.m, sys.n)
    j_k0 = cost_exact(sys, k0, sigma0)
    delta0 = j_k0 - j_star
    if not (delta0 > 0 and math.isfinite(delta0)):
        raise InvalidInputError("k0 must be stabilizing with positive gap")

    points = sample_sublevel(sys, k0, probes, rng, sigma0=sigma0, gap_factor=gap_factor)
    if len(points) < 50:
        raise EstimationError(f"only {len(points)} usable probes")

    h = 1e-5
    lambda0 = 0.0
    phi0 = 0.0
    mu_probe_min = math.inf
    at_point = []  # (K, lambda_K, phi_K, J(K)) for the rho0 walk
    for k in points:
        j_here = cost_exact(sys, k, sigma0)
        g_here = exact_gradient(sys, k, sigma0)
        gap = j_here - j_star
        if gap > 1e-9:
            mu_probe_min = min(mu_probe_min, float(np.linalg.norm(g_here) ** 2 / gap))
        step_dir = sample_sphere(sys.m, sys.n, rng)
        k_near = k + h * step_dir
        if not is_stabilizing(sys, k_near):
            continue
        lam_k = abs(cost_exact(sys, k_near, sigma0) - j_here) / h
        phi_k = float(np.linalg.norm(exact_gradient(sys, k_near, sigma0) - g_here)) / h
        lambda0 = max(lambda0, lam_k)
        phi0 = max(phi0, phi_k)
        if len(at_point) < rho0_probe_count:
            at_point.append((k, lam_k, phi_k, j_here))

    mu_floor = max(2.0 * _hessian_min_eig(sys, dare.k_star, sigma0) * (1.0 - 1e-6), 0.0)
    mu = min(mu_probe_min, mu_floor) if mu_floor > 0 else mu_probe_min
    notes = []
    if mu_floor <= 0:
        notes.append("curvature floor unusable (nonpositive Hessian eigenvalue); mu from probes only")

    rho0 = 0.0
    rho_dirs = [sample_sphere(sys.m, sys.n, rng) for _ in at_point]
    for t in np.geomspace(rho0_floor, 1.0, 48):
        ok = True
        for (k, lam_k, phi_k, j_here), direction in zip(at_point, rho_dirs):
            k_t = k + t * direction
            j_t = cost_exact(sys, k_t, sigma0)
            if not math.isfinite(j_t):
                ok = False
                break
            if abs(j_t - j_here) / t > 2.0 * max(lam_k, 1e-12):
                ok = False
                break
            if float(np.linalg.norm(exact_gradient(sys, k_t, sigma0) - exact_gradient(sys, k, sigma0))) / t > 2.0 * max(phi_k, 1e-12):
                ok = False
                break
        if ok:
            rho0 = float(t)
        else:
            break
    if rho0 <= 0.0:
        rho0 = rho0_floor
        notes.append(f"rho0 walk failed at the smallest step; floored at {rho0_floor:g}")

    d = sys.m * sys.n
    return ConstantsEstimate(
        lambda0=lambda0,
        phi0=phi0,
        rho0=rho0,
        mu=mu,
        delta0=delta0,
        c_m=c_m,
        j_k0=j_k0,
        d=d,
        g2=d * lambda0**2,
        g_inf=d * lambda0,
        sample_count=len(points),
        mu_probe_min=mu_probe_min,
        mu_floor=mu_floor,
        notes="; ".join(notes),
    )


def _check_eps(eps: float, delta0: float) -> None:
    if eps <= 0 or not math.isfinite(eps):
        raise InvalidToleranceError("eps must be positive and finite")
    if eps * math.log(120.0 * delta0 / eps) >= 12.0 * delta0:
        raise InvalidToleranceError(
            f"eps={eps:g} violates eps*log(120*Delta0/eps) < 12*Delta0 with Delta0={delta0:g}"
        )


def _delta_bound(mu: float, theta0: float, eps: float) -> float:
    return min(mu * theta0 / 16.0 * math.sqrt(eps / 15.0), 0.5 * math.sqrt(mu * eps / 30.0))


def _iteration_count(eta: float, mu: float, delta0: float, eps: float) -> int:
    # For eps >= 120*Delta0 the log goes nonpositive (the target is weaker
    # than the start); one iteration is the formula's sensible floor.
    return max(1, int(math.ceil(4.0 / (eta * mu) * math.log(120.0 * delta0 / eps))))


def schedule_one_point(consts: ConstantsEstimate, eps: float, d: int, mu_safety: float = 0.5) -> AlgoConfig:
    """One-point schedule: r at its cap, then delta, then eta (r-dependent)."""
    _check_eps(eps, consts.delta0)
    mu = consts.mu * mu_safety
    theta0 = min(1.0 / (2.0 * consts.phi0), consts.rho0 / consts.lambda0)
    r = min(
        mu * theta0 / (16.0 * consts.phi0) * math.sqrt(eps / 15.0),
        1.0 / (4.0 * consts.phi0) * math.sqrt(mu * eps / 15.0),
        consts.rho0,
        10.0 * consts.j_k0 / consts.lambda0,
    )
    delta = _delta_bound(mu, theta0, eps)
    coef = 20.0 * consts.c_m * consts.j_k0 * d
    eta = min(
        mu * r**2 * eps / (480.0 * consts.phi0 * coef**2),
        1.0 / (4.0 * consts.phi0),
        consts.rho0 * r / (coef + delta * r),
    )
    return AlgoConfig(
        eta=eta,
        r=r,
        t_s=_iteration_count(eta, mu, consts.delta0, eps),
        mode="one_point",
        delta_bound=delta,
        mu_used=mu,
    )


def schedule_two_point(consts: ConstantsEstimate, eps: float, d: int, mu_safety: float = 0.5) -> AlgoConfig:
    """Two-point schedule; the variance bound d*lambda0^2 drives the stepsize."""
    _check_eps(eps, consts.delta0)
    mu = consts.mu * mu_safety
    theta0 = min(1.0 / (2.0 * consts.phi0), consts.rho0 / consts.lambda0)
    r = min(
        mu * theta0 / (16.0 * consts.phi0) * math.sqrt(eps / 15.0),
        1.0 / (4.0 * consts.phi0) * math.sqrt(mu * eps / 15.0),
        consts.rho0,
    )
    delta = _delta_bound(mu, theta0, eps)
    eta = min(
        mu * eps / (480.0 * consts.phi0 * d * consts.lambda0**2),
        1.0 / (4.0 * consts.phi0),
        consts.rho0 / (d * consts.lambda0 + delta),
    )
    return AlgoConfig(
        eta=eta,
        r=r,
        t_s=_iteration_count(eta, mu, consts.delta0, eps),
        mode="two_point",
        delta_bound=delta,
        mu_used=mu,
    )


def rollout_length_bound_raw(
    fit: DecayFit,
    d: int,
    r: float,
    eps: float,
    consts: ConstantsEstimate,
    x0_norm2: float,
    mu_safety: float = 0.5,
) -> float:
    """The rollout-length bound before the ceiling (larger of two log terms)."""
    if not (0.0 < fit.gamma < 1.0):
        raise FitError(f"gamma must lie in (0, 1), got {fit.gamma}")
    if r <= 0 or eps <= 0 or x0_norm2 <= 0 or d < 1:
        raise InvalidInputError("r, eps, x0_norm2 must be positive and d >= 1")
    mu = consts.mu * mu_safety
    theta0 = consts.theta0
    common = fit.m_const * fit.beta * d * x0_norm2 / ((1.0 - fit.gamma**2) * r)
    arg1 = 16.0 * math.sqrt(15.0) * common / (mu * theta0 * math.sqrt(eps))
    arg2 = 2.0 * math.sqrt(30.0) * common / (math.sqrt(mu * eps))
    return max(math.log(arg1), math.log(arg2)) / (2.0 * (1.0 - fit.gamma))


def rollout_length_bound(
    fit: DecayFit,
    d: int,
    r: float,
    eps: float,
    consts: ConstantsEstimate,
    x0_norm2: float,
    mu_safety: float = 0.5,
) -> int:
    """Minimal rollout length keeping truncation error within the admissible
    perturbation; ceiling of the larger of the two log terms, at least 1."""
    return max(1, int(math.ceil(rollout_length_bound_raw(fit, d, r, eps, consts, x0_norm2, mu_safety))))


def fit_decay(sys: LtiSystem, k_probes, horizons=300) -> DecayFit:
    """Fit (M, gamma, beta) on probe gains.

    gamma = max spectral radius + 1e-3 (capped below 1; FitError if a probe
    is nearly unstable); M = max_t ||Acl^t||_2^2 / gamma^(2t), which covers
    the worst-case initial state per probe; beta = max ||Q + K'RK||_2.
    """
    if np.isscalar(horizons):
        horizon = int(horizons)
    else:
        horizon = int(max(horizons))
    if horizon < 1:
        raise InvalidInputError("horizon must be >= 1")
    k_probes = [np.asarray(k, dtype=float).reshape(sys.m, sys.n) for k in k_probes]
    if not k_probes:
        raise InvalidInputError("need at least one probe gain")
    rho_max = 0.0
    beta = 0.0
    for k in k_probes:
        if not is_stabilizing(sys, k):
            raise FitError("decay fit requires stabilizing probes")
        rho_max = max(rho_max, spectral_radius(sys.closed_loop(k)))
        beta = max(beta, float(np.linalg.norm(sys.Q + k.T @ sys.R @ k, 2)))
    gamma = max(rho_max + 1e-3, 1e-3)
    if gamma >= 1.0:
        raise FitError(f"gamma margin pushes past 1 (max closed-loop radius {rho_max:.6f})")
    m_const = 1.0
    for k in k_probes:
        acl = sys.closed_loop(k)
        x = np.eye(sys.n)
        for t in range(1, horizon + 1):
            x = acl @ x
            ratio = float(np.linalg.norm(x, 2) ** 2) / gamma ** (2 * t)
            if ratio > m_const:
                m_const = ratio
    return DecayFit(m_const=m_const, gamma=gamma, beta=beta)
