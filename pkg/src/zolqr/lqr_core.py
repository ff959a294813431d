"""Exact machinery for the discrete-time infinite-horizon LQR problem.

For the plant x_{t+1} = A x_t + B u_t with stage cost x'Qx + u'Ru and a
static policy u = -Kx, the closed loop is Acl = A - BK and the value matrix
P_K solves the discrete Lyapunov equation

    P_K = Q + K'RK + Acl' P_K Acl,

so that J(K; x0) = x0' P_K x0 and J(K) = Tr(P_K Sigma0) for an initial-state
second moment Sigma0.  The optimal gain comes from the DARE fixed point.
Non-stabilizing gains have infinite cost; cost evaluators return the
``INF_COST`` sentinel for them instead of raising, so optimization loops can
observe exit from the stabilizing set as data.

All evaluations route through a per-system cache of raw-array operations
(``_fast``); the public functions add input validation on top but compute
the same numbers, which keeps hot descent loops and one-off calls
bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INF_COST = math.inf

# Gains with spectral radius above 1 - STABILITY_MARGIN are treated as
# unstable; avoids near-singular Lyapunov solves at the boundary.
STABILITY_MARGIN = 1e-9

_PSD_TOL = 1e-10
_LYAP_RESIDUAL_TOL = 1e-11
_DARE_RESIDUAL_TOL = 1e-10
_DARE_TARGET_TOL = 1e-12
_DARE_MAX_ITER = 10**6
_KRON_MAX_DIM = 8


class LqrError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(LqrError):
    """Malformed or out-of-contract input."""


class NotStabilizingError(LqrError):
    """An operation that requires a stabilizing gain received an unstable one."""


class SolverError(LqrError):
    """A numerical routine failed to converge to its tolerance."""


class NotStabilizableError(SolverError):
    """DARE iteration did not converge; the system fails the standing assumptions."""


class EstimationError(LqrError):
    """Empirical constant estimation could not produce a usable result."""


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def _check_symmetric(mat: np.ndarray, name: str, tol: float = _PSD_TOL) -> np.ndarray:
    if mat.shape[0] != mat.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {mat.shape}")
    if np.max(np.abs(mat - mat.T)) > tol * max(1.0, float(np.max(np.abs(mat)))):
        raise InvalidInputError(f"{name} is not symmetric")
    return 0.5 * (mat + mat.T)


def _rho_raw(M: np.ndarray) -> float:
    """Spectral radius of a finite square array (no input checks).

    Closed form for 2x2 (by far the hottest case), eigvals otherwise.
    """
    if M.shape == (2, 2):
        tr = M[0, 0] + M[1, 1]
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        disc = tr * tr - 4.0 * det
        if disc >= 0.0:
            root = math.sqrt(disc)
            return max(abs(tr + root), abs(tr - root)) * 0.5
        return math.sqrt(det)
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def _lyap_core(acl: np.ndarray, w: np.ndarray, eye_nn: np.ndarray) -> np.ndarray | None:
    """Solve P = W + Acl' P Acl via Kronecker vectorization (row-major vec).

    Returns None on a singular system.  A backward-stable LU solve leaves a
    defect around machine epsilon relative to ||P||, comfortably inside the
    residual tolerance, so no refinement pass is needed.
    """
    n = acl.shape[0]
    at = acl.T
    kron = np.einsum("ab,cd->acbd", at, at).reshape(n * n, n * n)
    sys_mat = eye_nn - kron
    try:
        vec = np.linalg.solve(sys_mat, w.reshape(-1))
    except np.linalg.LinAlgError:
        return None
    p = vec.reshape(n, n)
    return 0.5 * (p + p.T)


class _FastOps:
    """Raw-array evaluation core for one system; no input validation."""

    __slots__ = ("A", "B", "Q", "R", "n", "m", "eye_nn")

    def __init__(self, A, B, Q, R):
        self.A, self.B, self.Q, self.R = A, B, Q, R
        self.n = A.shape[0]
        self.m = B.shape[1]
        self.eye_nn = np.eye(self.n * self.n)

    def closed_loop(self, K):
        return self.A - self.B @ K

    def stable(self, K) -> bool:
        acl = self.A - self.B @ K
        if not np.all(np.isfinite(acl)):
            return False
        return _rho_raw(acl) <= 1.0 - STABILITY_MARGIN

    def pk(self, K) -> np.ndarray | None:
        """Value matrix, or None when K is not stabilizing."""
        acl = self.A - self.B @ K
        if not np.all(np.isfinite(acl)) or _rho_raw(acl) > 1.0 - STABILITY_MARGIN:
            return None
        w = self.Q + K.T @ self.R @ K
        if self.n <= _KRON_MAX_DIM:
            return _lyap_core(acl, w, self.eye_nn)
        return _lyap_series(acl, w)

    def cost_x0(self, K, x0) -> float:
        p = self.pk(K)
        if p is None:
            return INF_COST
        return float(x0 @ p @ x0)

    def cost_sigma(self, K, sigma0) -> float:
        p = self.pk(K)
        if p is None:
            return INF_COST
        return float(np.trace(p @ sigma0))

    def grad(self, K, sigma0) -> np.ndarray | None:
        p = self.pk(K)
        if p is None:
            return None
        acl = self.A - self.B @ K
        if self.n <= _KRON_MAX_DIM:
            sigma_k = _lyap_core(acl.T, sigma0, self.eye_nn)
        else:
            sigma_k = _lyap_series(acl.T, sigma0)
        if sigma_k is None:
            return None
        return 2.0 * ((self.R + self.B.T @ p @ self.B) @ K - self.B.T @ p @ self.A) @ sigma_k

    def rollout(self, K, x0, t_delta: int) -> float:
        acl = self.A - self.B @ K
        w = self.Q + K.T @ self.R @ K
        x = x0
        total = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(t_delta):
                total += float(x @ (w @ x))
                if not math.isfinite(total):
                    return INF_COST
                x = acl @ x
        return total


def _lyap_series(acl: np.ndarray, w: np.ndarray) -> np.ndarray | None:
    """Doubling summation of sum_t (Acl')^t W Acl^t for larger dimensions."""
    p = w.copy()
    x = acl.copy()
    for _ in range(200):
        term = x.T @ p @ x
        p = p + term
        if np.linalg.norm(term, "fro") <= 0.25 * _LYAP_RESIDUAL_TOL:
            return 0.5 * (p + p.T)
        x = x @ x
    return None


@dataclass(frozen=True)
class LtiSystem:
    """Plant and cost matrices (A, B, Q, R) of an LQR instance.

    Construction validates shapes, symmetry, Q >= 0, R > 0, and solves the
    DARE once as an operational stabilizability/detectability check; the
    solution is cached for reuse.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    _dare: "DareSolution" = field(init=False, repr=False, compare=False)
    _fast: _FastOps = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        B = _as_matrix(B, "B")
        Q = _check_symmetric(_as_matrix(self.Q, "Q"), "Q")
        R = _check_symmetric(_as_matrix(self.R, "R"), "R")
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidInputError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise InvalidInputError(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        if Q.shape != (n, n):
            raise InvalidInputError(f"Q must be {n}x{n}, got {Q.shape}")
        if R.shape != (m, m):
            raise InvalidInputError(f"R must be {m}x{m}, got {R.shape}")
        if np.min(np.linalg.eigvalsh(Q)) < -_PSD_TOL:
            raise InvalidInputError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(R)) <= _PSD_TOL:
            raise InvalidInputError("R must be positive definite")
        for name, mat in (("A", A), ("B", B), ("Q", Q), ("R", R)):
            mat.setflags(write=False)
            object.__setattr__(self, name, mat)
        object.__setattr__(self, "_fast", _FastOps(A, B, Q, R))
        object.__setattr__(self, "_dare", _solve_dare_matrices(A, B, Q, R))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def closed_loop(self, K: np.ndarray) -> np.ndarray:
        K = np.asarray(K, dtype=float).reshape(self.m, self.n)
        return self.A - self.B @ K

    def to_json_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "LtiSystem":
        try:
            return cls(A=doc["A"], B=doc["B"], Q=doc["Q"], R=doc["R"])
        except KeyError as exc:
            raise InvalidInputError(f"system document missing key {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LtiSystem":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read system file {path}: {exc}") from exc
        return cls.from_json_dict(doc)


@dataclass(frozen=True)
class DareSolution:
    """Riccati fixed point: value matrix, optimal gain, and the defect norm."""

    p_star: np.ndarray
    k_star: np.ndarray
    residual: float

    @property
    def j_star_trace(self) -> float:
        return float(np.trace(self.p_star))


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix has non-finite entries")
    return _rho_raw(M)


def _gain(sys: LtiSystem, K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.shape != (sys.m, sys.n):
        if K.size == sys.m * sys.n:
            K = K.reshape(sys.m, sys.n)
        else:
            raise InvalidInputError(f"gain must be {sys.m}x{sys.n}, got {K.shape}")
    return K


def is_stabilizing(sys: LtiSystem, K) -> bool:
    """True iff rho(A - BK) <= 1 - STABILITY_MARGIN."""
    return sys._fast.stable(_gain(sys, K))


def solve_discrete_lyapunov(acl: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Solve P = W + Acl' P Acl for symmetric W with rho(Acl) < 1.

    Kronecker vectorization for small dimensions, squared-iterate series
    summation beyond that; the residual is verified against tolerance
    (relative to ||P||_F once that exceeds one) before returning.
    """
    acl = _as_matrix(acl, "Acl")
    w = _check_symmetric(_as_matrix(w, "W"), "W", tol=1e-8)
    n = acl.shape[0]
    if w.shape != (n, n):
        raise InvalidInputError("Acl and W dimensions disagree")
    if _rho_raw(acl) > 1.0 - STABILITY_MARGIN:
        raise NotStabilizingError("closed loop is not stable; Lyapunov equation has no PSD solution")
    if n <= _KRON_MAX_DIM:
        p = _lyap_core(acl, w, np.eye(n * n))
    else:
        p = _lyap_series(acl, w)
    if p is None:
        raise SolverError("Lyapunov solve failed")
    residual = float(np.linalg.norm(p - w - acl.T @ p @ acl, "fro"))
    if not np.isfinite(residual) or residual > _LYAP_RESIDUAL_TOL * max(1.0, float(np.linalg.norm(p, "fro"))):
        raise SolverError(f"Lyapunov residual {residual:.3e} above tolerance")
    return p


def cost_matrix(sys: LtiSystem, K) -> np.ndarray:
    """Value matrix P_K of a stabilizing gain."""
    p = sys._fast.pk(_gain(sys, K))
    if p is None:
        raise NotStabilizingError("gain is not stabilizing; P_K is undefined")
    return p


def cost_exact(sys: LtiSystem, K, sigma0: np.ndarray | None = None) -> float:
    """J(K) = Tr(P_K Sigma0); INF_COST when K is not stabilizing.

    Sigma0 defaults to the identity, i.e. E[x0 x0'] = I.
    """
    K = _gain(sys, K)
    if sigma0 is None:
        p = sys._fast.pk(K)
        return INF_COST if p is None else float(np.trace(p))
    return sys._fast.cost_sigma(K, np.asarray(sigma0, dtype=float))


def cost_from_state(sys: LtiSystem, K, x0) -> float:
    """J(K; x0) = x0' P_K x0; INF_COST when K is not stabilizing."""
    x0 = np.asarray(x0, dtype=float).reshape(sys.n)
    return sys._fast.cost_x0(_gain(sys, K), x0)


def rollout_cost(sys: LtiSystem, K, x0, t_delta: int) -> float:
    """Finite-horizon cost sum_{t<T} x_t'(Q + K'RK)x_t along x_{t+1} = Acl x_t.

    Defined for any gain (the sum is finite); returns INF_COST if the state
    overflows to non-finite values.
    """
    if t_delta < 1 or int(t_delta) != t_delta:
        raise InvalidInputError(f"rollout length must be a positive integer, got {t_delta}")
    K = _gain(sys, K)
    if not np.all(np.isfinite(K)):
        return INF_COST
    x0 = np.asarray(x0, dtype=float).reshape(sys.n)
    return sys._fast.rollout(K, x0, int(t_delta))


def _dare_defect(A, B, Q, R, P) -> np.ndarray:
    bpb = B.T @ P @ B + R
    bpa = B.T @ P @ A
    return Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(bpb, bpa) - P


def _solve_dare_matrices(A, B, Q, R) -> DareSolution:
    """Riccati value iteration from P0 = Q with plateau detection.

    Stops early once the defect drops below _DARE_TARGET_TOL; otherwise
    iterates until the defect stops improving (floating-point floor) and
    accepts if that floor is within _DARE_RESIDUAL_TOL.
    """
    P = Q.copy()
    best = np.inf
    best_P = P
    stall = 0
    for _ in range(_DARE_MAX_ITER):
        try:
            bpb = B.T @ P @ B + R
            gain_term = np.linalg.solve(bpb, B.T @ P @ A)
        except np.linalg.LinAlgError as exc:
            raise NotStabilizableError(f"DARE iteration broke down: {exc}") from exc
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ gain_term
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise NotStabilizableError("DARE iteration diverged (system not stabilizable/detectable)")
        res = float(np.linalg.norm(_dare_defect(A, B, Q, R, P_next), "fro"))
        if res < best:
            if res < 0.9 * best:
                stall = 0
            best, best_P = res, P_next
        else:
            stall += 1
        P = P_next
        if best <= _DARE_TARGET_TOL:
            break
        if stall >= 50:
            break
    if best > _DARE_RESIDUAL_TOL:
        raise NotStabilizableError(
            f"DARE residual plateaued at {best:.3e} (system not stabilizable/detectable)"
        )
    P = best_P
    k_star = np.linalg.solve(B.T @ P @ B + R, B.T @ P @ A)
    if _rho_raw(A - B @ k_star) >= 1.0:
        raise NotStabilizableError("DARE produced a non-stabilizing gain")
    P.setflags(write=False)
    k_star.setflags(write=False)
    return DareSolution(p_star=P, k_star=k_star, residual=best)


def solve_dare(sys: LtiSystem) -> DareSolution:
    """DARE solution (P*, K*) of the system; cached at construction."""
    return sys._dare


def exact_gradient(sys: LtiSystem, K, sigma0: np.ndarray | None = None) -> np.ndarray:
    """Policy gradient of J(K) = Tr(P_K Sigma0).

    grad J = 2 ((R + B'P_K B)K - B'P_K A) Sigma_K with Sigma_K the state
    correlation solving Sigma = Sigma0 + Acl Sigma Acl'.  Used only as a
    validation and instrumentation oracle; the descent loop itself never
    calls it for its update.
    """
    K = _gain(sys, K)
    if sigma0 is None:
        sigma0 = np.eye(sys.n)
    g = sys._fast.grad(K, np.asarray(sigma0, dtype=float))
    if g is None:
        raise NotStabilizingError("gain is not stabilizing; gradient undefined")
    return g


def cost_from_state_many(sys: LtiSystem, Ks: np.ndarray, x0s: np.ndarray) -> np.ndarray:
    """Vectorized J(K_i; x0_i) over a batch of gains; INF_COST where unstable.

    Matches cost_from_state sample-for-sample (same stability margin, same
    Lyapunov equation) but solves the batched Kronecker systems in one call,
    which is what makes Monte-Carlo estimator studies affordable.
    """
    Ks = np.asarray(Ks, dtype=float)
    x0s = np.asarray(x0s, dtype=float)
    if Ks.ndim != 3 or Ks.shape[1:] != (sys.m, sys.n):
        raise InvalidInputError(f"Ks must have shape (N, {sys.m}, {sys.n})")
    if x0s.shape != (Ks.shape[0], sys.n):
        raise InvalidInputError(f"x0s must have shape (N, {sys.n})")
    n = sys.n
    N = Ks.shape[0]
    acl = sys.A[None] - sys.B[None] @ Ks
    finite = np.all(np.isfinite(acl), axis=(1, 2))
    out = np.full(N, INF_COST)
    if not np.any(finite):
        return out
    lam = np.linalg.eigvals(acl[finite])
    stable_mask = np.max(np.abs(lam), axis=1) <= 1.0 - STABILITY_MARGIN
    idx = np.flatnonzero(finite)[stable_mask]
    if idx.size == 0:
        return out
    Kg = Ks[idx]
    at = np.transpose(acl[idx], (0, 2, 1))
    w = sys.Q[None] + np.transpose(Kg, (0, 2, 1)) @ sys.R[None] @ Kg
    kron = np.einsum("iab,icd->iacbd", at, at).reshape(idx.size, n * n, n * n)
    sys_mats = np.eye(n * n)[None] - kron
    vecs = np.linalg.solve(sys_mats, w.reshape(idx.size, n * n)[..., None])[..., 0]
    pmats = vecs.reshape(idx.size, n, n)
    pmats = 0.5 * (pmats + np.transpose(pmats, (0, 2, 1)))
    out[idx] = np.einsum("ia,iab,ib->i", x0s[idx], pmats, x0s[idx])
    return out


def benchmark_system() -> LtiSystem:
    """The 2-state, 1-input open-loop-unstable system used by the experiments."""
    return LtiSystem(
        A=[[2.0, 3.0], [1.0, 2.0]],
        B=[[1.0], [-1.0]],
        Q=[[2.0, -1.0], [-1.0, 2.0]],
        R=[[2.0]],
    )
