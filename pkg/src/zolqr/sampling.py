"""Reproducible random sources: unit-sphere directions and initial states.

Every trial owns an RngStream; identical (seed, stream_id) pairs replay the
same draws bit-for-bit, and distinct stream ids give statistically
independent streams, so trials can run concurrently without shared state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from zolqr.lqr_core import InvalidInputError


@dataclass(frozen=True)
class RngStream:
    """Seeded, splittable random stream (seed plus a stream index)."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.default_rng(ss)


def sample_sphere(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the unit Frobenius sphere in R^{m x n}.

    Gaussian-normalize construction; resamples on the (probability-zero)
    all-zero draw.
    """
    if m < 1 or n < 1:
        raise InvalidInputError("direction dimensions must be >= 1")
    while True:
        g = rng.standard_normal((m, n))
        norm = np.linalg.norm(g)
        if norm > 1e-12:
            return g / norm


class InitialStateDist:
    """Initial-state distribution with known support bound and second moment.

    Modes:
      signed_scaled_basis: uniform over {+-sqrt(n) e_i}; zero mean, second
        moment I_n, ||v||^2 = n exactly.
      canonical_basis: uniform over {e_i}; second moment I_n / n (deviates
        from the zero-mean/identity assumptions; kept for literal replication
        of runs that sample plain basis vectors).
      custom_list: uniform over a user-supplied list of vectors.
    """

    MODES = ("signed_scaled_basis", "canonical_basis", "custom_list")

    def __init__(self, mode: str, n: int, vectors=None):
        if mode not in self.MODES:
            raise InvalidInputError(f"unknown initial-state mode {mode!r}")
        if n < 1:
            raise InvalidInputError("state dimension must be >= 1")
        self.mode = mode
        self.n = int(n)
        if mode == "custom_list":
            if not vectors:
                raise InvalidInputError("custom_list mode needs at least one vector")
            vecs = [np.asarray(v, dtype=float).reshape(self.n) for v in vectors]
            for v in vecs:
                if not np.all(np.isfinite(v)):
                    raise InvalidInputError("custom initial states must be finite")
            self._vectors = tuple(v.copy() for v in vecs)
            for v in self._vectors:
                v.setflags(write=False)
        else:
            if vectors is not None:
                raise InvalidInputError(f"{mode} mode takes no explicit vectors")
            self._vectors = None

    @property
    def c_m(self) -> float:
        """Almost-sure bound on ||v||^2 over the support."""
        if self.mode == "signed_scaled_basis":
            return float(self.n)
        if self.mode == "canonical_basis":
            return 1.0
        return float(max(float(v @ v) for v in self._vectors))

    def second_moment(self) -> np.ndarray:
        """E[v v'] of the distribution (the exact-cost comparator Sigma0)."""
        if self.mode == "signed_scaled_basis":
            return np.eye(self.n)
        if self.mode == "canonical_basis":
            return np.eye(self.n) / self.n
        acc = np.zeros((self.n, self.n))
        for v in self._vectors:
            acc += np.outer(v, v)
        return acc / len(self._vectors)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.mode == "custom_list":
            return self._vectors[rng.integers(len(self._vectors))].copy()
        i = int(rng.integers(self.n))
        v = np.zeros(self.n)
        if self.mode == "signed_scaled_basis":
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            v[i] = sign * np.sqrt(self.n)
        else:
            v[i] = 1.0
        return v


def sample_initial_state(dist: InitialStateDist, rng: np.random.Generator) -> np.ndarray:
    """Draw one initial state from the configured distribution."""
    return dist.sample(rng)
