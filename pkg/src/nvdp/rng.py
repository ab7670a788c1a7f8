"""Seeded sampling of the Gaussian, Gamma and Dirichlet variates used by
posterior sampling and the Monte-Carlo divergence oracle.

Streams are counter-style: an (seed, stream) pair always reproduces the
same variate sequence, and distinct streams are statistically
independent, so data-parallel audit work can be seeded per item without
caring about scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RngState", "sample_gaussian", "sample_gamma", "sample_dirichlet"]


@dataclass(frozen=True)
class RngState:
    """A reproducible random stream id: (seed, stream)."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator for this (seed, stream) pair."""
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, k: int) -> "RngState":
        """Child stream k. Callers partition k-space; children of
        distinct (stream, k) never collide because the spawn key is the
        concatenated path."""
        return _ChildRngState(self.seed, self.stream, path=(int(k),))


@dataclass(frozen=True)
class _ChildRngState(RngState):
    path: tuple = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.stream),) + tuple(self.path)
        )
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, k: int) -> "RngState":
        return _ChildRngState(self.seed, self.stream, path=tuple(self.path) + (int(k),))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngState):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngState or numpy Generator, got {type(rng)!r}")


def sample_gaussian(rng, mu, sigma):
    """mu + sigma * eps with eps ~ N(0, I). sigma must be positive."""
    g = _as_generator(rng)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if mu.shape != sigma.shape:
        raise ValueError(f"mu shape {mu.shape} != sigma shape {sigma.shape}")
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be strictly positive")
    return mu + sigma * g.standard_normal(mu.shape)


def sample_gamma(rng, shape):
    """One Gamma(shape, 1) variate, shape > 0. Callers short-circuit a
    zero pseudo-count to the constant 0 instead of calling this."""
    if shape <= 0.0:
        raise ValueError("gamma shape must be > 0 (zero weights are handled by the caller)")
    g = _as_generator(rng)
    return float(g.standard_gamma(shape))


def sample_dirichlet(rng, alpha):
    """Dirichlet draw by normalized Gamma variates.

    Entries with alpha_i == 0 come out exactly 0 (their component
    contributes no weight); at least one alpha_i must be positive.
    """
    g = _as_generator(rng)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1:
        raise ValueError("alpha must be a vector")
    if np.any(alpha < 0.0):
        raise ValueError("alpha entries must be non-negative")
    pos = alpha > 0.0
    if not np.any(pos):
        raise ValueError("all-zero alpha")
    y = np.zeros_like(alpha)
    y[pos] = g.standard_gamma(alpha[pos])
    total = y.sum()
    if total <= 0.0:
        # all tiny shapes can underflow to 0; fall back to the slot with
        # the largest pseudo-count so the output stays on the simplex
        y[np.argmax(alpha)] = 1.0
        total = 1.0
    return y / total
