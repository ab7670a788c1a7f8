"""Dirichlet-Process posteriors over weighted-vector sequences.

A posterior is what gets *shared about* an input: per-token pseudo-counts,
Gaussian means and variances, plus one appended component fixed to the
prior. Sampling it yields the noisy weighted-vector sequence that is the
actually released artifact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .rng import _as_generator

__all__ = [
    "PriorParams",
    "DPPosterior",
    "WeightedVectorSample",
    "build_posterior",
    "pad_to_length",
    "prior_reference",
    "sample_embedding",
    "serialize_posterior",
    "deserialize_posterior",
]

DPQ_MAGIC = b"NVDPQ1"


@dataclass(frozen=True)
class PriorParams:
    """Fixed prior: total pseudo-count 1 and a standard Gaussian base."""

    alpha0: float = 1.0
    mu: np.ndarray | None = None  # (d,), defaults to zeros
    sigma: np.ndarray | None = None  # (d,), defaults to ones

    def materialize(self, d: int) -> tuple[float, np.ndarray, np.ndarray]:
        mu = np.zeros(d) if self.mu is None else np.asarray(self.mu, dtype=float)
        sigma = np.ones(d) if self.sigma is None else np.asarray(self.sigma, dtype=float)
        if mu.shape != (d,) or sigma.shape != (d,):
            raise ValueError(f"prior mu/sigma must have shape ({d},)")
        if self.alpha0 <= 0.0 or np.any(sigma <= 0.0):
            raise ValueError("prior pseudo-count and sigma must be positive")
        return float(self.alpha0), mu, sigma


@dataclass
class DPPosterior:
    """Per-sequence posterior parameters, prior component last.

    alpha: (n+1,) non-negative pseudo-counts, sum > 0
    mu:    (n+1, d) component means
    sigma: (n+1, d) strictly positive component stddevs
    kappa: (n+1,) per-component sample counts (1 everywhere by default)
    """

    alpha: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    kappa: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.kappa is None:
            self.kappa = np.ones(self.alpha.shape[0], dtype=np.int64)
        else:
            self.kappa = np.asarray(self.kappa, dtype=np.int64)
        m, d = self.mu.shape
        if self.alpha.shape != (m,) or self.sigma.shape != (m, d) or self.kappa.shape != (m,):
            raise ValueError("inconsistent posterior shapes")
        if np.any(self.alpha < 0.0):
            raise ValueError("pseudo-counts must be non-negative")
        if np.any(self.sigma <= 0.0):
            raise ValueError("sigmas must be strictly positive")
        if np.any(self.kappa < 1):
            raise ValueError("kappa entries must be >= 1")
        if self.alpha.sum() <= 0.0:
            raise ValueError("total pseudo-count must be positive")

    @property
    def n(self) -> int:
        """Token count (the prior component is excluded)."""
        return self.alpha.shape[0] - 1

    @property
    def d(self) -> int:
        return self.mu.shape[1]

    @property
    def alpha0(self) -> float:
        return float(self.alpha.sum())


@dataclass
class WeightedVectorSample:
    """One released sample: weights pi on the simplex and vectors Z,
    ordered by source component (token order, prior component last)."""

    pi: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        if self.pi.shape[0] != self.Z.shape[0]:
            raise ValueError("pi and Z disagree on the number of vectors")


def build_posterior(alpha, mu, sigma, prior: PriorParams = PriorParams()) -> DPPosterior:
    """Assemble a posterior from per-token parameters, appending the
    prior as component n+1."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if mu.ndim != 2 or sigma.shape != mu.shape or alpha.shape != (mu.shape[0],):
        raise ValueError(
            f"inconsistent token parameter shapes: alpha {alpha.shape}, mu {mu.shape}, sigma {sigma.shape}"
        )
    d = mu.shape[1]
    a0p, mup, sigp = prior.materialize(d)
    return DPPosterior(
        alpha=np.concatenate([alpha, [a0p]]),
        mu=np.vstack([mu, mup[None, :]]),
        sigma=np.vstack([sigma, sigp[None, :]]),
    )


def pad_to_length(q: DPPosterior, target_n: int, epsilon_alpha: float = 0.0) -> DPPosterior:
    """Insert pad components (alpha=epsilon_alpha, mu=0, sigma=1) so the
    posterior has target_n token components; the prior stays last.

    epsilon_alpha=0 reproduces the released artifact exactly (and makes
    cross-length divergences infinite); audits pass a small floor so the
    comparison stays finite and reportable.
    """
    if target_n < q.n:
        raise ValueError(f"cannot pad n={q.n} down to {target_n}")
    if epsilon_alpha < 0.0:
        raise ValueError("epsilon_alpha must be non-negative")
    k = target_n - q.n
    if k == 0:
        return q
    d = q.d
    return DPPosterior(
        alpha=np.concatenate([q.alpha[:-1], np.full(k, float(epsilon_alpha)), q.alpha[-1:]]),
        mu=np.vstack([q.mu[:-1], np.zeros((k, d)), q.mu[-1:]]),
        sigma=np.vstack([q.sigma[:-1], np.ones((k, d)), q.sigma[-1:]]),
        kappa=np.concatenate([q.kappa[:-1], np.ones(k, dtype=np.int64), q.kappa[-1:]]),
    )


def prior_reference(n: int, d: int, prior: PriorParams = PriorParams()) -> DPPosterior:
    """The prior spread over n+1 components: symmetric pseudo-counts
    alpha0_p/(n+1) and the prior Gaussian everywhere. This is the
    reference the KL regularizers (and their divergence-block limits)
    compare against."""
    a0p, mup, sigp = prior.materialize(d)
    m = n + 1
    return DPPosterior(
        alpha=np.full(m, a0p / m),
        mu=np.tile(mup, (m, 1)),
        sigma=np.tile(sigp, (m, 1)),
    )


def sample_embedding(q: DPPosterior, rng) -> WeightedVectorSample:
    """Draw one shareable sample S = (pi, Z) from the posterior.

    Weights come from a Dirichlet over the per-slot pseudo-counts
    alpha_i/kappa_i (each component contributes kappa_i slots); one
    vector per slot is drawn from that component's Gaussian. Slots are
    emitted in component order, so samples from different inputs align
    by token position.
    """
    g = _as_generator(rng)
    from .rng import sample_dirichlet  # local import to keep module load light

    slot_alpha = np.repeat(q.alpha / q.kappa, q.kappa)
    pi = sample_dirichlet(g, slot_alpha)
    mu = np.repeat(q.mu, q.kappa, axis=0)
    sigma = np.repeat(q.sigma, q.kappa, axis=0)
    Z = mu + sigma * g.standard_normal(mu.shape)
    return WeightedVectorSample(pi=pi, Z=Z)


def serialize_posterior(q: DPPosterior) -> bytes:
    """Encode as the '.dpq' byte format: magic, little-endian uint32
    (n, d), then (n+1)*(1+2d) float64 values component-major
    (alpha, mu[0..d), sigma[0..d)). kappa is not part of the format and
    must be all ones."""
    if np.any(q.kappa != 1):
        raise ValueError("the .dpq format only represents kappa == 1 posteriors")
    payload = np.concatenate(
        [np.concatenate([[q.alpha[i]], q.mu[i], q.sigma[i]]) for i in range(q.n + 1)]
    ).astype("<f8")
    return DPQ_MAGIC + struct.pack("<II", q.n, q.d) + payload.tobytes()


def deserialize_posterior(data: bytes) -> DPPosterior:
    """Decode a '.dpq' byte string; exact inverse of serialize_posterior."""
    if len(data) < len(DPQ_MAGIC) + 8:
        raise FormatError(f"posterior blob truncated at byte {len(data)} (header incomplete)")
    if data[: len(DPQ_MAGIC)] != DPQ_MAGIC:
        raise FormatError("bad magic: not a .dpq posterior (or unsupported version)")
    n, d = struct.unpack_from("<II", data, len(DPQ_MAGIC))
    off = len(DPQ_MAGIC) + 8
    count = (n + 1) * (1 + 2 * d)
    need = off + 8 * count
    if len(data) < need:
        raise FormatError(f"posterior blob truncated at byte {len(data)}, expected {need}")
    if len(data) > need:
        raise FormatError(f"trailing bytes after posterior payload (expected {need} bytes)")
    vals = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(n + 1, 1 + 2 * d)
    return DPPosterior(alpha=vals[:, 0].copy(), mu=vals[:, 1 : 1 + d].copy(), sigma=vals[:, 1 + d :].copy())
