"""Closed-form Renyi divergences for the four sharing mechanisms, the
analytic KL references for the order->1 limit, and a Monte-Carlo oracle
that independently estimates every closed form.

All divergences are D_lambda(Q || Q') with Q the first argument (the
distribution actually sampled from). Infinite values are first-class
results, not errors: the worst-case privacy summary is only meaningful
if +inf propagates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import gammaln, psi

from .posterior import DPPosterior, PriorParams
from .rng import _as_generator

__all__ = [
    "RenyiOrder",
    "RenyiResult",
    "KL_ORDER",
    "rd_dp_posteriors",
    "rd_gaussian_diag",
    "rd_gaussian_isotropic",
    "rd_gaussian_learned",
    "rd_monte_carlo",
    "rd_dp_log_density",
    "kl_dirichlet",
    "kl_gaussian_diag",
    "kl_dp_posteriors",
    "MonteCarloEstimate",
    "make_dp_sampler",
    "make_dp_log_density",
]

_LOG_2PI = math.log(2.0 * math.pi)
_Z99 = 2.5758293035489004  # two-sided 99% normal quantile


@dataclass(frozen=True)
class RenyiOrder:
    """Divergence order, strictly greater than 1. The KL limit is
    approximated by lam = 1 + 1e-4."""

    lam: float

    def __post_init__(self):
        if not self.lam > 1.0:
            raise ValueError("Renyi order must satisfy lambda > 1")


KL_ORDER = RenyiOrder(1.0 + 1e-4)


@dataclass(frozen=True)
class RenyiResult:
    """Divergence value with its three-block breakdown:
    (weight-total block, per-component weight blocks, Gaussian blocks).
    valid is False whenever the closed form's positivity conditions fail,
    in which case value is +inf."""

    value: float
    blocks: tuple[float, float, float]
    valid: bool


class MonteCarloEstimate(NamedTuple):
    estimate: float
    ci99: float


# ---------------------------------------------------------------------------
# Gaussian blocks
# ---------------------------------------------------------------------------

def _gaussian_rd_terms(mu, sigma, mu_ref, sigma_ref, lam, form="exact", prior_sigma=None):
    """Per-entry D_lambda terms between diagonal Gaussians.

    form:
      "exact"    variance mixture (1-lam)*sigma^2 + lam*sigma_ref^2; this
                 is the orientation the Monte-Carlo oracle confirms for
                 D_lambda(first || second).
      "mirrored" the transposed mixture, as some transcriptions print it;
                 diagnostic only.
      "printed"  mirrored mixture with the prior sigma substituted in the
                 log term; diagnostic only.

    Returns (terms, ok) with terms an array matching the broadcast shape
    and ok a boolean mask of entries whose mixture is positive.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    mu_ref = np.asarray(mu_ref, dtype=float)
    sigma_ref = np.asarray(sigma_ref, dtype=float)
    if form == "exact":
        s2 = (1.0 - lam) * sigma**2 + lam * sigma_ref**2
        log_den = (1.0 - lam) * np.log(sigma) + lam * np.log(sigma_ref)
    elif form == "mirrored":
        s2 = (1.0 - lam) * sigma_ref**2 + lam * sigma**2
        log_den = (1.0 - lam) * np.log(sigma_ref) + lam * np.log(sigma)
    elif form == "printed":
        if prior_sigma is None:
            raise ValueError("form='printed' needs the prior sigma")
        s2 = (1.0 - lam) * sigma_ref**2 + lam * sigma**2
        log_den = (1.0 - lam) * np.log(np.asarray(prior_sigma, dtype=float)) + lam * np.log(sigma)
    else:
        raise ValueError(f"unknown gaussian form {form!r}")
    ok = s2 > 0.0
    s2_safe = np.where(ok, s2, 1.0)
    terms = (lam / 2.0) * (mu - mu_ref) ** 2 / s2_safe
    terms = terms + (0.5 * np.log(s2_safe) - log_den) / (1.0 - lam)
    return np.where(ok, terms, np.inf), ok


def rd_gaussian_diag(mu, sigma_q, mu_prime, sigma_prime_ref, order: RenyiOrder,
                     form: str = "exact") -> RenyiResult:
    """D_lambda(N(mu, diag sigma_q^2) || N(mu_prime, diag sigma_prime_ref^2)).

    Requires the variance mixture to be positive elementwise; otherwise
    the divergence is +inf (valid=False).
    """
    mu = np.asarray(mu, dtype=float)
    sigma_q = np.asarray(sigma_q, dtype=float)
    mu_prime = np.asarray(mu_prime, dtype=float)
    sigma_prime_ref = np.asarray(sigma_prime_ref, dtype=float)
    if not (mu.shape == sigma_q.shape == mu_prime.shape == sigma_prime_ref.shape):
        raise ValueError("all four parameter vectors must share one shape")
    if np.any(sigma_q <= 0.0) or np.any(sigma_prime_ref <= 0.0):
        raise ValueError("sigmas must be strictly positive")
    terms, ok = _gaussian_rd_terms(mu, sigma_q, mu_prime, sigma_prime_ref, order.lam, form)
    if not np.all(ok):
        return RenyiResult(value=math.inf, blocks=(0.0, 0.0, math.inf), valid=False)
    value = float(np.sum(terms))
    return RenyiResult(value=value, blocks=(0.0, 0.0, value), valid=True)


def rd_gaussian_isotropic(mu, mu_prime, sigma: float, order: RenyiOrder) -> float:
    """Equal isotropic covariances: lam * ||mu - mu'||^2 / (2 sigma^2)."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    mu = np.asarray(mu, dtype=float)
    mu_prime = np.asarray(mu_prime, dtype=float)
    if mu.shape != mu_prime.shape:
        raise ValueError("mean vectors must share one shape")
    return float(order.lam * np.sum((mu - mu_prime) ** 2) / (2.0 * sigma**2))


def rd_gaussian_learned(mu, mu_prime, sigma_vec, order: RenyiOrder) -> float:
    """Equal diagonal covariances: (lam/2) * ||(mu - mu') / sigma_vec||^2."""
    mu = np.asarray(mu, dtype=float)
    mu_prime = np.asarray(mu_prime, dtype=float)
    sigma_vec = np.asarray(sigma_vec, dtype=float)
    if not (mu.shape == mu_prime.shape == sigma_vec.shape):
        raise ValueError("mu, mu_prime and sigma_vec must share one shape")
    if np.any(sigma_vec <= 0.0):
        raise ValueError("sigma_vec must be strictly positive")
    return float(order.lam / 2.0 * np.sum(((mu - mu_prime) / sigma_vec) ** 2))


# ---------------------------------------------------------------------------
# DP posterior sampling distribution
# ---------------------------------------------------------------------------

def _check_pair(q: DPPosterior, q_prime: DPPosterior):
    if q.n != q_prime.n or q.d != q_prime.d:
        raise ValueError(
            f"posteriors must be padded to equal shape first: ({q.n},{q.d}) vs ({q_prime.n},{q_prime.d})"
        )
    if np.any(q.kappa != q_prime.kappa):
        raise ValueError("posteriors must share the same kappa vector")


def rd_dp_posteriors(q: DPPosterior, q_prime: DPPosterior, order: RenyiOrder,
                     prior: PriorParams = PriorParams(),
                     gaussian_form: str = "exact") -> RenyiResult:
    """D_lambda between the factorized ordered sampling distributions of
    two posteriors (Dirichlet over slot weights times per-slot Gaussians).

    The value is exact for what is actually shared and an upper bound on
    the divergence between the underlying Dirichlet Processes. It is
    +inf whenever a positivity condition fails, notably when exactly one
    side has a zero pseudo-count at some slot (disjoint weight support).
    """
    _check_pair(q, q_prime)
    lam = order.lam
    a = q.alpha
    b = q_prime.alpha
    kap = q.kappa.astype(float)

    # weight-total block
    A = float(a.sum())
    B = float(b.sum())
    c0 = lam * A - (lam - 1.0) * B
    if c0 <= 0.0:
        total_block = math.inf
    else:
        total_block = -(
            gammaln(c0) / (lam - 1.0) + gammaln(B) - lam / (lam - 1.0) * gammaln(A)
        )

    # per-component weight blocks; slots where both sides have zero
    # pseudo-count are deterministic on both sides and contribute nothing
    both_zero = (a == 0.0) & (b == 0.0)
    one_zero = (a == 0.0) ^ (b == 0.0)
    comp_block = 0.0
    if np.any(one_zero):
        comp_block = math.inf
    else:
        act = ~both_zero
        ak = a[act] / kap[act]
        bk = b[act] / kap[act]
        c = lam * ak - (lam - 1.0) * bk
        if np.any(c <= 0.0):
            comp_block = math.inf
        else:
            comp_block = float(
                np.sum(
                    kap[act]
                    * (gammaln(c) / (lam - 1.0) + gammaln(bk) - lam / (lam - 1.0) * gammaln(ak))
                )
            )

    # Gaussian blocks: every slot shares its vector regardless of weight
    _, pr_mu, pr_sigma = prior.materialize(q.d)
    terms, ok = _gaussian_rd_terms(
        q.mu, q.sigma, q_prime.mu, q_prime.sigma, lam, gaussian_form,
        prior_sigma=np.broadcast_to(pr_sigma, q.mu.shape),
    )
    if not np.all(ok):
        gauss_block = math.inf
    else:
        gauss_block = float(np.sum(kap[:, None] * terms))

    blocks = (total_block, comp_block, gauss_block)
    value = total_block + comp_block + gauss_block
    valid = math.isfinite(value)
    return RenyiResult(value=value if valid else math.inf, blocks=blocks, valid=valid)


def _slot_params(q: DPPosterior):
    slot_alpha = np.repeat(q.alpha / q.kappa, q.kappa)
    slot_mu = np.repeat(q.mu, q.kappa, axis=0)
    slot_sigma = np.repeat(q.sigma, q.kappa, axis=0)
    return slot_alpha, slot_mu, slot_sigma


def _dp_log_density_batch(q: DPPosterior, pi: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Log density of the sampling distribution at a batch of samples.

    pi: (k, m) weights, Z: (k, m, d) vectors, m = sum(kappa). Rows whose
    weights sit on the boundary of the supported sub-simplex get -inf.
    """
    slot_alpha, slot_mu, slot_sigma = _slot_params(q)
    pos = slot_alpha > 0.0
    a = slot_alpha[pos]
    out = np.zeros(pi.shape[0])

    bad = np.any(pi[:, pos] <= 0.0, axis=1)
    if np.any(~pos):
        bad |= np.any(pi[:, ~pos] != 0.0, axis=1)

    pi_pos = np.where(pi[:, pos] > 0.0, pi[:, pos], 1.0)
    log_b = float(np.sum(gammaln(a)) - gammaln(np.sum(a)))
    out += np.sum((a - 1.0) * np.log(pi_pos), axis=1) - log_b

    resid = (Z - slot_mu[None, :, :]) / slot_sigma[None, :, :]
    out += np.sum(-0.5 * resid**2 - np.log(slot_sigma)[None, :, :] - 0.5 * _LOG_2PI, axis=(1, 2))
    out[bad] = -math.inf
    return out


def rd_dp_log_density(q: DPPosterior, s) -> float:
    """Log density of one weighted-vector sample under q's sampling
    distribution (Dirichlet over slot weights + per-slot Gaussians)."""
    pi = np.asarray(s.pi, dtype=float)[None, :]
    Z = np.asarray(s.Z, dtype=float)[None, :, :]
    m = int(q.kappa.sum())
    if pi.shape[1] != m or Z.shape[1] != m or Z.shape[2] != q.d:
        raise ValueError("sample shape does not match the posterior")
    return float(_dp_log_density_batch(q, pi, Z)[0])


def make_dp_sampler(q: DPPosterior, rng) -> Callable[[int], tuple]:
    """Batch sampler for the Monte-Carlo oracle: n -> (pi (n,m), Z (n,m,d))."""
    g = _as_generator(rng)
    slot_alpha, slot_mu, slot_sigma = _slot_params(q)
    pos = slot_alpha > 0.0

    def draw(k: int):
        y = np.zeros((k, slot_alpha.shape[0]))
        y[:, pos] = g.standard_gamma(slot_alpha[pos], size=(k, int(pos.sum())))
        pi = y / y.sum(axis=1, keepdims=True)
        Z = slot_mu[None, :, :] + slot_sigma[None, :, :] * g.standard_normal((k,) + slot_mu.shape)
        return pi, Z

    return draw


def make_dp_log_density(q: DPPosterior) -> Callable[[tuple], np.ndarray]:
    """Batch log-density closure over samples produced by make_dp_sampler."""

    def logdens(sample_batch):
        pi, Z = sample_batch
        return _dp_log_density_batch(q, pi, Z)

    return logdens


# ---------------------------------------------------------------------------
# Monte-Carlo oracle
# ---------------------------------------------------------------------------

def rd_monte_carlo(log_density_q, log_density_q_prime, sampler_q, order: RenyiOrder,
                   n_draws: int, chunk: int = 200_000) -> MonteCarloEstimate:
    """Estimate D_lambda(Q || Q') = log E_Q[(Q/Q')^(lam-1)] / (lam-1) by
    simple Monte Carlo over draws from Q, with a delta-method 99%
    confidence half-width.

    The density callables take a sampler batch and return per-draw log
    densities; everything is aggregated through log-sum-exp so the
    estimator survives |log ratios| in the hundreds. Any draw with zero
    density under Q' but positive under Q makes the estimate +inf.
    """
    if n_draws < 10_000:
        raise ValueError("the oracle needs at least 1e4 draws")
    lam = order.lam
    lse1 = -math.inf
    lse2 = -math.inf
    done = 0
    hit_inf = False
    while done < n_draws:
        k = min(chunk, n_draws - done)
        batch = sampler_q(k)
        lq = np.asarray(log_density_q(batch), dtype=float)
        lqp = np.asarray(log_density_q_prime(batch), dtype=float)
        if np.any(np.isinf(lqp) & (lqp < 0) & np.isfinite(lq)):
            hit_inf = True
            break
        t = (lam - 1.0) * (lq - lqp)
        m = float(np.max(t))
        lse1 = np.logaddexp(lse1, m + math.log(np.sum(np.exp(t - m))))
        m2 = float(np.max(2.0 * t))
        lse2 = np.logaddexp(lse2, m2 + math.log(np.sum(np.exp(2.0 * t - m2))))
        done += k
    if hit_inf:
        return MonteCarloEstimate(estimate=math.inf, ci99=math.inf)
    log_mean = lse1 - math.log(n_draws)
    estimate = log_mean / (lam - 1.0)
    # Var(log W-bar) ~ (E[W^2]/E[W]^2 - 1) / n
    rel_second = math.exp(min(lse2 - math.log(n_draws) - 2.0 * log_mean, 700.0))
    var_ratio = max(rel_second - 1.0, 0.0) * n_draws / (n_draws - 1)
    ci99 = _Z99 * math.sqrt(var_ratio / n_draws) / (lam - 1.0)
    return MonteCarloEstimate(estimate=float(estimate), ci99=float(ci99))


# ---------------------------------------------------------------------------
# Analytic KL references (order -> 1 limits)
# ---------------------------------------------------------------------------

def kl_dirichlet(a, b) -> float:
    """KL(Dir(a) || Dir(b)). Slots where both sides are zero are skipped;
    a slot where exactly one side is zero makes the KL infinite."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("parameter vectors must share one shape")
    both_zero = (a == 0.0) & (b == 0.0)
    if np.any((a == 0.0) ^ (b == 0.0)):
        return math.inf
    a = a[~both_zero]
    b = b[~both_zero]
    a0 = a.sum()
    b0 = b.sum()
    return float(
        gammaln(a0)
        - np.sum(gammaln(a))
        - gammaln(b0)
        + np.sum(gammaln(b))
        + np.sum((a - b) * (psi(a) - psi(a0)))
    )


def kl_gaussian_diag(mu, sigma, mu_ref, sigma_ref) -> float:
    """KL(N(mu, diag sigma^2) || N(mu_ref, diag sigma_ref^2)), summed."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    mu_ref = np.asarray(mu_ref, dtype=float)
    sigma_ref = np.asarray(sigma_ref, dtype=float)
    return float(
        np.sum(
            np.log(sigma_ref / sigma)
            + (sigma**2 + (mu - mu_ref) ** 2) / (2.0 * sigma_ref**2)
            - 0.5
        )
    )


def kl_dp_posteriors(q: DPPosterior, q_prime: DPPosterior) -> float:
    """Analytic KL between the two factorized sampling distributions;
    the independent reference for the order->1 limit of the closed form."""
    _check_pair(q, q_prime)
    sa, sm, ss = _slot_params(q)
    sb, sm2, ss2 = _slot_params(q_prime)
    value = kl_dirichlet(sa, sb)
    if math.isinf(value):
        return math.inf
    return value + kl_gaussian_diag(sm, ss, sm2, ss2)
