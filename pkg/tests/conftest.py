import math

import numpy as np
import pytest

from nvdp.posterior import DPPosterior, PriorParams, build_posterior
from nvdp.renyi import RenyiOrder, rd_dp_posteriors


def random_posterior(g, n, d, alpha_range=(0.2, 3.0), mu_range=(-1.0, 1.0),
                     sigma_range=(0.5, 2.0), prior=PriorParams()):
    alpha = g.uniform(*alpha_range, size=n)
    mu = g.uniform(*mu_range, size=(n, d))
    sigma = g.uniform(*sigma_range, size=(n, d))
    return build_posterior(alpha, mu, sigma, prior)


def mc_relvar(q, qp, lam):
    """Relative second moment E[W^2]/E[W]^2 of the oracle's importance
    weights, in closed form: exp(2 (lam-1) (D_{2 lam - 1} - D_lam))."""
    d1 = rd_dp_posteriors(q, qp, RenyiOrder(lam))
    d2 = rd_dp_posteriors(q, qp, RenyiOrder(2.0 * lam - 1.0))
    if not (d1.valid and d2.valid):
        return math.inf
    return math.exp(2.0 * (lam - 1.0) * (d2.value - d1.value))


def random_valid_pair(g, n, d, orders, max_relvar=None, **kw):
    """Rejection-sample posterior pairs until the divergence is finite at
    every requested order. The closed form is +inf outside its validity
    region and the Monte-Carlo oracle cannot bracket an infinity; the
    optional max_relvar bound additionally keeps the oracle's importance
    weights square-integrable enough for its normal-theory confidence
    interval to be trustworthy."""
    for _ in range(2000):
        q = random_posterior(g, n, d, **kw)
        qp = random_posterior(g, n, d, **kw)
        if not all(rd_dp_posteriors(q, qp, RenyiOrder(lam)).valid for lam in orders):
            continue
        if max_relvar is not None and any(mc_relvar(q, qp, lam) > max_relvar for lam in orders):
            continue
        return q, qp
    raise AssertionError("could not find a finite-divergence pair")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
