"""Acceptance suite: one test per acceptance criterion, each printing a
pass/fail line with its runtime. Tolerances are pinned here, not
configurable.

Statistical criteria are fully seeded: every Monte-Carlo comparison is
deterministic, and oracle instances are rejection-sampled to keep the
closed form finite and the oracle's importance weights square-integrable
(a confidence interval cannot bracket an infinity, and the delta-method
interval presumes a finite second moment).
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from nvdp.accountant import bdp_epsilon, build_pairwise_matrix, rdp_summary
from nvdp.cli import main
from nvdp.dataio import SyntheticConfig, generate_synthetic, write_embeddings
from nvdp.network import (
    LossWeights,
    TrainConfig,
    denoising_attention,
    evaluate_accuracy,
    grad,
    init_params,
    loss_given_noise,
    make_fixed_noise,
    project_posterior,
    train,
)
from nvdp.posterior import PriorParams, WeightedVectorSample
from nvdp.renyi import (
    KL_ORDER,
    RenyiOrder,
    kl_dp_posteriors,
    make_dp_log_density,
    make_dp_sampler,
    rd_dp_posteriors,
    rd_gaussian_diag,
    rd_gaussian_isotropic,
    rd_gaussian_learned,
    rd_monte_carlo,
)
from nvdp.rng import RngState

from conftest import random_posterior, random_valid_pair

PRIOR = PriorParams()


@contextmanager
def criterion(num, label):
    t0 = time.time()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {num}: FAIL  {label}  ({time.time() - t0:.1f}s)", flush=True)
        raise
    print(f"ACCEPTANCE {num}: PASS  {label}  ({time.time() - t0:.1f}s)", flush=True)


def test_01_divergence_identity():
    with criterion(1, "identity of indiscernibles for the posterior divergence"):
        g = np.random.default_rng(101)
        for _ in range(50):
            q = random_posterior(g, n=int(g.integers(0, 7)), d=int(g.integers(1, 9)))
            for lam in (1.1, 2.0, 10.0):
                r = rd_dp_posteriors(q, q, RenyiOrder(lam))
                assert r.valid and abs(r.value) <= 1e-9


def test_02_oracle_equivalence_posterior_divergence():
    with criterion(2, "closed form inside the 1e6-draw Monte-Carlo 99% CI, 20 pairs"):
        g = np.random.default_rng(202)
        n_draws = 1_000_000
        for trial in range(20):
            lam = (1.1, 2.0)[trial % 2]
            q, qp = random_valid_pair(g, n=2, d=3, orders=[lam], max_relvar=n_draws / 5000)
            closed = rd_dp_posteriors(q, qp, RenyiOrder(lam))
            est, ci = rd_monte_carlo(
                make_dp_log_density(q), make_dp_log_density(qp),
                make_dp_sampler(q, RngState(4000 + trial, 0)), RenyiOrder(lam), n_draws,
            )
            assert closed.valid
            assert abs(est - closed.value) <= ci, (trial, lam, closed.value, est, ci)


def test_03_gaussian_mechanisms():
    with criterion(3, "Gaussian mechanism closed forms, 20 MC oracle checks per mechanism at 1e6 draws"):
        # exact arithmetic anchor at the published noise scale
        mu = np.zeros(4)
        mu2 = np.zeros(4)
        mu2[0] = 1.0
        got = rd_gaussian_isotropic(mu, mu2, 0.55, RenyiOrder(1.1))
        assert abs(got - 1.818182) <= 1e-6

        g = np.random.default_rng(303)
        n_draws = 1_000_000

        def gauss_logdens(m, s):
            return lambda z: np.sum(-0.5 * ((z - m) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi), axis=1)

        # per-token diagonal mechanism
        for trial in range(20):
            lam = (1.1, 2.0)[trial % 2]
            while True:
                s_q = g.uniform(0.5, 2.0, size=3)
                s_ref = g.uniform(0.5, 2.0, size=3)
                mu_q = g.uniform(-1, 1, size=3)
                mu_ref = g.uniform(-1, 1, size=3)
                d1 = rd_gaussian_diag(mu_q, s_q, mu_ref, s_ref, RenyiOrder(lam))
                d2 = rd_gaussian_diag(mu_q, s_q, mu_ref, s_ref, RenyiOrder(2 * lam - 1))
                if d1.valid and d2.valid and math.exp(2 * (lam - 1) * (d2.value - d1.value)) <= n_draws / 5000:
                    break
            stream = RngState(9100 + trial, 0).generator()
            est, ci = rd_monte_carlo(
                gauss_logdens(mu_q, s_q), gauss_logdens(mu_ref, s_ref),
                lambda k: mu_q + s_q * stream.standard_normal((k, 3)),
                RenyiOrder(lam), n_draws,
            )
            assert abs(est - d1.value) <= ci, (trial, lam, d1.value, est, ci)

        # global learned-scale mechanism (equal covariances: light tails)
        for trial in range(20):
            lam = (1.1, 2.0)[trial % 2]
            sig = g.uniform(0.5, 2.0, size=3)
            mu_q = g.uniform(-1, 1, size=3)
            mu_ref = g.uniform(-1, 1, size=3)
            closed = rd_gaussian_learned(mu_q, mu_ref, sig, RenyiOrder(lam))
            stream = RngState(9200 + trial, 0).generator()
            est, ci = rd_monte_carlo(
                gauss_logdens(mu_q, sig), gauss_logdens(mu_ref, sig),
                lambda k: mu_q + sig * stream.standard_normal((k, 3)),
                RenyiOrder(lam), n_draws,
            )
            assert abs(est - closed) <= ci, (trial, lam, closed, est, ci)

        # fixed isotropic mechanism
        for trial in range(20):
            lam = (1.1, 2.0)[trial % 2]
            sigma = float(g.uniform(0.4, 1.5))
            sig = np.full(3, sigma)
            mu_q = g.uniform(-1, 1, size=3)
            mu_ref = g.uniform(-1, 1, size=3)
            closed = rd_gaussian_isotropic(mu_q, mu_ref, sigma, RenyiOrder(lam))
            stream = RngState(9300 + trial, 0).generator()
            est, ci = rd_monte_carlo(
                gauss_logdens(mu_q, sig), gauss_logdens(mu_ref, sig),
                lambda k: mu_q + sig * stream.standard_normal((k, 3)),
                RenyiOrder(lam), n_draws,
            )
            assert abs(est - closed) <= ci, (trial, lam, closed, est, ci)


def test_04_order_monotonicity_and_kl_limit():
    with criterion(4, "divergence monotone in the order; order->1 limit matches analytic KL"):
        g = np.random.default_rng(404)
        grid = [1.01, 1.1, 2.0, 5.0, 10.0]
        for _ in range(50):
            q = random_posterior(g, n=2, d=3)
            qp = random_posterior(g, n=2, d=3)
            vals = [rd_dp_posteriors(q, qp, RenyiOrder(lam)).value for lam in grid]
            for lo, hi in zip(vals, vals[1:]):
                assert hi >= lo - 1e-9
        for _ in range(50):
            q, qp = random_valid_pair(g, n=2, d=3, orders=[KL_ORDER.lam])
            ref = kl_dp_posteriors(q, qp)
            got = rd_dp_posteriors(q, qp, KL_ORDER).value
            assert abs(got - ref) <= 1e-2 * abs(ref), (got, ref)


def test_05_accountant():
    with criterion(5, "accountant: constant-row identity, monotonicity, hand-computed case"):
        g = np.random.default_rng(505)
        for c in (0.0, 0.17, 1.0, 3.7):
            lam, delta = 1.1, 1e-5
            got = bdp_epsilon(np.full(9, c), RenyiOrder(lam), delta)
            assert abs(got - (c + math.log(1 / delta) / (lam - 1))) <= 1e-9
        base = g.uniform(0, 2, size=8)
        e0 = bdp_epsilon(base, RenyiOrder(2.0), 1e-5)
        for _ in range(100):
            bumped = base.copy()
            bumped[g.integers(0, 8)] += g.uniform(0.01, 1.0)
            assert bdp_epsilon(bumped, RenyiOrder(2.0), 1e-5) > e0
        got = bdp_epsilon(np.array([0.0, 1.0]), RenyiOrder(2.0), 1e-2)
        assert abs(got - 5.2253) <= 1e-3


def test_06_gradient_correctness():
    with criterion(6, "analytic gradients vs central finite differences at d=8"):
        g = np.random.default_rng(606)
        params = init_params(8, 2, 2, seed=66)
        batch = [(g.normal(size=(int(g.integers(2, 7)), 8)), int(g.integers(0, 2))) for _ in range(4)]
        weights = LossWeights(lambda_d=0.3, lambda_g=0.3)
        noise = make_fixed_noise(batch, RngState(66, 1).generator())
        analytic = grad(batch, params, weights, PRIOR, noise)

        def full_value():
            with torch.no_grad():
                total, _, _, _ = loss_given_noise(batch, params, weights, PRIOR, noise)
            return float(total)

        names = list(analytic)
        checked = 0
        while checked < 200:
            name = names[int(g.integers(0, len(names)))]
            idx = int(g.integers(0, analytic[name].size))
            a = analytic[name].ravel()[idx]
            f = _central_fd(full_value, params, name, idx, h=3e-6)
            # absolute term covers FD round-off where the exact gradient
            # vanishes (key bias is softmax-cancelled)
            assert abs(a - f) <= 1e-4 * max(abs(a), abs(f)) + 5e-9, (name, idx, a, f)
            checked += 1

        # KL-only path: deterministic, tighter tolerance
        params.requires_grad_(True)
        _, _, ld, lg = loss_given_noise(batch, params, weights, PRIOR, noise)
        kl_names = ["w_alpha", "b_alpha", "w_mu", "b_mu", "w_logsigma", "b_logsigma"]
        grads = torch.autograd.grad(ld + lg, [params.tensors[n] for n in kl_names])
        params.requires_grad_(False)

        def kl_value():
            with torch.no_grad():
                _, _, ld2, lg2 = loss_given_noise(batch, params, weights, PRIOR, noise)
            return float(ld2 + lg2)

        for _ in range(60):
            k = int(g.integers(0, len(kl_names)))
            idx = int(g.integers(0, grads[k].numel()))
            a = float(grads[k].view(-1)[idx])
            f = _central_fd(kl_value, params, kl_names[k], idx, h=1e-5)
            assert abs(a - f) <= 1e-6 * max(abs(a), abs(f), 1e-3), (kl_names[k], idx, a, f)


def _central_fd(fn, params, name, idx, h):
    t = params.tensors[name]
    with torch.no_grad():
        orig = float(t.view(-1)[idx])
        t.view(-1)[idx] = orig + h
        up = fn()
        t.view(-1)[idx] = orig - h
        down = fn()
        t.view(-1)[idx] = orig
    return (up - down) / (2.0 * h)


def test_07_no_skip_isolation():
    with criterion(7, "prior-forced bottleneck output invariant to token substitution"):
        g = np.random.default_rng(707)
        params = init_params(8, 2, 2, seed=77)
        n = 5
        pi = np.zeros(n + 1)
        pi[-1] = 1.0
        Z = np.vstack([g.normal(size=(n, 8)), np.zeros((1, 8))])
        s = WeightedVectorSample(pi=pi, Z=Z)
        x1 = g.normal(size=(n, 8))
        x2 = g.normal(size=(n, 8))
        out1 = denoising_attention(x1, s, params)
        out2 = denoising_attention(x2, s, params)
        assert np.array_equal(out1, out2)


def test_08_tradeoff_trend():
    with criterion(8, "sweep trend: median rd_max non-increasing, utility kept at weak weight"):
        order = RenyiOrder(1.1)
        data = generate_synthetic(SyntheticConfig(
            n_examples=600, d=8, n_classes=2, n_min=6, n_max=6,
            class_separation=6.0, seed=88,
        ))
        train_set, val_set = data[:400], data[400:600]
        grid = [1e-3, 1e-2, 1e-1, 1.0]
        seeds = [0, 1, 2, 3, 4]
        rd_max = {lam: [] for lam in grid}
        acc = {lam: [] for lam in grid}
        for lam in grid:
            for seed in seeds:
                cfg = TrainConfig(epochs=30, batch_size=64, learning_rate=5e-2, seed=seed)
                result = train(train_set, val_set, cfg, LossWeights(lam, lam))
                assert not result.aborted
                acc[lam].append(evaluate_accuracy(val_set, result.params, PRIOR, RngState(seed, 0xE7A1)))
                qs = [project_posterior(np.asarray(r.x, float), result.params, PRIOR) for r in val_set]
                matrix = build_pairwise_matrix(
                    len(qs), lambda i, j: rd_dp_posteriors(qs[i], qs[j], order).value,
                    order, workers=2,
                )
                rd_max[lam].append(rdp_summary(matrix).rd_max)
        medians = [float(np.median(rd_max[lam])) for lam in grid]
        print(f"  sweep medians rd_max={medians} acc@1e-3={np.median(acc[1e-3]):.3f}", flush=True)
        for lo, hi in zip(medians[1:], medians[:-1]):
            assert lo <= hi, medians
        assert np.median(acc[1e-3]) >= 0.90
        assert medians[-1] <= 0.1 * medians[0], medians


def test_09_cli_determinism(tmp_path):
    with criterion(9, "sanitize and audit are bitwise reproducible under a fixed seed"):
        data = tmp_path / "d.emb"
        ckpt = tmp_path / "m.ckpt"
        assert main(["gen", "--out", str(data), "--n", "30", "--dim", "6",
                     "--classes", "2", "--sep", "6", "--seed", "9"]) == 0
        assert main(["train", "--data", str(data), "--out", str(ckpt),
                     "--epochs", "3", "--batch", "16", "--seed", "9"]) == 0
        blobs = {"nvs": [], "arch": [], "json": []}
        for run in ("a", "b"):
            nvs = tmp_path / f"{run}.nvs"
            arch = tmp_path / f"{run}.zip"
            rep = tmp_path / f"{run}.json"
            assert main(["sanitize", "--data", str(data), "--ckpt", str(ckpt),
                         "--out", str(nvs), "--emit-posteriors", str(arch),
                         "--seed", "17"]) == 0
            assert main(["audit", "--posteriors", str(arch), "--out-json", str(rep),
                         "--seed", "17", "--workers", "3"]) == 0
            blobs["nvs"].append(nvs.read_bytes())
            blobs["arch"].append(arch.read_bytes())
            blobs["json"].append(rep.read_bytes())
        for kind, (first, second) in blobs.items():
            assert first == second, f"{kind} differs between runs"
