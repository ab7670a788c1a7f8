"""Toy-scale trainable sanitizer: affine projection of an embedding
sequence to posterior parameters, denoising multi-head attention over a
sampled weighted-vector sequence with the residual skip removed, a task
head, and the KL-regularized loss with gradient training.

The residual skip around the attention block is deliberately absent:
every path from the input to the output runs through the sampled
bottleneck, so nothing unsanitized can leak past it (the queries only
steer mixing weights over sampled components).

Gradients: Gaussian draws are pathwise-reparameterized; Dirichlet draws
are pinned to fixed uniform base variates through the Gamma inverse CDF,
whose shape-gradient is the exact implicit-reparameterization derivative
(digamma-series based, see special.gammainc_da). The whole fixed-noise
loss is therefore a smooth function of the parameters, which is what
makes the finite-difference gradient oracle meaningful.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.special import gammaincinv

from .errors import FormatError, NumericalAbort
from .posterior import DPPosterior, PriorParams, WeightedVectorSample, build_posterior, sample_embedding
from .rng import RngState, _as_generator
from .special import gammainc_da

__all__ = [
    "LossWeights",
    "TrainConfig",
    "ModelParams",
    "FixedNoise",
    "init_params",
    "project_posterior",
    "denoising_attention",
    "loss",
    "loss_given_noise",
    "grad",
    "train",
    "TrainResult",
    "sanitize",
    "predict_logits",
    "evaluate_accuracy",
    "make_fixed_noise",
    "save_checkpoint",
    "load_checkpoint",
]

_DT = torch.float64
CKPT_MAGIC = b"NVDPM1"


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the two KL regularizers (weight-noise and
    vector-noise). The sweep grid default is {1e-3, 1e-2, 1e-1, 1}."""

    lambda_d: float = 0.0
    lambda_g: float = 0.0

    def __post_init__(self):
        if self.lambda_d < 0 or self.lambda_g < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 64
    epochs: int = 40
    seed: int = 0
    warmup_frac: float = 0.1
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if not (0.0 <= self.warmup_frac <= 1.0):
            raise ValueError("warmup fraction must be in [0, 1]")


_PARAM_ORDER = (
    "w_alpha", "b_alpha", "w_mu", "b_mu", "w_logsigma", "b_logsigma",
    "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o",
    "w_head", "b_head",
)


@dataclass
class ModelParams:
    """All trainable tensors (double precision) plus the architecture
    and loss-weight hyperparameters they were trained with."""

    d: int
    n_heads: int
    n_outputs: int
    tensors: dict = field(default_factory=dict)
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ValueError("head count must divide the embedding dimension")

    def clone(self) -> "ModelParams":
        return ModelParams(
            d=self.d, n_heads=self.n_heads, n_outputs=self.n_outputs,
            tensors={k: v.detach().clone() for k, v in self.tensors.items()},
            weights=self.weights,
        )

    def requires_grad_(self, flag: bool = True) -> "ModelParams":
        for v in self.tensors.values():
            v.requires_grad_(flag)
        return self

    def flat_names(self):
        return list(_PARAM_ORDER)


def init_params(d: int, n_heads: int, n_outputs: int, seed: int = 0,
                weights: LossWeights = LossWeights()) -> ModelParams:
    """Seeded initialization. The mean projection starts at identity so
    an untrained model passes the embedding through; the log-variance
    and pseudo-count projections start at zero (sigma=1, alpha=ln 2)."""
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=int(seed), spawn_key=(0x1417,))))
    s = 1.0 / math.sqrt(d)

    def t(a):
        return torch.tensor(a, dtype=_DT)

    tensors = {
        "w_alpha": t(np.zeros(d)),
        "b_alpha": t(np.zeros(1)),
        "w_mu": t(np.eye(d)),
        "b_mu": t(np.zeros(d)),
        "w_logsigma": t(np.zeros((d, d))),
        "b_logsigma": t(np.zeros(d)),
        "w_q": t(g.normal(0.0, s, (d, d))),
        "b_q": t(np.zeros(d)),
        "w_k": t(g.normal(0.0, s, (d, d))),
        "b_k": t(np.zeros(d)),
        "w_v": t(g.normal(0.0, s, (d, d))),
        "b_v": t(np.zeros(d)),
        "w_o": t(g.normal(0.0, s, (d, d))),
        "b_o": t(np.zeros(d)),
        "w_head": t(g.normal(0.0, s, (n_outputs, d))),
        "b_head": t(np.zeros(n_outputs)),
    }
    return ModelParams(d=d, n_heads=n_heads, n_outputs=n_outputs, tensors=tensors, weights=weights)


# ---------------------------------------------------------------------------
# Sampling path with exact implicit gradients
# ---------------------------------------------------------------------------

class _GammaIcdf(torch.autograd.Function):
    """y = F^{-1}(u; alpha) for Gamma(alpha, 1) with fixed uniform u.

    Backward is the implicit-function derivative
    dy/dalpha = -(dF/dalpha)(alpha, y) / pdf(y; alpha).
    Extreme-tail uniforms fall back to a centered difference of the
    inverse CDF itself, where the series loses relative accuracy.
    """

    @staticmethod
    def forward(ctx, alpha: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
        a = alpha.detach().numpy()
        uu = u.detach().numpy()
        y = gammaincinv(a, uu)
        ctx.save_for_backward(alpha, u, torch.as_tensor(y, dtype=_DT))
        return torch.as_tensor(y, dtype=_DT)

    @staticmethod
    def backward(ctx, grad_out):
        alpha, u, y = ctx.saved_tensors
        a = alpha.detach().numpy()
        uu = u.detach().numpy()
        yy = y.detach().numpy()
        dFda = gammainc_da(a, yy)
        log_pdf = (a - 1.0) * np.log(yy) - yy - _gammaln(a)
        dyda = -dFda * np.exp(-log_pdf)
        tail = (uu < 1e-12) | (uu > 1.0 - 1e-12)
        if np.any(tail):
            h = 1e-6 * np.maximum(a[tail], 1e-3)
            dyda[tail] = (gammaincinv(a[tail] + h, uu[tail]) - gammaincinv(a[tail] - h, uu[tail])) / (2 * h)
        return grad_out * torch.as_tensor(dyda, dtype=_DT), None


def _gammaln(a):
    from scipy.special import gammaln
    return gammaln(a)


@dataclass(frozen=True)
class FixedNoise:
    """Base randomness for one example: uniforms for the weight path and
    standard normals for the vector path, both over n+1 components."""

    u: np.ndarray
    eps: np.ndarray


def make_fixed_noise(batch, rng) -> list[FixedNoise]:
    """One noise draw per example. Uniforms are clipped away from {0, 1}
    so the inverse-CDF path stays differentiable."""
    g = _as_generator(rng)
    out = []
    for x, _ in batch:
        n = np.asarray(x).shape[0]
        d = np.asarray(x).shape[1]
        u = np.clip(g.random(n + 1), 1e-12, 1.0 - 1e-12)
        eps = g.standard_normal((n + 1, d))
        out.append(FixedNoise(u=u, eps=eps))
    return out


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------

def _project_t(x: torch.Tensor, p: ModelParams):
    t = p.tensors
    alpha = torch.nn.functional.softplus(x @ t["w_alpha"] + t["b_alpha"])
    mu = x @ t["w_mu"].T + t["b_mu"]
    sigma = torch.exp(0.5 * (x @ t["w_logsigma"].T + t["b_logsigma"]))
    return alpha, mu, sigma


def _with_prior_t(alpha, mu, sigma, prior: PriorParams, d: int):
    a0p, mup, sigp = prior.materialize(d)
    alpha_f = torch.cat([alpha, torch.tensor([a0p], dtype=_DT)])
    mu_f = torch.cat([mu, torch.as_tensor(mup, dtype=_DT)[None, :]], dim=0)
    sigma_f = torch.cat([sigma, torch.as_tensor(sigp, dtype=_DT)[None, :]], dim=0)
    return alpha_f, mu_f, sigma_f


def _attend_t(x: torch.Tensor, log_pi: torch.Tensor, Z: torch.Tensor, p: ModelParams) -> torch.Tensor:
    t = p.tensors
    n, d = x.shape
    m = Z.shape[0]
    h = p.n_heads
    dh = d // h
    q = (x @ t["w_q"].T + t["b_q"]).view(n, h, dh).transpose(0, 1)
    k = (Z @ t["w_k"].T + t["b_k"]).view(m, h, dh).transpose(0, 1)
    v = (Z @ t["w_v"].T + t["b_v"]).view(m, h, dh).transpose(0, 1)
    logits = q @ k.transpose(1, 2) / math.sqrt(dh) + log_pi[None, None, :]
    attn = torch.softmax(logits, dim=-1)
    out = (attn @ v).transpose(0, 1).reshape(n, d)
    return out @ t["w_o"].T + t["b_o"]


def _forward_group_t(xs: torch.Tensor, p: ModelParams, prior: PriorParams,
                     u: torch.Tensor, eps: torch.Tensor):
    """Sampled forward pass for a batch of equal-length examples.

    xs: (B, n, d); u: (B, n+1); eps: (B, n+1, d). Returns task logits
    (B, c) and the full-component posterior tensors (weights appended
    with the prior slot)."""
    t = p.tensors
    B, n, d = xs.shape
    h = p.n_heads
    dh = d // h
    alpha = torch.nn.functional.softplus(xs @ t["w_alpha"] + t["b_alpha"])  # (B, n)
    mu = xs @ t["w_mu"].T + t["b_mu"]
    sigma = torch.exp(0.5 * (xs @ t["w_logsigma"].T + t["b_logsigma"]))
    a0p, mup, sigp = prior.materialize(d)
    alpha_f = torch.cat([alpha, torch.full((B, 1), a0p, dtype=_DT)], dim=1)
    mu_f = torch.cat([mu, torch.as_tensor(mup, dtype=_DT).expand(B, 1, d)], dim=1)
    sigma_f = torch.cat([sigma, torch.as_tensor(sigp, dtype=_DT).expand(B, 1, d)], dim=1)
    y = _GammaIcdf.apply(alpha_f, u)
    pi = y / y.sum(dim=1, keepdim=True)
    Z = mu_f + sigma_f * eps  # (B, m, d)
    m = n + 1
    q = (xs @ t["w_q"].T + t["b_q"]).view(B, n, h, dh).transpose(1, 2)
    k = (Z @ t["w_k"].T + t["b_k"]).view(B, m, h, dh).transpose(1, 2)
    v = (Z @ t["w_v"].T + t["b_v"]).view(B, m, h, dh).transpose(1, 2)
    logits = q @ k.transpose(-1, -2) / math.sqrt(dh) + torch.log(pi)[:, None, None, :]
    attn = torch.softmax(logits, dim=-1)
    out = (attn @ v).transpose(1, 2).reshape(B, n, d) @ t["w_o"].T + t["b_o"]
    pooled = out.mean(dim=1)
    task_logits = pooled @ t["w_head"].T + t["b_head"]
    return task_logits, (alpha_f, mu_f, sigma_f)


def _forward_logits_t(x: torch.Tensor, p: ModelParams, prior: PriorParams, noise: FixedNoise):
    """Sampled forward pass for one example; returns task logits and the
    full-component posterior parameter tensors."""
    logits, (alpha_f, mu_f, sigma_f) = _forward_group_t(
        x[None, :, :], p, prior,
        torch.as_tensor(noise.u, dtype=_DT)[None, :],
        torch.as_tensor(noise.eps, dtype=_DT)[None, :, :],
    )
    return logits[0], (alpha_f[0], mu_f[0], sigma_f[0])


def _kl_weights_t(alpha_f: torch.Tensor, prior: PriorParams) -> torch.Tensor:
    """Per-example KL of the weight distribution against the prior's
    symmetric spread over the same number of components. alpha_f is
    (B, m); returns (B,)."""
    m = alpha_f.shape[1]
    b = float(prior.alpha0) / m
    a0 = alpha_f.sum(dim=1)
    const = -math.lgamma(float(prior.alpha0)) + m * math.lgamma(b)
    return (
        torch.lgamma(a0) - torch.lgamma(alpha_f).sum(dim=1) + const
        + ((alpha_f - b) * (torch.digamma(alpha_f) - torch.digamma(a0)[:, None])).sum(dim=1)
    )


def _kl_vectors_t(mu_f: torch.Tensor, sigma_f: torch.Tensor, prior: PriorParams) -> torch.Tensor:
    """Per-example sum over components of the Gaussian KL against the
    prior base distribution; (B, m, d) inputs, (B,) output. One vector
    is shared per component regardless of its weight, so the components
    are not weight-averaged; this matches the order->1 limit of the
    audited divergence's Gaussian block (the prior component contributes
    exactly zero)."""
    _, mup, sigp = prior.materialize(mu_f.shape[2])
    mup_t = torch.as_tensor(mup, dtype=_DT)
    sigp_t = torch.as_tensor(sigp, dtype=_DT)
    return (
        torch.log(sigp_t / sigma_f)
        + (sigma_f**2 + (mu_f - mup_t) ** 2) / (2.0 * sigp_t**2)
        - 0.5
    ).sum(dim=(1, 2))


def _normalize_batch(batch):
    out = []
    for item in batch:
        if hasattr(item, "x") and hasattr(item, "label"):
            out.append((np.asarray(item.x, dtype=float), item.label))
        else:
            x, label = item
            out.append((np.asarray(x, dtype=float), label))
    if not out:
        raise ValueError("empty batch")
    return out


def loss_given_noise(batch, params: ModelParams, weights: LossWeights, prior: PriorParams,
                     noise: list[FixedNoise]):
    """Deterministic loss under pinned base randomness. Returns torch
    scalars (L, L_T, L_D, L_G), each a batch mean. Examples are grouped
    by sequence length so each group runs as one batched forward."""
    batch = _normalize_batch(batch)
    if len(noise) != len(batch):
        raise ValueError("need one noise draw per example")
    by_len: dict[int, list[int]] = {}
    for k, (x, _) in enumerate(batch):
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input embedding")
        by_len.setdefault(x.shape[0], []).append(k)
    lt_sum = torch.zeros((), dtype=_DT)
    ld_sum = torch.zeros((), dtype=_DT)
    lg_sum = torch.zeros((), dtype=_DT)
    for n, idx in by_len.items():
        xs = torch.as_tensor(np.stack([batch[k][0] for k in idx]), dtype=_DT)
        u = torch.as_tensor(np.stack([noise[k].u for k in idx]), dtype=_DT)
        eps = torch.as_tensor(np.stack([noise[k].eps for k in idx]), dtype=_DT)
        logits, (alpha_f, mu_f, sigma_f) = _forward_group_t(xs, params, prior, u, eps)
        labels = [batch[k][1] for k in idx]
        if all(isinstance(lbl, (int, np.integer)) and not isinstance(lbl, bool) for lbl in labels):
            targets = torch.tensor([int(lbl) for lbl in labels])
            lt_sum = lt_sum + torch.nn.functional.cross_entropy(logits, targets, reduction="sum")
        else:
            if params.n_outputs != 1:
                raise ValueError("regression targets need a single-output head")
            targets = torch.tensor([float(lbl) for lbl in labels], dtype=_DT)
            lt_sum = lt_sum + ((logits[:, 0] - targets) ** 2).sum()
        ld_sum = ld_sum + _kl_weights_t(alpha_f, prior).sum()
        lg_sum = lg_sum + _kl_vectors_t(mu_f, sigma_f, prior).sum()
    count = len(batch)
    l_t = lt_sum / count
    l_d = ld_sum / count
    l_g = lg_sum / count
    total = l_t + weights.lambda_d * l_d + weights.lambda_g * l_g
    return total, l_t, l_d, l_g


def loss(batch, params: ModelParams, weights: LossWeights, prior: PriorParams, rng):
    """Single-draw stochastic loss. Returns (L, (L_T, L_D, L_G)) floats."""
    batch = _normalize_batch(batch)
    noise = make_fixed_noise(batch, rng)
    with torch.no_grad():
        total, l_t, l_d, l_g = loss_given_noise(batch, params, weights, prior, noise)
    return float(total), (float(l_t), float(l_d), float(l_g))


def grad(batch, params: ModelParams, weights: LossWeights, prior: PriorParams,
         fixed_noise: list[FixedNoise]) -> dict[str, np.ndarray]:
    """Analytic gradient of the fixed-noise loss for every parameter."""
    params.requires_grad_(True)
    try:
        total, _, _, _ = loss_given_noise(batch, params, weights, prior, fixed_noise)
        names = params.flat_names()
        grads = torch.autograd.grad(total, [params.tensors[n] for n in names], allow_unused=True)
    finally:
        params.requires_grad_(False)
    out = {}
    for name, gv in zip(names, grads):
        arr = np.zeros(params.tensors[name].shape) if gv is None else gv.detach().numpy().copy()
        if not np.all(np.isfinite(arr)):
            raise NumericalAbort(f"non-finite gradient in parameter {name!r}")
        out[name] = arr
    return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    aborted: bool = False


def _accuracy(examples, params: ModelParams, prior: PriorParams, rng) -> float:
    """Sampled-forward accuracy (classification) or negative MSE."""
    batch = _normalize_batch(examples)
    noise = make_fixed_noise(batch, rng)
    classification = isinstance(batch[0][1], (int, np.integer))
    by_len: dict[int, list[int]] = {}
    for k, (x, _) in enumerate(batch):
        by_len.setdefault(x.shape[0], []).append(k)
    score = 0.0
    with torch.no_grad():
        for n, idx in by_len.items():
            xs = torch.as_tensor(np.stack([batch[k][0] for k in idx]), dtype=_DT)
            u = torch.as_tensor(np.stack([noise[k].u for k in idx]), dtype=_DT)
            eps = torch.as_tensor(np.stack([noise[k].eps for k in idx]), dtype=_DT)
            logits, _ = _forward_group_t(xs, params, prior, u, eps)
            labels = [batch[k][1] for k in idx]
            if classification:
                pred = torch.argmax(logits, dim=1).numpy()
                score += float(np.sum(pred == np.array([int(l) for l in labels])))
            else:
                score -= float(((logits[:, 0] - torch.tensor([float(l) for l in labels], dtype=_DT)) ** 2).sum())
    return score / len(batch)


def train(train_examples, val_examples, config: TrainConfig, weights: LossWeights,
          prior: PriorParams = PriorParams(), *, n_heads: int = 2,
          n_outputs: int | None = None, init: ModelParams | None = None) -> TrainResult:
    """Plain gradient descent with norm clipping and linear warmup.
    Keeps the best-validation parameters; a non-finite loss aborts with
    the last good state."""
    train_batch = _normalize_batch(train_examples)
    val_batch = _normalize_batch(val_examples) if val_examples else []
    d = train_batch[0][0].shape[1]
    if n_outputs is None:
        labels = {int(lbl) for _, lbl in train_batch if isinstance(lbl, (int, np.integer))}
        n_outputs = max(labels) + 1 if labels else 1
    params = init.clone() if init is not None else init_params(
        d, n_heads, n_outputs, seed=config.seed, weights=weights
    )
    if config.epochs == 0:
        return TrainResult(params=params, log=[], aborted=False)

    base = RngState(config.seed, stream=0x7247)
    order_g = base.substream(1).generator()
    noise_g = base.substream(2).generator()
    steps_per_epoch = max(1, math.ceil(len(train_batch) / config.batch_size))
    total_steps = steps_per_epoch * config.epochs
    warm = max(1, int(round(config.warmup_frac * total_steps)))

    best = params.clone()
    best_score = -math.inf
    log: list[dict] = []
    step = 0
    aborted = False
    for epoch in range(config.epochs):
        idx = np.arange(len(train_batch))
        order_g.shuffle(idx)
        sums = np.zeros(4)
        for s0 in range(0, len(idx), config.batch_size):
            sel = idx[s0 : s0 + config.batch_size]
            batch = [train_batch[i] for i in sel]
            noise = make_fixed_noise(batch, noise_g)
            params.requires_grad_(True)
            total, l_t, l_d, l_g = loss_given_noise(batch, params, weights, prior, noise)
            if not torch.isfinite(total):
                params.requires_grad_(False)
                aborted = True
                break
            tensors = [params.tensors[n] for n in params.flat_names()]
            grads = torch.autograd.grad(total, tensors, allow_unused=True)
            params.requires_grad_(False)
            gnorm = math.sqrt(sum(float((g**2).sum()) for g in grads if g is not None))
            scale = min(1.0, config.clip_norm / gnorm) if gnorm > 0 else 1.0
            step += 1
            lr = config.learning_rate * (min(1.0, step / warm))
            with torch.no_grad():
                for t, g in zip(tensors, grads):
                    if g is not None:
                        t -= lr * scale * g
            sums += np.array([t.detach().item() for t in (total, l_t, l_d, l_g)])
        if aborted:
            break
        k = steps_per_epoch
        train_acc = _accuracy(train_batch, params, prior, RngState(config.seed, stream=0xACC0 + epoch))
        val_acc = (
            _accuracy(val_batch, params, prior, RngState(config.seed, stream=0xACC1 + epoch))
            if val_batch else float("nan")
        )
        log.append({
            "epoch": epoch,
            "L": float(sums[0] / k), "L_T": float(sums[1] / k),
            "L_D": float(sums[2] / k), "L_G": float(sums[3] / k),
            "train_acc": train_acc, "val_acc": val_acc,
        })
        score = val_acc if val_batch else train_acc
        if score >= best_score and math.isfinite(score):
            best_score = score
            best = params.clone()
    return TrainResult(params=best, log=log, aborted=aborted)


# ---------------------------------------------------------------------------
# Inference-side operations
# ---------------------------------------------------------------------------

def project_posterior(x, params: ModelParams, prior: PriorParams = PriorParams()) -> DPPosterior:
    """Deterministic map from an embedding sequence to its posterior."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("x must be a (n>=1, d) matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input embedding")
    if x.shape[1] != params.d:
        raise FormatError(f"input dimension {x.shape[1]} does not match model d={params.d}")
    with torch.no_grad():
        alpha, mu, sigma = _project_t(torch.as_tensor(x, dtype=_DT), params)
    return build_posterior(alpha.numpy(), mu.numpy(), sigma.numpy(), prior)


def sanitize(x, params: ModelParams, prior: PriorParams, rng) -> WeightedVectorSample:
    """Project and sample: the returned weighted-vector sequence is the
    only artifact released for x."""
    q = project_posterior(x, params, prior)
    return sample_embedding(q, rng)


def denoising_attention(query_src, s: WeightedVectorSample, params: ModelParams) -> np.ndarray:
    """Attention over a sampled weighted-vector sequence. Zero-weight
    components are excluded from the softmax support."""
    x = np.asarray(query_src, dtype=float)
    pi = np.asarray(s.pi, dtype=float)
    if np.all(pi == 0.0):
        raise ValueError("sample carries no weight")
    if s.Z.shape[1] != params.d or x.shape[1] != params.d:
        raise ValueError("dimension mismatch between queries, sample and model")
    with np.errstate(divide="ignore"):
        log_pi = np.where(pi > 0.0, np.log(np.where(pi > 0.0, pi, 1.0)), -np.inf)
    with torch.no_grad():
        out = _attend_t(
            torch.as_tensor(x, dtype=_DT),
            torch.as_tensor(log_pi, dtype=_DT),
            torch.as_tensor(np.asarray(s.Z, dtype=float), dtype=_DT),
            params,
        )
    return out.numpy()


def predict_logits(query_src, s: WeightedVectorSample, params: ModelParams) -> np.ndarray:
    """Task-head logits for a (possibly sanitized) sample."""
    hidden = denoising_attention(query_src, s, params)
    pooled = hidden.mean(axis=0)
    t = params.tensors
    return pooled @ t["w_head"].numpy().T + t["b_head"].numpy()


def evaluate_accuracy(records, params: ModelParams, prior: PriorParams, rng) -> float:
    """Accuracy of the trained head on freshly sanitized samples."""
    base = rng if isinstance(rng, RngState) else RngState(0)
    correct = 0
    records = list(records)
    for k, rec in enumerate(records):
        x = np.asarray(rec.x, dtype=float)
        s = sanitize(x, params, prior, base.substream(k))
        pred = int(np.argmax(predict_logits(x, s, params)))
        correct += int(pred == int(rec.label))
    return correct / len(records)


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams) -> None:
    """Magic, little-endian u32 (d, h, c), float64 (lambda_d, lambda_g),
    then every parameter tensor flattened row-major in declared order."""
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<III", params.d, params.n_heads, params.n_outputs))
        f.write(struct.pack("<dd", params.weights.lambda_d, params.weights.lambda_g))
        for name in params.flat_names():
            f.write(params.tensors[name].detach().numpy().astype("<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    data = path.read_bytes()
    if data[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic, not a model checkpoint")
    off = len(CKPT_MAGIC)
    d, h, c = struct.unpack_from("<III", data, off)
    off += 12
    lam_d, lam_g = struct.unpack_from("<dd", data, off)
    off += 16
    ref = init_params(d, h, c)
    tensors = {}
    for name in ref.flat_names():
        shape = tuple(ref.tensors[name].shape)
        count = int(np.prod(shape))
        need = off + 8 * count
        if len(data) < need:
            raise FormatError(f"{path}: truncated at byte {len(data)} while reading {name!r}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        tensors[name] = torch.tensor(arr, dtype=_DT)
        off = need
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes after parameters")
    return ModelParams(d=d, n_heads=h, n_outputs=c, tensors=tensors,
                       weights=LossWeights(lambda_d=lam_d, lambda_g=lam_g))
