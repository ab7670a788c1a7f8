"""Aggregation of pairwise Renyi divergences into the two privacy
measures that get reported: worst-case RDP (max over ordered pairs) and
a Bayesian-DP style (epsilon_mu, delta_mu) guarantee obtained from the
exponential moment of the divergences over the empirical data
distribution.

Calibration note: the epsilon_mu computed here is the standard
exponential-moment accountant

    eps(lam) = log( E_{x'}[ exp((lam-1) D_lam(Q_x || Q_x')) ] ) / (lam-1)
               + log(1/delta_mu) / (lam-1)

maximized over the protected example x (worst case) and optionally
minimized over a lambda grid. Published numbers from other accountant
variants are not directly comparable; treat relative comparisons, not
absolute values, as meaningful.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .renyi import RenyiOrder

__all__ = [
    "PairwiseRDMatrix",
    "PrivacyReport",
    "RdpSummary",
    "rdp_summary",
    "bdp_epsilon",
    "bdp_optimize",
    "build_pairwise_matrix",
    "assemble_report",
    "DEFAULT_LAMBDA_GRID",
    "REPORT_CSV_HEADER",
]

DEFAULT_LAMBDA_GRID = (1.1, 1.5, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)

REPORT_CSV_HEADER = (
    "dataset,lambda,delta_mu,rd_max,rd_avg,epsilon_mu,infinite_pairs,epsilon_alpha_floor"
)


@dataclass
class PairwiseRDMatrix:
    """Ordered-pair divergences: values[i, j] = D_lam(Q_i || Q_j).

    NaN marks pairs that were skipped under a --max-pairs cap; +inf is a
    legitimate divergence value. The diagonal is identically zero.
    """

    values: np.ndarray
    lam: RenyiOrder

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError("pairwise matrix must be square")

    @property
    def m(self) -> int:
        return self.values.shape[0]


class RdpSummary(NamedTuple):
    rd_max: float
    rd_avg: float
    infinite_pair_count: int


def rdp_summary(matrix: PairwiseRDMatrix) -> RdpSummary:
    """Worst-case and average divergence over evaluated off-diagonal
    pairs. +inf entries drive rd_max to +inf; rd_avg averages the finite
    entries with the infinite ones counted separately."""
    v = matrix.values
    if matrix.m < 2:
        raise ValueError("need at least 2 examples for a pairwise summary")
    off = ~np.eye(matrix.m, dtype=bool)
    entries = v[off]
    entries = entries[~np.isnan(entries)]
    if entries.size == 0:
        raise ValueError("no evaluated off-diagonal pairs")
    inf_count = int(np.sum(np.isinf(entries)))
    finite = entries[np.isfinite(entries)]
    rd_max = float(np.max(entries))
    rd_avg = float(np.mean(finite)) if finite.size else math.inf
    return RdpSummary(rd_max=rd_max, rd_avg=rd_avg, infinite_pair_count=inf_count)


def bdp_epsilon(rd_row, order: RenyiOrder, delta_mu: float) -> float:
    """epsilon_mu for one protected example given its divergences
    against draws from the data distribution.

    Computed through log-sum-exp; any +inf divergence in the row makes
    the guarantee vacuous (+inf). NaN entries (skipped pairs) are
    excluded from the expectation.
    """
    row = np.asarray(rd_row, dtype=float)
    row = row[~np.isnan(row)]
    if row.size == 0:
        raise ValueError("empty divergence row")
    if not (0.0 < delta_mu < 1.0):
        raise ValueError("delta_mu must lie in (0, 1)")
    lam = order.lam
    if np.any(np.isinf(row)):
        return math.inf
    t = (lam - 1.0) * row
    m = float(np.max(t))
    log_mean = m + math.log(float(np.mean(np.exp(t - m))))
    return log_mean / (lam - 1.0) + math.log(1.0 / delta_mu) / (lam - 1.0)


def _worst_case_epsilon(matrix: PairwiseRDMatrix, delta_mu: float) -> float:
    return max(bdp_epsilon(matrix.values[i], matrix.lam, delta_mu) for i in range(matrix.m))


@dataclass
class PrivacyReport:
    """Everything an audit reports for one mechanism and dataset."""

    lam: float
    delta_mu: float
    rd_max: float
    rd_avg: float
    epsilon_mu: float
    n_examples: int
    epsilon_alpha_floor: float
    infinite_pair_count: int
    lambda_grid: list[float] | None = None
    mechanism: str = "nvdp"
    pairs_evaluated: int | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "mechanism": self.mechanism,
            "lambda": self.lam,
            "delta_mu": self.delta_mu,
            "rd_max": _jsonable(self.rd_max),
            "rd_avg": _jsonable(self.rd_avg),
            "epsilon_mu": _jsonable(self.epsilon_mu),
            "n_examples": self.n_examples,
            "epsilon_alpha_floor": self.epsilon_alpha_floor,
            "infinite_pair_count": self.infinite_pair_count,
        }
        if self.lambda_grid is not None:
            doc["lambda_grid"] = list(self.lambda_grid)
        if self.pairs_evaluated is not None:
            doc["pairs_evaluated"] = self.pairs_evaluated
        doc.update(self.extra)
        return json.dumps(doc, sort_keys=True)

    def to_csv_row(self, dataset: str) -> str:
        cells = [
            dataset,
            repr(self.lam),
            repr(self.delta_mu),
            _csv_float(self.rd_max),
            _csv_float(self.rd_avg),
            _csv_float(self.epsilon_mu),
            str(self.infinite_pair_count),
            repr(self.epsilon_alpha_floor),
        ]
        return ",".join(cells)


def _jsonable(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _csv_float(x: float) -> str:
    return "inf" if math.isinf(x) and x > 0 else repr(float(x))


def assemble_report(matrix: PairwiseRDMatrix, delta_mu: float, *,
                    epsilon_alpha_floor: float = 0.0,
                    mechanism: str = "nvdp",
                    lambda_grid: Sequence[float] | None = None,
                    pairs_evaluated: int | None = None) -> PrivacyReport:
    summary = rdp_summary(matrix)
    return PrivacyReport(
        lam=matrix.lam.lam,
        delta_mu=delta_mu,
        rd_max=summary.rd_max,
        rd_avg=summary.rd_avg,
        epsilon_mu=_worst_case_epsilon(matrix, delta_mu),
        n_examples=matrix.m,
        epsilon_alpha_floor=epsilon_alpha_floor,
        infinite_pair_count=summary.infinite_pair_count,
        lambda_grid=list(lambda_grid) if lambda_grid is not None else None,
        mechanism=mechanism,
        pairs_evaluated=pairs_evaluated,
    )


def bdp_optimize(matrix_fn: Callable[[RenyiOrder], PairwiseRDMatrix],
                 lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
                 delta_mu: float = 1e-5, *,
                 epsilon_alpha_floor: float = 0.0,
                 mechanism: str = "nvdp") -> PrivacyReport:
    """Scan the order grid and report at the order giving the tightest
    worst-case epsilon_mu. The grid itself is recorded in the report."""
    grid = [float(g) for g in lambda_grid]
    if not grid:
        raise ValueError("lambda grid must be non-empty")
    if any(g <= 1.0 for g in grid):
        raise ValueError("every grid order must exceed 1")
    best = None
    for lam in grid:
        order = RenyiOrder(lam)
        matrix = matrix_fn(order)
        eps = _worst_case_epsilon(matrix, delta_mu)
        if best is None or eps < best[0]:
            best = (eps, matrix)
    _, matrix = best
    return assemble_report(
        matrix, delta_mu, epsilon_alpha_floor=epsilon_alpha_floor,
        mechanism=mechanism, lambda_grid=grid,
    )


def build_pairwise_matrix(m: int, rd_fn: Callable[[int, int], float], order: RenyiOrder, *,
                          max_pairs: int | None = None,
                          subsample_seed: int = 0,
                          workers: int = 1) -> PairwiseRDMatrix:
    """Evaluate rd_fn over ordered pairs (i, j), i != j.

    With max_pairs set and fewer than m(m-1) allowed, a seeded uniform
    subset of ordered pairs is evaluated and the rest stay NaN. Work is
    sharded over a thread pool; every result lands in its own cell so
    scheduling cannot change the outcome.
    """
    if m < 2:
        raise ValueError("need at least 2 examples")
    values = np.zeros((m, m))
    pairs = [(i, j) for i in range(m) for j in range(m) if i != j]
    if max_pairs is not None and max_pairs < len(pairs):
        values[:] = np.nan
        np.fill_diagonal(values, 0.0)
        idx = np.random.Generator(np.random.Philox(np.random.SeedSequence(subsample_seed)))
        chosen = idx.choice(len(pairs), size=max_pairs, replace=False)
        pairs = [pairs[k] for k in sorted(chosen)]

    def run(chunk):
        for i, j in chunk:
            values[i, j] = rd_fn(i, j)

    if workers <= 1:
        run(pairs)
    else:
        shards = [pairs[k::workers] for k in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, shards))
    return PairwiseRDMatrix(values=values, lam=order)
