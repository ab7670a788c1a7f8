"""Command-line pipeline: synthetic data generation, training,
sanitization, privacy auditing and regularization sweeps.

Exit codes are a stable contract: 0 success, 2 usage error, 3 numerical
abort, 4 format error. Every command is deterministic under --seed
(NVDP_SEED and a key=value config file are lower-priority sources).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .accountant import (
    DEFAULT_LAMBDA_GRID,
    REPORT_CSV_HEADER,
    assemble_report,
    bdp_optimize,
    build_pairwise_matrix,
)
from .dataio import (
    SanitizedRecord,
    SyntheticConfig,
    generate_synthetic,
    read_embeddings,
    read_posterior_archive,
    write_embeddings,
    write_posterior_archive,
    write_sanitized,
)
from .errors import FormatError, NumericalAbort
from .network import (
    LossWeights,
    TrainConfig,
    evaluate_accuracy,
    load_checkpoint,
    project_posterior,
    sanitize,
    save_checkpoint,
    train,
)
from .posterior import PriorParams, pad_to_length
from .renyi import RenyiOrder, rd_dp_posteriors, rd_gaussian_diag, rd_gaussian_isotropic, rd_gaussian_learned
from .rng import RngState

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_FORMAT = 4

MECHANISMS = ("nvdp", "vtdp", "vib-fixed", "vib-learned")


def _read_config(path) -> dict:
    cfg = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _resolve(args, name, cast, default):
    """Flag > config file > default. Flags parse with default=None so an
    unset flag is distinguishable from an explicit value."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    cfg = getattr(args, "_config", {})
    if name in cfg:
        return cast(cfg[name])
    return default


def _resolve_seed(args) -> int:
    value = _resolve(args, "seed", int, None)
    if value is not None:
        return int(value)
    env = os.environ.get("NVDP_SEED")
    return int(env) if env else 0


def _add_common(p):
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--seed", type=int, help="random seed (fallback: NVDP_SEED, then 0)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvdp",
        description="Privacy-preserving sharing of multivector embeddings",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic embedding dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, help="number of examples (default 200)")
    g.add_argument("--dim", type=int, help="embedding dimension (default 8)")
    g.add_argument("--classes", type=int, help="number of classes (default 2)")
    g.add_argument("--sep", type=float, help="distance between class means (default 6)")
    g.add_argument("--n-min", type=int, help="minimum sequence length (default 2)")
    g.add_argument("--n-max", type=int, help="maximum sequence length (default 8)")
    _add_common(g)

    t = sub.add_parser("train", help="train one regularization configuration")
    t.add_argument("--data", required=True, help="input .emb file")
    t.add_argument("--out", required=True, help="output checkpoint path")
    t.add_argument("--log", help="per-epoch CSV log path")
    t.add_argument("--lambda-d", type=float, help="weight-noise regularizer weight (default 0)")
    t.add_argument("--lambda-g", type=float, help="vector-noise regularizer weight (default 0)")
    t.add_argument("--epochs", type=int, help="training epochs (default 40)")
    t.add_argument("--lr", type=float, help="learning rate (default 1e-2)")
    t.add_argument("--batch", type=int, help="batch size (default 64)")
    t.add_argument("--heads", type=int, help="attention heads (default 2)")
    t.add_argument("--warmup", type=float, help="warmup fraction of steps (default 0.1)")
    t.add_argument("--val-frac", type=float, help="validation split fraction (default 0.25)")
    _add_common(t)

    s = sub.add_parser("sanitize", help="release noisy samples for every record")
    s.add_argument("--data", required=True, help="input .emb file")
    s.add_argument("--ckpt", required=True, help="trained checkpoint")
    s.add_argument("--out", required=True, help="output .nvs file")
    s.add_argument("--emit-posteriors", help="also write a posterior archive (zip of .dpq)")
    _add_common(s)

    a = sub.add_parser("audit", help="pairwise divergence audit and accountant report")
    a.add_argument("--posteriors", help="posterior archive from sanitize --emit-posteriors")
    a.add_argument("--data", help=".emb file (to derive posteriors or pooled means)")
    a.add_argument("--ckpt", help="checkpoint (with --data, derives posteriors)")
    a.add_argument("--mechanism", choices=MECHANISMS, default="nvdp")
    a.add_argument("--lambda", dest="lam", type=float, help="divergence order (default 1.1)")
    a.add_argument("--delta", type=float, help="accountant failure probability (default 1e-5)")
    a.add_argument("--optimize-lambda", action="store_true",
                   help="scan the order grid for the tightest epsilon")
    a.add_argument("--pad-floor", type=float,
                   help="pseudo-count floor for length padding (default 1e-4)")
    a.add_argument("--sigma", type=float, help="vib-fixed noise scale (default 0.55)")
    a.add_argument("--sigma-vec", help="vib-learned per-dimension sigmas, text file")
    a.add_argument("--max-pairs", type=int, help="cap on evaluated ordered pairs")
    a.add_argument("--workers", type=int, help="audit worker threads (default 1)")
    a.add_argument("--out-json", help="write the report as JSON")
    a.add_argument("--out-csv", help="append the report as a CSV row")
    a.add_argument("--dataset-name", help="dataset label for the CSV row")
    _add_common(a)

    w = sub.add_parser("sweep", help="regularization sweep: train/sanitize/audit per cell")
    w.add_argument("--data", required=True, help="input .emb file")
    w.add_argument("--out-csv", required=True, help="per-cell results CSV")
    w.add_argument("--plot-data", help="(epsilon_mu, accuracy) pairs CSV")
    w.add_argument("--lambdas", help="comma list for tied lambda_d=lambda_g grid "
                                     "(default 1e-3,1e-2,1e-1,1)")
    w.add_argument("--lambda-g-grid", help="comma list; crossed with --lambdas when given")
    w.add_argument("--seeds", help="comma list of training seeds (default 0,1,2,3,4)")
    w.add_argument("--epochs", type=int, help="training epochs per cell (default 40)")
    w.add_argument("--lr", type=float)
    w.add_argument("--batch", type=int)
    w.add_argument("--heads", type=int)
    w.add_argument("--warmup", type=float)
    w.add_argument("--val-frac", type=float)
    w.add_argument("--lambda", dest="lam", type=float, help="audit order (default 1.1)")
    w.add_argument("--delta", type=float)
    w.add_argument("--pad-floor", type=float)
    w.add_argument("--workers", type=int)
    _add_common(w)
    return parser


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    cfg = SyntheticConfig(
        n_examples=_resolve(args, "n", int, 200),
        d=_resolve(args, "dim", int, 8),
        n_classes=_resolve(args, "classes", int, 2),
        n_min=_resolve(args, "n_min", int, 2),
        n_max=_resolve(args, "n_max", int, 8),
        class_separation=_resolve(args, "sep", float, 6.0),
        seed=_resolve_seed(args),
    )
    count = write_embeddings(args.out, generate_synthetic(cfg))
    print(f"wrote {count} records (d={cfg.d}, classes={cfg.n_classes}, "
          f"sep={cfg.class_separation}) to {args.out}")
    return EXIT_OK


def _split(records, val_frac, seed):
    idx = np.arange(len(records))
    RngState(seed, stream=0x5917).generator().shuffle(idx)
    n_val = max(1, int(round(val_frac * len(records))))
    val = [records[i] for i in idx[:n_val]]
    tr = [records[i] for i in idx[n_val:]]
    return tr, val


def _train_config(args, seed) -> TrainConfig:
    return TrainConfig(
        learning_rate=_resolve(args, "lr", float, 1e-2),
        batch_size=_resolve(args, "batch", int, 64),
        epochs=_resolve(args, "epochs", int, 40),
        seed=seed,
        warmup_frac=_resolve(args, "warmup", float, 0.1),
    )


def _write_train_log(path, log):
    lines = ["epoch,L,L_T,L_D,L_G,train_acc,val_acc"]
    for row in log:
        lines.append(
            f"{row['epoch']},{row['L']!r},{row['L_T']!r},{row['L_D']!r},"
            f"{row['L_G']!r},{row['train_acc']!r},{row['val_acc']!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _cmd_train(args) -> int:
    records = list(read_embeddings(args.data))
    if len(records) < 2:
        raise ValueError("training needs at least 2 records")
    seed = _resolve_seed(args)
    tr, val = _split(records, _resolve(args, "val_frac", float, 0.25), seed)
    weights = LossWeights(
        lambda_d=_resolve(args, "lambda_d", float, 0.0),
        lambda_g=_resolve(args, "lambda_g", float, 0.0),
    )
    result = train(
        tr, val, _train_config(args, seed), weights,
        n_heads=_resolve(args, "heads", int, 2),
    )
    save_checkpoint(args.out, result.params)
    if args.log:
        _write_train_log(args.log, result.log)
    if result.aborted:
        print("training aborted on non-finite loss; wrote last good checkpoint", file=sys.stderr)
        return EXIT_NUMERIC
    last = result.log[-1] if result.log else {"val_acc": float("nan")}
    print(f"trained {len(tr)} examples, best checkpoint at {args.out} "
          f"(final val_acc={last['val_acc']:.3f})" if result.log else
          f"wrote initial parameters to {args.out}")
    return EXIT_OK


def _cmd_sanitize(args) -> int:
    params = load_checkpoint(args.ckpt)
    prior = PriorParams()
    seed = _resolve_seed(args)
    records = list(read_embeddings(args.data))
    sanitized = []
    posteriors = []
    for k, rec in enumerate(records):
        x = np.asarray(rec.x, dtype=float)
        sanitized.append(SanitizedRecord(id=rec.id, sample=sanitize(x, params, prior, RngState(seed, stream=k))))
        if args.emit_posteriors:
            posteriors.append(project_posterior(x, params, prior))
    write_sanitized(args.out, sanitized)
    if args.emit_posteriors:
        write_posterior_archive(args.emit_posteriors, [r.id for r in records], posteriors)
        print(f"wrote posterior archive to {args.emit_posteriors}")
    print(f"sanitized {len(records)} records to {args.out}")
    return EXIT_OK


def _load_audit_posteriors(args, prior):
    if args.posteriors:
        _, posteriors = read_posterior_archive(args.posteriors)
        return posteriors
    if args.ckpt and args.data:
        params = load_checkpoint(args.ckpt)
        return [
            project_posterior(np.asarray(r.x, dtype=float), params, prior)
            for r in read_embeddings(args.data)
        ]
    raise ValueError("audit needs --posteriors, or --ckpt with --data")


def _pooled_means(args):
    if not args.data:
        raise ValueError("this mechanism audits pooled embeddings; pass --data")
    return [np.asarray(r.x, dtype=float).mean(axis=0) for r in read_embeddings(args.data)]


def _pad_all(posteriors, floor):
    n_max = max(q.n for q in posteriors)
    return [pad_to_length(q, n_max, epsilon_alpha=floor) for q in posteriors]


def _vtdp_rd(qi, qj, order):
    """Per-token Gaussian mechanism: the weight machinery is dropped and
    only the aligned token Gaussians are compared."""
    return rd_gaussian_diag(
        qi.mu[:-1].ravel(), qi.sigma[:-1].ravel(),
        qj.mu[:-1].ravel(), qj.sigma[:-1].ravel(), order,
    ).value


def _matrix_fn_factory(args, prior, seed):
    mech = args.mechanism
    floor = _resolve(args, "pad_floor", float, 1e-4)
    workers = _resolve(args, "workers", int, 1)
    max_pairs = _resolve(args, "max_pairs", int, None)

    if mech in ("nvdp", "vtdp"):
        padded = _pad_all(_load_audit_posteriors(args, prior), floor)
        m = len(padded)
        if mech == "nvdp":
            def rd(i, j, order):
                return rd_dp_posteriors(padded[i], padded[j], order, prior).value
        else:
            def rd(i, j, order):
                return _vtdp_rd(padded[i], padded[j], order)
    else:
        means = _pooled_means(args)
        m = len(means)
        if mech == "vib-fixed":
            sigma = _resolve(args, "sigma", float, 0.55)
            def rd(i, j, order):
                return rd_gaussian_isotropic(means[i], means[j], sigma, order)
        else:
            if not args.sigma_vec:
                raise ValueError("vib-learned needs --sigma-vec")
            sig = np.loadtxt(args.sigma_vec, dtype=float).reshape(-1)
            if sig.shape[0] != means[0].shape[0]:
                raise ValueError(
                    f"--sigma-vec has {sig.shape[0]} entries, embeddings have d={means[0].shape[0]}"
                )
            def rd(i, j, order):
                return rd_gaussian_learned(means[i], means[j], sig, order)

    if m < 2:
        raise ValueError("audit needs at least 2 examples")

    def matrix_fn(order):
        return build_pairwise_matrix(
            m, lambda i, j: rd(i, j, order), order,
            max_pairs=max_pairs, subsample_seed=seed, workers=workers,
        )

    return matrix_fn, floor, max_pairs, m


def _cmd_audit(args) -> int:
    prior = PriorParams()
    seed = _resolve_seed(args)
    delta = _resolve(args, "delta", float, 1e-5)
    matrix_fn, floor, max_pairs, m = _matrix_fn_factory(args, prior, seed)
    if args.optimize_lambda:
        report = bdp_optimize(
            matrix_fn, DEFAULT_LAMBDA_GRID, delta,
            epsilon_alpha_floor=floor, mechanism=args.mechanism,
        )
    else:
        order = RenyiOrder(_resolve(args, "lam", float, 1.1))
        matrix = matrix_fn(order)
        pairs = int(np.sum(~np.isnan(matrix.values))) - m
        report = assemble_report(
            matrix, delta, epsilon_alpha_floor=floor, mechanism=args.mechanism,
            pairs_evaluated=pairs if max_pairs is not None else None,
        )
    if args.out_json:
        Path(args.out_json).write_text(report.to_json() + "\n")
    if args.out_csv:
        path = Path(args.out_csv)
        row = report.to_csv_row(args.dataset_name or Path(args.data or args.posteriors or "-").stem)
        if path.exists():
            path.write_text(path.read_text() + row + "\n")
        else:
            path.write_text(REPORT_CSV_HEADER + "\n" + row + "\n")
    print(f"mechanism={report.mechanism} lambda={report.lam} rd_max={report.rd_max} "
          f"rd_avg={report.rd_avg:.6g} epsilon_mu={report.epsilon_mu} "
          f"infinite_pairs={report.infinite_pair_count}")
    return EXIT_OK


def _parse_grid(text, default):
    if text is None:
        return list(default)
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise ValueError("empty grid")
    return values


def _cmd_sweep(args) -> int:
    prior = PriorParams()
    seed0 = _resolve_seed(args)
    records = list(read_embeddings(args.data))
    if len(records) < 4:
        raise ValueError("sweep needs at least 4 records")
    d_grid = _parse_grid(_resolve(args, "lambdas", str, None), (1e-3, 1e-2, 1e-1, 1.0))
    g_grid_raw = _resolve(args, "lambda_g_grid", str, None)
    cells = (
        [(ld, lg) for ld in d_grid for lg in _parse_grid(g_grid_raw, ())]
        if g_grid_raw else [(v, v) for v in d_grid]
    )
    seeds = [int(float(s)) for s in _resolve(args, "seeds", str, "0,1,2,3,4").split(",") if s.strip()]
    if not cells or not seeds:
        raise ValueError("sweep grid and seeds must be non-empty")
    order = RenyiOrder(_resolve(args, "lam", float, 1.1))
    delta = _resolve(args, "delta", float, 1e-5)
    floor = _resolve(args, "pad_floor", float, 1e-4)
    workers = _resolve(args, "workers", int, 1)
    val_frac = _resolve(args, "val_frac", float, 0.25)

    rows = ["lambda_d,lambda_g,seed,acc,rd_max,rd_avg,epsilon_mu,status"]
    points = ["epsilon_mu,accuracy"]
    failures = 0
    for lam_d, lam_g in cells:
        for seed in seeds:
            try:
                tr, val = _split(records, val_frac, seed0 + seed)
                cfg = _train_config(args, seed0 + seed)
                result = train(tr, val, cfg, LossWeights(lam_d, lam_g),
                               n_heads=_resolve(args, "heads", int, 2))
                if result.aborted:
                    raise NumericalAbort("training diverged")
                acc = evaluate_accuracy(val, result.params, prior, RngState(seed0 + seed, stream=0xE7A1))
                posteriors = _pad_all(
                    [project_posterior(np.asarray(r.x, dtype=float), result.params, prior) for r in val],
                    floor,
                )
                matrix = build_pairwise_matrix(
                    len(posteriors),
                    lambda i, j: rd_dp_posteriors(posteriors[i], posteriors[j], order, prior).value,
                    order, workers=workers,
                )
                report = assemble_report(matrix, delta, epsilon_alpha_floor=floor)
                rows.append(
                    f"{lam_d!r},{lam_g!r},{seed},{acc!r},"
                    f"{'inf' if math.isinf(report.rd_max) else repr(report.rd_max)},"
                    f"{report.rd_avg!r},"
                    f"{'inf' if math.isinf(report.epsilon_mu) else repr(report.epsilon_mu)},ok"
                )
                points.append(f"{'inf' if math.isinf(report.epsilon_mu) else repr(report.epsilon_mu)},{acc!r}")
                print(f"cell lambda_d={lam_d} lambda_g={lam_g} seed={seed}: "
                      f"acc={acc:.3f} rd_max={report.rd_max:.6g} eps_mu={report.epsilon_mu:.6g}")
            except (NumericalAbort, FormatError, ValueError) as exc:
                failures += 1
                rows.append(f"{lam_d!r},{lam_g!r},{seed},nan,nan,nan,nan,failed:{type(exc).__name__}")
                print(f"cell lambda_d={lam_d} lambda_g={lam_g} seed={seed} failed: {exc}",
                      file=sys.stderr)
    Path(args.out_csv).write_text("\n".join(rows) + "\n")
    if args.plot_data:
        Path(args.plot_data).write_text("\n".join(points) + "\n")
    total = len(cells) * len(seeds)
    print(f"sweep finished: {total - failures}/{total} cells succeeded")
    return EXIT_NUMERIC if failures == total else EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args._config = _read_config(args.config) if getattr(args, "config", None) else {}
        handler = {
            "gen": _cmd_gen,
            "train": _cmd_train,
            "sanitize": _cmd_sanitize,
            "audit": _cmd_audit,
            "sweep": _cmd_sweep,
        }[args.command]
        return handler(args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
