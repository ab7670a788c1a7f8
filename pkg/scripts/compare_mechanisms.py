#!/usr/bin/env python3
"""Audit the four sharing mechanisms side by side on one dataset.

Trains a single checkpoint, then runs the audit once per mechanism and
collects the report rows into one CSV for comparison.

    python3 scripts/compare_mechanisms.py --workdir runs/mechs
"""

import argparse
import sys
from pathlib import Path

from nvdp.cli import main as nvdp


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/mechanisms")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--seq-len", type=int, default=6)
    ap.add_argument("--lambda-reg", type=float, default=1e-2)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    data = work / "data.emb"
    ckpt = work / "model.ckpt"
    table = work / "mechanisms.csv"
    if table.exists():
        table.unlink()
    sigma_vec = work / "sigma_vec.txt"
    sigma_vec.write_text("\n".join(["0.55"] * args.dim) + "\n")

    rc = nvdp(["gen", "--out", str(data), "--n", str(args.n), "--dim", str(args.dim),
               "--classes", "2", "--sep", "6",
               "--n-min", str(args.seq_len), "--n-max", str(args.seq_len),
               "--seed", str(args.seed)])
    rc = rc or nvdp(["train", "--data", str(data), "--out", str(ckpt),
                     "--lambda-d", str(args.lambda_reg), "--lambda-g", str(args.lambda_reg),
                     "--epochs", str(args.epochs), "--lr", "0.05", "--seed", str(args.seed)])
    if rc:
        return rc
    for mech, extra in [
        ("nvdp", []),
        ("vtdp", []),
        ("vib-fixed", ["--sigma", "0.55"]),
        ("vib-learned", ["--sigma-vec", str(sigma_vec)]),
    ]:
        rc = nvdp(["audit", "--data", str(data), "--ckpt", str(ckpt),
                   "--mechanism", mech, "--out-csv", str(table),
                   "--dataset-name", f"synthetic/{mech}", "--workers", "2",
                   "--seed", str(args.seed)] + extra)
        if rc:
            return rc
    print(f"\nmechanism comparison: {table}")
    print(table.read_text())
    return 0


if __name__ == "__main__":
    sys.exit(run())
