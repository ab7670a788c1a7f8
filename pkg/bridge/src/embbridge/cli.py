"""CLI for dumping text datasets to the .emb embedding format."""

from __future__ import annotations

import argparse
import sys

from .dump import DumpConfig, dump_embeddings


def _build_parser():
    p = argparse.ArgumentParser(
        prog="embbridge",
        description="Run a frozen encoder over a delimited text dataset and write .emb",
    )
    p.add_argument("--input", required=True, help="delimited text file with a header row")
    p.add_argument("--out", required=True, help="output .emb path")
    p.add_argument("--encoder", default="random:16x2",
                   help="random:<dim>x<layers>[@seed] or hf:<model> (default random:16x2)")
    p.add_argument("--max-len", type=int, default=64, help="token truncation length (default 64)")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--text-col", default="text")
    p.add_argument("--text2-col", help="second text column for pair tasks")
    p.add_argument("--label-col", default="label")
    p.add_argument("--id-col", help="column with stable record ids (default: row numbers)")
    p.add_argument("--delimiter", default="\t")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    cfg = DumpConfig(
        text_col=args.text_col,
        text2_col=args.text2_col,
        label_col=args.label_col,
        id_col=args.id_col,
        delimiter=args.delimiter,
        max_len=args.max_len,
        batch_size=args.batch_size,
    )
    try:
        summary = dump_embeddings(args.input, args.encoder, args.out, cfg)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {summary['records']} records (d={summary['d']}, "
          f"{summary['truncated']} truncated) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
