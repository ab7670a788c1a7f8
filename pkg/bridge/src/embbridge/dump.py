"""Convert a delimited text dataset into the portable .emb format by
running a frozen encoder over every row."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .encoders import load_encoder
from .writer import EmbWriter

__all__ = ["DumpConfig", "dump_embeddings"]


@dataclass(frozen=True)
class DumpConfig:
    text_col: str = "text"
    text2_col: str | None = None
    label_col: str = "label"
    id_col: str | None = None
    delimiter: str = "\t"
    max_len: int = 64
    batch_size: int = 32


def _parse_label(raw: str, row_no: int):
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError as exc:
        raise ValueError(f"row {row_no}: label {raw!r} is neither integer nor real") from exc


def dump_embeddings(input_path, encoder_name: str, output_path,
                    config: DumpConfig = DumpConfig()) -> dict:
    """Encode every row of the input file and write one embedding record
    per row. Returns a summary dict (records, d, truncated)."""
    encoder = load_encoder(encoder_name, max_len=config.max_len)
    input_path = Path(input_path)
    rows = []
    with open(input_path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f, delimiter=config.delimiter)
        if reader.fieldnames is None:
            raise ValueError(f"{input_path}: empty input file")
        needed = {config.text_col, config.label_col}
        if config.text2_col:
            needed.add(config.text2_col)
        if config.id_col:
            needed.add(config.id_col)
        missing = needed - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{input_path}: missing columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):  # row 1 is the header
            text = (row.get(config.text_col) or "").strip()
            if not text:
                raise ValueError(f"row {row_no}: empty text field")
            pair = (row.get(config.text2_col) or "").strip() if config.text2_col else None
            if config.text2_col and not pair:
                raise ValueError(f"row {row_no}: empty second text field")
            label = _parse_label(row.get(config.label_col) or "", row_no)
            ident = (row.get(config.id_col) or "").strip() if config.id_col else f"row{row_no - 1:06d}"
            rows.append((ident, label, text, pair))

    written = 0
    with EmbWriter(output_path) as writer:
        for start in range(0, len(rows), config.batch_size):
            chunk = rows[start : start + config.batch_size]
            mats = encoder.encode_batch([(text, pair) for _, _, text, pair in chunk])
            for (ident, label, _, _), mat in zip(chunk, mats):
                writer.add(ident, label, mat)
                written += 1
    return {
        "records": written,
        "d": getattr(encoder, "d", mats[0].shape[1] if rows else 0),
        "truncated": encoder.truncated,
    }
