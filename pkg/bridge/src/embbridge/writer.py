"""Writer for the portable .emb embedding format.

This is an independent implementation of the normative byte layout (the
consumer side lives in a different package; the file format is the only
contract between them):

    magic "NVDPE1", u32 d, u32 record_count, then per record:
    u32 id_len, id bytes (utf-8), u8 label tag (0 integer, 1 real),
    8-byte label (i64 / f64), u32 n, n*d float32 token matrix.

All integers and floats are little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

EMB_MAGIC = b"NVDPE1"
LABEL_INT = 0
LABEL_REAL = 1


class EmbWriter:
    """Streaming writer; the header's d and count are patched on close."""

    def __init__(self, path):
        self._f = open(path, "wb")
        self._f.write(EMB_MAGIC)
        self._f.write(struct.pack("<II", 0, 0))
        self._d = None
        self._count = 0

    def add(self, record_id: str, label, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"record {record_id!r}: token matrix must be (n>=1, d)")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"record {record_id!r}: non-finite embedding values")
        if self._d is None:
            self._d = x.shape[1]
        elif x.shape[1] != self._d:
            raise ValueError(
                f"record {record_id!r} has d={x.shape[1]}, file is d={self._d}"
            )
        ident = record_id.encode("utf-8")
        self._f.write(struct.pack("<I", len(ident)))
        self._f.write(ident)
        if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
            self._f.write(struct.pack("<Bq", LABEL_INT, int(label)))
        else:
            self._f.write(struct.pack("<Bd", LABEL_REAL, float(label)))
        self._f.write(struct.pack("<I", x.shape[0]))
        self._f.write(x.astype("<f4").tobytes())
        self._count += 1

    def close(self) -> int:
        self._f.seek(len(EMB_MAGIC))
        self._f.write(struct.pack("<II", self._d if self._d is not None else 0, self._count))
        self._f.close()
        return self._count

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
