"""Portable binary formats for embedding sequences, sanitized samples
and posterior archives, plus a synthetic dataset generator so the test
suite and demo pipeline run without any external encoder.

All byte layouts are little-endian and normative; the embedding (.emb)
layout is the contract consumed by external producers.

.emb  magic "NVDPE1", u32 d, u32 record_count, then per record:
      u32 id_len, id bytes (utf-8), u8 label tag (0 integer, 1 real),
      8-byte label (i64 or f64), u32 n, n*d float32 token matrix.
.nvs  magic "NVDPS1", u32 d, u32 record_count, then per record:
      u32 id_len, id bytes, u32 m, m float64 weights, m*d float32 vectors.
Posterior archives are ZIP files (stored, fixed timestamps) holding one
.dpq blob per record plus a manifest of record ids.
"""

from __future__ import annotations

import struct
import zipfile
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import FormatError
from .posterior import DPPosterior, WeightedVectorSample, deserialize_posterior, serialize_posterior

__all__ = [
    "EmbeddingRecord",
    "SanitizedRecord",
    "SyntheticConfig",
    "read_embeddings",
    "write_embeddings",
    "read_sanitized",
    "write_sanitized",
    "write_posterior_archive",
    "read_posterior_archive",
    "generate_synthetic",
]

EMB_MAGIC = b"NVDPE1"
NVS_MAGIC = b"NVDPS1"
_LABEL_INT = 0
_LABEL_REAL = 1


@dataclass
class EmbeddingRecord:
    """One input sequence: stable id, task target, token matrix (n, d).

    Token values are kept in float32 (the storage precision); numerical
    code promotes to float64 at the point of use.
    """

    id: str
    label: int | float
    x: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        if self.x.ndim != 2 or self.x.shape[0] < 1:
            raise ValueError("x must be a (n>=1, d) matrix")
        if not np.all(np.isfinite(self.x)):
            raise ValueError(f"record {self.id!r} contains non-finite values")


@dataclass
class SanitizedRecord:
    """One released sample, keyed by the source record id."""

    id: str
    sample: WeightedVectorSample


def _read_exact(f, size, what):
    data = f.read(size)
    if len(data) != size:
        raise FormatError(f"truncated file at byte {f.tell() - len(data)} while reading {what}")
    return data


def write_embeddings(path, records: Iterable[EmbeddingRecord]) -> int:
    """Write records in order; returns the record count. All records
    must agree on d."""
    path = Path(path)
    count = 0
    d = None
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<II", 0, 0))  # d and count patched at the end
        for rec in records:
            if d is None:
                d = rec.x.shape[1]
            elif rec.x.shape[1] != d:
                raise FormatError(
                    f"record {rec.id!r} has d={rec.x.shape[1]}, file is d={d}"
                )
            ident = rec.id.encode("utf-8")
            f.write(struct.pack("<I", len(ident)))
            f.write(ident)
            if isinstance(rec.label, (int, np.integer)) and not isinstance(rec.label, bool):
                f.write(struct.pack("<Bq", _LABEL_INT, int(rec.label)))
            else:
                f.write(struct.pack("<Bd", _LABEL_REAL, float(rec.label)))
            f.write(struct.pack("<I", rec.x.shape[0]))
            f.write(rec.x.astype("<f4").tobytes())
            count += 1
        f.seek(len(EMB_MAGIC))
        f.write(struct.pack("<II", d if d is not None else 0, count))
    return count


def read_embeddings(path) -> Iterator[EmbeddingRecord]:
    """Stream records in file order."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(EMB_MAGIC))
        if magic != EMB_MAGIC:
            raise FormatError(f"{path}: bad magic, not a .emb embedding file")
        d, count = struct.unpack("<II", _read_exact(f, 8, "header"))
        for k in range(count):
            (id_len,) = struct.unpack("<I", _read_exact(f, 4, f"record {k} id length"))
            ident = _read_exact(f, id_len, f"record {k} id").decode("utf-8")
            tag, = struct.unpack("<B", _read_exact(f, 1, f"record {ident!r} label tag"))
            raw = _read_exact(f, 8, f"record {ident!r} label")
            if tag == _LABEL_INT:
                label: int | float = struct.unpack("<q", raw)[0]
            elif tag == _LABEL_REAL:
                label = struct.unpack("<d", raw)[0]
            else:
                raise FormatError(f"record {ident!r}: unknown label tag {tag}")
            (n,) = struct.unpack("<I", _read_exact(f, 4, f"record {ident!r} length"))
            body = _read_exact(f, 4 * n * d, f"record {ident!r} payload")
            x = np.frombuffer(body, dtype="<f4").reshape(n, d)
            yield EmbeddingRecord(id=ident, label=label, x=x.copy())
        trailing = f.read(1)
        if trailing:
            raise FormatError(f"{path}: trailing bytes after {count} records at byte {f.tell() - 1}")


def write_sanitized(path, records: Iterable[SanitizedRecord]) -> int:
    path = Path(path)
    count = 0
    d = None
    with open(path, "wb") as f:
        f.write(NVS_MAGIC)
        f.write(struct.pack("<II", 0, 0))
        for rec in records:
            s = rec.sample
            if d is None:
                d = s.Z.shape[1]
            elif s.Z.shape[1] != d:
                raise FormatError(f"record {rec.id!r} has d={s.Z.shape[1]}, file is d={d}")
            ident = rec.id.encode("utf-8")
            f.write(struct.pack("<I", len(ident)))
            f.write(ident)
            f.write(struct.pack("<I", s.pi.shape[0]))
            f.write(np.asarray(s.pi, dtype="<f8").tobytes())
            f.write(np.asarray(s.Z, dtype="<f4").tobytes())
            count += 1
        f.seek(len(NVS_MAGIC))
        f.write(struct.pack("<II", d if d is not None else 0, count))
    return count


def read_sanitized(path) -> Iterator[SanitizedRecord]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(NVS_MAGIC))
        if magic != NVS_MAGIC:
            raise FormatError(f"{path}: bad magic, not a .nvs sanitized file")
        d, count = struct.unpack("<II", _read_exact(f, 8, "header"))
        for k in range(count):
            (id_len,) = struct.unpack("<I", _read_exact(f, 4, f"record {k} id length"))
            ident = _read_exact(f, id_len, f"record {k} id").decode("utf-8")
            (m,) = struct.unpack("<I", _read_exact(f, 4, f"record {ident!r} slot count"))
            pi = np.frombuffer(_read_exact(f, 8 * m, f"record {ident!r} weights"), dtype="<f8")
            Z = np.frombuffer(_read_exact(f, 4 * m * d, f"record {ident!r} vectors"), dtype="<f4")
            yield SanitizedRecord(
                id=ident,
                sample=WeightedVectorSample(pi=pi.copy(), Z=Z.reshape(m, d).copy()),
            )
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} records")


def write_posterior_archive(path, ids: list[str], posteriors: list[DPPosterior]) -> None:
    """ZIP archive of one .dpq blob per record. Entries are stored
    uncompressed with a fixed timestamp so identical inputs produce
    identical bytes."""
    if len(ids) != len(posteriors):
        raise ValueError("ids and posteriors must align")
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        manifest = {"ids": list(ids)}
        info = zipfile.ZipInfo("manifest.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(manifest, sort_keys=True))
        for k, q in enumerate(posteriors):
            info = zipfile.ZipInfo(f"records/{k:06d}.dpq", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, serialize_posterior(q))


def read_posterior_archive(path) -> tuple[list[str], list[DPPosterior]]:
    try:
        with zipfile.ZipFile(path) as zf:
            names = sorted(n for n in zf.namelist() if n.startswith("records/"))
            manifest = json.loads(zf.read("manifest.json"))
            ids = list(manifest["ids"])
            if len(ids) != len(names):
                raise FormatError(f"{path}: manifest lists {len(ids)} ids but archive has {len(names)} records")
            posteriors = [deserialize_posterior(zf.read(n)) for n in names]
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a posterior archive ({exc})") from exc
    return ids, posteriors


@dataclass(frozen=True)
class SyntheticConfig:
    """Class-conditional Gaussian token sequences.

    Each class gets a mean vector; pairwise distance between class means
    equals class_separation, token noise is unit Gaussian. Sequence
    lengths are uniform over [n_min, n_max] and labels are balanced to
    within one example.
    """

    n_examples: int
    d: int
    n_classes: int = 2
    n_min: int = 2
    n_max: int = 8
    class_separation: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.n_examples < 1 or self.d < 1 or self.n_classes < 2:
            raise ValueError("need n_examples >= 1, d >= 1, n_classes >= 2")
        if not (1 <= self.n_min <= self.n_max):
            raise ValueError("need 1 <= n_min <= n_max")
        if self.class_separation < 0:
            raise ValueError("class_separation must be >= 0")
        if self.n_classes > self.d:
            raise ValueError("class means need n_classes <= d")


def generate_synthetic(config: SyntheticConfig) -> list[EmbeddingRecord]:
    ss = np.random.SeedSequence(entropy=int(config.seed), spawn_key=(0xDA7A,))
    g = np.random.Generator(np.random.Philox(ss))
    # axis-aligned means, pairwise distance = class_separation
    means = np.zeros((config.n_classes, config.d))
    for c in range(config.n_classes):
        means[c, c] = config.class_separation / np.sqrt(2.0)
    labels = np.array([k % config.n_classes for k in range(config.n_examples)])
    g.shuffle(labels)
    records = []
    for k in range(config.n_examples):
        n = int(g.integers(config.n_min, config.n_max + 1))
        x = means[labels[k]] + g.standard_normal((n, config.d))
        records.append(
            EmbeddingRecord(id=f"ex{k:06d}", label=int(labels[k]), x=x.astype(np.float32))
        )
    return records
