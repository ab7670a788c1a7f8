"""Format-conformance acceptance: bridge output must be accepted by the
primary reader, round-trip through it bit-exactly, and audit without
error through the primary pipeline."""

import json

import numpy as np
import pytest

nvdp_dataio = pytest.importorskip("nvdp.dataio")
from nvdp.cli import main as nvdp_main

from embbridge.dump import DumpConfig, dump_embeddings
from test_dump import SAMPLE


@pytest.fixture
def dumped(tmp_path):
    src = tmp_path / "sample.tsv"
    src.write_text(SAMPLE)
    out = tmp_path / "sample.emb"
    summary = dump_embeddings(src, "random:16x2@5", out, DumpConfig())
    assert summary["records"] == 10
    return out


def test_10_format_conformance(dumped, tmp_path):
    # accepted by the primary reader, with intact structure
    records = list(nvdp_dataio.read_embeddings(dumped))
    assert len(records) == 10
    assert all(r.x.shape[1] == 16 for r in records)
    assert all(np.all(np.isfinite(r.x)) for r in records)

    # bit-exact round-trip through the primary writer
    copy = tmp_path / "copy.emb"
    nvdp_dataio.write_embeddings(copy, records)
    assert copy.read_bytes() == dumped.read_bytes()

    # audits without error: closed-form pooled-mean mechanism...
    rep1 = tmp_path / "fixed.json"
    rc = nvdp_main(["audit", "--data", str(dumped), "--mechanism", "vib-fixed",
                    "--sigma", "0.55", "--out-json", str(rep1)])
    assert rc == 0
    doc = json.loads(rep1.read_text())
    assert doc["rd_max"] >= 0 and doc["n_examples"] == 10

    # ...and the full posterior mechanism through a trained checkpoint
    ckpt = tmp_path / "m.ckpt"
    assert nvdp_main(["train", "--data", str(dumped), "--out", str(ckpt),
                      "--epochs", "2", "--batch", "5", "--seed", "0"]) == 0
    rep2 = tmp_path / "nvdp.json"
    assert nvdp_main(["audit", "--data", str(dumped), "--ckpt", str(ckpt),
                      "--out-json", str(rep2), "--seed", "0"]) == 0
    assert json.loads(rep2.read_text())["n_examples"] == 10
    print("ACCEPTANCE 10: PASS  bridge output conforms to the embedding format", flush=True)
