"""Bridge unit tests: deterministic encoding, structural output checks,
truncation accounting, and input validation."""

import numpy as np
import pytest

from embbridge.dump import DumpConfig, dump_embeddings
from embbridge.encoders import RandomTransformerEncoder, load_encoder
from embbridge.cli import main


SAMPLE = "\n".join(
    ["text\tlabel"]
    + [
        f"{t}\t{l}"
        for t, l in [
            ("the cat sat on the mat", 0),
            ("a quick brown fox jumps", 1),
            ("privacy preserving embeddings are useful", 0),
            ("short", 1),
            ("another plain sentence for testing", 0),
            ("numbers 1 2 3 and punctuation !", 1),
            ("the same words the same words", 0),
            ("transformers encode token sequences", 1),
            ("tiny", 0),
            ("final row of the sample file", 1),
        ]
    ]
) + "\n"


@pytest.fixture
def sample_tsv(tmp_path):
    path = tmp_path / "sample.tsv"
    path.write_text(SAMPLE)
    return path


class TestRandomEncoder:
    def test_identical_text_bitwise_identical(self):
        enc = load_encoder("random:16x2@7")
        a = enc.encode("hello world again")
        b = enc.encode("hello world again")
        assert np.array_equal(a, b)

    def test_distinct_text_differs(self):
        enc = load_encoder("random:16x2")
        assert not np.array_equal(enc.encode("alpha beta"), enc.encode("gamma delta"))

    def test_seed_changes_weights(self):
        a = load_encoder("random:16x1@1").encode("same text")
        b = load_encoder("random:16x1@2").encode("same text")
        assert not np.array_equal(a, b)

    def test_shape_and_dtype(self):
        enc = RandomTransformerEncoder(d=12, layers=2, seed=0, max_len=64)
        out = enc.encode("one two three")
        assert out.shape == (3, 12)
        assert out.dtype == np.float32

    def test_pair_separator_matters(self):
        enc = load_encoder("random:16x2")
        paired = enc.encode("first part", "second part")
        glued = enc.encode("first part second part")
        assert paired.shape[0] == glued.shape[0] + 1  # the separator token
        assert not np.array_equal(paired[: glued.shape[0]], glued)

    def test_truncation_counted(self):
        enc = RandomTransformerEncoder(d=8, layers=1, seed=0, max_len=4)
        out = enc.encode("one two three four five six")
        assert out.shape[0] == 4
        assert enc.truncated == 1

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            load_encoder("random:banana")
        with pytest.raises(ValueError):
            load_encoder("magic:3")


class TestDump:
    def test_ten_row_sample_structure(self, sample_tsv, tmp_path):
        out = tmp_path / "sample.emb"
        summary = dump_embeddings(sample_tsv, "random:16x2", out, DumpConfig())
        assert summary["records"] == 10
        assert summary["d"] == 16
        assert out.exists()

    def test_deterministic_output_bytes(self, sample_tsv, tmp_path):
        a, b = tmp_path / "a.emb", tmp_path / "b.emb"
        dump_embeddings(sample_tsv, "random:16x2@3", a, DumpConfig())
        dump_embeddings(sample_tsv, "random:16x2@3", b, DumpConfig())
        assert a.read_bytes() == b.read_bytes()

    def test_real_labels(self, tmp_path):
        src = tmp_path / "reg.tsv"
        src.write_text("text\tlabel\nsome sentence\t0.75\nanother one\t-1.5\n")
        out = tmp_path / "reg.emb"
        summary = dump_embeddings(src, "random:8x1", out, DumpConfig())
        assert summary["records"] == 2

    def test_missing_column(self, tmp_path):
        src = tmp_path / "bad.tsv"
        src.write_text("sentence\tlabel\nhello\t1\n")
        with pytest.raises(ValueError, match="missing columns"):
            dump_embeddings(src, "random:8x1", tmp_path / "x.emb", DumpConfig())

    def test_malformed_row_reports_number(self, tmp_path):
        src = tmp_path / "bad.tsv"
        src.write_text("text\tlabel\nfine row\t1\n\t0\n")
        with pytest.raises(ValueError, match="row 3"):
            dump_embeddings(src, "random:8x1", tmp_path / "x.emb", DumpConfig())

    def test_bad_label_reports_number(self, tmp_path):
        src = tmp_path / "bad.tsv"
        src.write_text("text\tlabel\nfine row\tnot_a_number\n")
        with pytest.raises(ValueError, match="row 2"):
            dump_embeddings(src, "random:8x1", tmp_path / "x.emb", DumpConfig())

    def test_pair_task_and_id_column(self, tmp_path):
        src = tmp_path / "pairs.tsv"
        src.write_text(
            "pid\ts1\ts2\tgold\n"
            "a1\tfirst sentence\tsecond sentence\t1\n"
            "a2\tmore text\teven more\t0\n"
        )
        out = tmp_path / "pairs.emb"
        cfg = DumpConfig(text_col="s1", text2_col="s2", label_col="gold", id_col="pid")
        assert dump_embeddings(src, "random:8x1", out, cfg)["records"] == 2


class TestCli:
    def test_end_to_end(self, sample_tsv, tmp_path):
        out = tmp_path / "cli.emb"
        rc = main(["--input", str(sample_tsv), "--out", str(out),
                   "--encoder", "random:16x2", "--max-len", "32"])
        assert rc == 0
        assert out.exists()

    def test_bad_input_exit_code(self, tmp_path):
        rc = main(["--input", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "x.emb")])
        assert rc == 2
