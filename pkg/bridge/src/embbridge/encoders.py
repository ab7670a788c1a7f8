"""Frozen encoders that turn text into a sequence of token vectors.

Two families:

  random:<dim>x<layers>[@seed]  a deterministic random-weight transformer
                                encoder, fully offline. Weights are
                                derived from the seed, token vectors from
                                a stable hash of the token string, so the
                                same text always maps to the same matrix.
  hf:<model-name>               final-layer hidden states of a pretrained
                                transformer (needs the transformers
                                package and a locally cached model).

Both are inference-only and deterministic; nothing here is trainable.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

__all__ = ["load_encoder", "RandomTransformerEncoder", "HFEncoder"]

_SEP = "[SEP]"
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def load_encoder(name: str, max_len: int = 64):
    """Resolve an encoder specifier to an encoder object."""
    if name.startswith("random:"):
        spec = name[len("random:"):]
        seed = 0
        if "@" in spec:
            spec, seed_s = spec.split("@", 1)
            seed = int(seed_s)
        try:
            d_s, layers_s = spec.split("x", 1)
            d, layers = int(d_s), int(layers_s)
        except ValueError as exc:
            raise ValueError(f"bad random encoder spec {name!r}; expected random:<dim>x<layers>[@seed]") from exc
        return RandomTransformerEncoder(d=d, layers=layers, seed=seed, max_len=max_len)
    if name.startswith("hf:"):
        return HFEncoder(name[len("hf:"):], max_len=max_len)
    raise ValueError(f"unknown encoder {name!r}; use random:<dim>x<layers>[@seed] or hf:<model>")


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class RandomTransformerEncoder:
    """Single-stack transformer with frozen seed-derived weights.

    Token embeddings come from a blake2 hash of the token string, so the
    vocabulary is implicit and unbounded; a sinusoidal position code and
    `layers` rounds of single-head self-attention plus a GELU feed-forward
    produce contextual token vectors.
    """

    def __init__(self, d: int = 16, layers: int = 2, seed: int = 0, max_len: int = 64):
        if d < 2 or layers < 0 or max_len < 1:
            raise ValueError("need d >= 2, layers >= 0, max_len >= 1")
        self.d = d
        self.layers = layers
        self.seed = seed
        self.max_len = max_len
        self.truncated = 0
        g = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(0xB71D6E,))))
        s = 1.0 / np.sqrt(d)
        self._w = [
            {k: g.normal(0.0, s, (d, d)) for k in ("q", "k", "v", "o", "f1", "f2")}
            for _ in range(layers)
        ]

    def _token_vec(self, token: str) -> np.ndarray:
        digest = hashlib.blake2s(token.encode("utf-8"), digest_size=8).digest()
        tid = int.from_bytes(digest, "little")
        g = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(0xE0C0DE, tid))
        ))
        return g.normal(0.0, 1.0, self.d)

    def _positional(self, n: int) -> np.ndarray:
        pos = np.arange(n)[:, None]
        dim = np.arange(self.d)[None, :]
        angle = pos / np.power(10000.0, (2 * (dim // 2)) / self.d)
        enc = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
        return enc

    def encode(self, text: str, text_pair: str | None = None) -> np.ndarray:
        tokens = _tokenize(text)
        if text_pair is not None:
            tokens = tokens + [_SEP] + _tokenize(text_pair)
        if not tokens:
            tokens = [_SEP]
        if len(tokens) > self.max_len:
            tokens = tokens[: self.max_len]
            self.truncated += 1
        h = np.stack([self._token_vec(t) for t in tokens]) + self._positional(len(tokens))
        for w in self._w:
            q = h @ w["q"]
            k = h @ w["k"]
            v = h @ w["v"]
            logits = q @ k.T / np.sqrt(self.d)
            logits -= logits.max(axis=1, keepdims=True)
            attn = np.exp(logits)
            attn /= attn.sum(axis=1, keepdims=True)
            h = h + (attn @ v) @ w["o"]
            f = h @ w["f1"]
            f = 0.5 * f * (1.0 + np.tanh(np.sqrt(2 / np.pi) * (f + 0.044715 * f**3)))
            h = h + f @ w["f2"]
            h = (h - h.mean(axis=1, keepdims=True)) / (h.std(axis=1, keepdims=True) + 1e-9)
        return h.astype(np.float32)

    def encode_batch(self, pairs) -> list[np.ndarray]:
        return [self.encode(a, b) for a, b in pairs]


class HFEncoder:
    """Final-layer hidden states of a pretrained transformer encoder.

    Imports transformers lazily; a missing package or an uncached model
    surfaces as an encoder-load failure.
    """

    def __init__(self, model_name: str, max_len: int = 64):
        self.max_len = max_len
        self.truncated = 0
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(f"encoder load failure: transformers/torch unavailable ({exc})") from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name)
        except Exception as exc:
            raise RuntimeError(f"encoder load failure for {model_name!r}: {exc}") from exc
        self._model.eval()
        self._torch = torch
        self.d = int(self._model.config.hidden_size)

    def encode(self, text: str, text_pair: str | None = None) -> np.ndarray:
        return self.encode_batch([(text, text_pair)])[0]

    def encode_batch(self, pairs) -> list[np.ndarray]:
        texts = [a for a, _ in pairs]
        seconds = [b for _, b in pairs]
        use_pairs = any(b is not None for b in seconds)
        enc = self._tokenizer(
            texts,
            text_pair=[b or "" for b in seconds] if use_pairs else None,
            truncation=True,
            max_length=self.max_len,
            padding=True,
            return_tensors="pt",
        )
        self.truncated += sum(
            1 for ids in enc["input_ids"] if len(ids) >= self.max_len
        )
        with self._torch.no_grad():
            out = self._model(**enc).last_hidden_state
        mats = []
        for row, mask in zip(out, enc["attention_mask"]):
            n = int(mask.sum())
            mats.append(row[:n].numpy().astype(np.float32))
        return mats
