"""Offline bridge from text datasets to the portable .emb embedding
format, via a frozen transformer encoder."""

from .dump import DumpConfig, dump_embeddings
from .encoders import HFEncoder, RandomTransformerEncoder, load_encoder
from .writer import EmbWriter

__version__ = "0.1.0"
