"""Embedder sidecar: aligned text/image embeddings in the interchange format."""

from .encoders import ClipEncoder, LexicalColorEncoder, get_encoder
from .pipeline import embed_dataset, embed_query, read_dataset_rows

__version__ = "0.1.0"

__all__ = [
    "ClipEncoder",
    "LexicalColorEncoder",
    "embed_dataset",
    "embed_query",
    "get_encoder",
    "read_dataset_rows",
]
