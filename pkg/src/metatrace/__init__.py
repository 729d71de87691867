"""Toolkit for auditing metadata traces in frozen visual-encoder embeddings."""

__version__ = "0.1.0"

from metatrace.coredata import (
    EmbeddingSet,
    SampleRecord,
    VariantEmbeddingTensor,
    join,
    l2_normalize,
    load_embeddings,
    load_manifest,
    load_tensor,
    save_embeddings,
    save_manifest,
    save_tensor,
)
from metatrace.labels import LabelSpace, builtin_space

__all__ = [
    "EmbeddingSet",
    "SampleRecord",
    "VariantEmbeddingTensor",
    "LabelSpace",
    "builtin_space",
    "join",
    "l2_normalize",
    "load_embeddings",
    "load_manifest",
    "load_tensor",
    "save_embeddings",
    "save_manifest",
    "save_tensor",
]
