"""Visual-encoder feature extraction writing the shared binary embedding format."""

__version__ = "0.1.0"

from metatrace_extract.extract import ExtractorJob, extract, extract_variants
from metatrace_extract.formats import read_embeddings, read_tensor, write_embeddings, write_tensor
from metatrace_extract.models import list_models

__all__ = [
    "ExtractorJob",
    "extract",
    "extract_variants",
    "list_models",
    "read_embeddings",
    "read_tensor",
    "write_embeddings",
    "write_tensor",
]
