"""refextract: produce CPT1 evaluation fixtures from images and text."""

from .chunk import ExpressionChunks, chunk_expression, tokenize
from .errors import BackendError, ExtractorError, SliceError
from .extract import (
    ExtractionSpec,
    ExtractionSummary,
    SliceSample,
    build_encoder,
    extract_sample,
    read_slice,
    run_extraction,
)
from .masks import propose_masks
from .tensorio import encode_tensor, read_tensor, write_atomic, write_tensor
from .toyenc import ToyEncoder

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "ExpressionChunks",
    "ExtractionSpec",
    "ExtractionSummary",
    "ExtractorError",
    "SliceError",
    "SliceSample",
    "ToyEncoder",
    "build_encoder",
    "chunk_expression",
    "encode_tensor",
    "extract_sample",
    "propose_masks",
    "read_slice",
    "read_tensor",
    "run_extraction",
    "tokenize",
    "write_atomic",
    "write_tensor",
    "__version__",
]
