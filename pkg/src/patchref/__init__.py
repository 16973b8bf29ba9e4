"""Deterministic referring-image-segmentation engine over pre-extracted
embeddings.

The pipeline fuses sentence- and noun-level text embeddings, scores image
patches against the fused feature, clusters high-similarity patches into
connected regions, reranks candidate masks by cluster overlap, and reports
IoU metrics.  All of it runs on plain tensors loaded from a fixture
directory; no model weights are needed at this stage.
"""

from .errors import EngineError, FixtureError, TensorFormatError, ValidationError
from .tensorio import (
    Fixture,
    FixtureManifest,
    ProjectionParams,
    SampleRecord,
    load_fixture,
    read_tensor,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "EngineError",
    "ValidationError",
    "TensorFormatError",
    "FixtureError",
    "Fixture",
    "FixtureManifest",
    "ProjectionParams",
    "SampleRecord",
    "load_fixture",
    "read_tensor",
    "write_tensor",
    "__version__",
]
