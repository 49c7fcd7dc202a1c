"""Training-free segmentation engine: fused global/local affinities,
Markov-flow clustering, and random-walk label propagation."""

from .core import (
    FeatureMap,
    InvalidInputError,
    LabelMap,
    SegmentationConfig,
    StochasticMatrix,
    matmul,
    row_normalize,
)
from .pipeline import SegmentationRun, run_segmentation

__version__ = "0.1.0"

__all__ = [
    "FeatureMap",
    "InvalidInputError",
    "LabelMap",
    "SegmentationConfig",
    "StochasticMatrix",
    "SegmentationRun",
    "matmul",
    "row_normalize",
    "run_segmentation",
    "__version__",
]
