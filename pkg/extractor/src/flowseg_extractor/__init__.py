"""Feature extraction for the flowseg engine.

Turns images into (H, W, C) float32 NPY tensors by hooking the last decoder
block of a diffusion U-Net (or a tiny fixed-seed stand-in network). The
engine consumes these files; there is no code dependency in either
direction.
"""
from .spec import ExtractionSpec
from .extract import extract

__all__ = ["ExtractionSpec", "extract"]
__version__ = "0.1.0"
