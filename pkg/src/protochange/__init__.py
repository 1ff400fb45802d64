"""Prototype-guided unsupervised change detection for bi-temporal rasters."""

__version__ = "0.1.0"

from .config import PipelineConfig
from .pipeline import detect, evaluate
from .raster_io import ChangeMask, ImagePair, RasterImage, load_image, load_pair

__all__ = [
    "ChangeMask",
    "ImagePair",
    "PipelineConfig",
    "RasterImage",
    "detect",
    "evaluate",
    "load_image",
    "load_pair",
    "__version__",
]
