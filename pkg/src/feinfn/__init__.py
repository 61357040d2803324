"""Fourier-enhanced implicit neural fusion of hyperspectral and multispectral images."""

__version__ = "0.1.0"

from .image import HyperspectralImage
from .config import FusionConfig, EncoderConfig, GaborParams
from .model import FeINFN

__all__ = [
    "HyperspectralImage",
    "FusionConfig",
    "EncoderConfig",
    "GaborParams",
    "FeINFN",
    "__version__",
]
