"""Lung CT toolkit: morphological lung masks, CLAHE preprocessing, a small
numpy network engine, classical heads and a cross-validation harness."""

from .errors import (
    BundleFormatError,
    ConfigError,
    ImageFormatError,
    LungkitError,
    LungkitWarning,
    ManifestError,
    ShapeError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "BundleFormatError",
    "ConfigError",
    "ImageFormatError",
    "LungkitError",
    "LungkitWarning",
    "ManifestError",
    "ShapeError",
    "TrainingError",
    "__version__",
]
