"""Density-map counting with auxiliary segmentation tasks and graph reasoning."""

from .config import (
    DataConfig,
    LossConfig,
    ModelConfig,
    OptimConfig,
    RunConfig,
    load_config,
)
from .data import DatasetManifest, PointAnnotation, load_manifest, save_manifest
from .metrics import MetricsReport

__version__ = "0.1.0"

__all__ = [
    "DataConfig",
    "DatasetManifest",
    "LossConfig",
    "MetricsReport",
    "ModelConfig",
    "OptimConfig",
    "PointAnnotation",
    "RunConfig",
    "load_config",
    "load_manifest",
    "save_manifest",
    "__version__",
]
