"""Shared utilities: the exception hierarchy (logging lives in colabel.utils.logging)."""

from colabel.utils.exceptions import (
    ClusteringError,
    ColabelError,
    ConfigurationError,
    CorrectionError,
    DatasetError,
    GradientError,
    IntegrationError,
    MetricError,
    ModelError,
    OverlapError,
    PipelineError,
    ShapeError,
    TrainingError,
)

__all__ = [
    "ClusteringError",
    "ColabelError",
    "ConfigurationError",
    "CorrectionError",
    "DatasetError",
    "GradientError",
    "IntegrationError",
    "MetricError",
    "ModelError",
    "OverlapError",
    "PipelineError",
    "ShapeError",
    "TrainingError",
]
