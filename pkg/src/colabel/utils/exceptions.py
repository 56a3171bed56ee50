"""
Custom exceptions for CoLabel.

This module defines a hierarchy of custom exceptions that provide clear
error handling and debugging information throughout the pipeline.
All exceptions inherit from a base ColabelError class for easy
catching and handling.

Every exception class carries an ``exit_code`` that the command-line
entry point uses: validation problems exit with 1, runtime failures
with 2.
"""

from typing import Any, Dict, Optional


class ColabelError(Exception):
    """
    Base exception class for all CoLabel errors.

    This is the root exception that all other custom exceptions inherit from.
    It provides a consistent interface and allows catching all pipeline
    errors with a single except clause.

    Attributes:
        message: Human-readable error message
        context: Additional context information about the error
        original_error: The original exception that caused this error (if any)
        exit_code: Process exit code used by the CLI for this error family
    """

    exit_code: int = 2

    def __init__(
        self,
        message: str,
        context: Optional[Dict[str, Any]] = None,
        original_error: Optional[Exception] = None,
    ) -> None:
        """
        Initialize the base exception.

        Args:
            message: Human-readable error message
            context: Additional context information
            original_error: The original exception that caused this error
        """
        super().__init__(message)
        self.message = message
        self.context = context or {}
        self.original_error = original_error

    def __str__(self) -> str:
        """Return string representation of the error."""
        error_str = self.message
        if self.context:
            context_str = ", ".join(f"{k}={v}" for k, v in self.context.items())
            error_str += f" (Context: {context_str})"
        if self.original_error:
            error_str += f" (Caused by: {self.original_error})"
        return error_str


class ConfigurationError(ColabelError):
    """
    Raised when there's an error in configuration.

    This exception is raised when:
    - A JSON stage configuration fails validation
    - Class counts disagree with the configured branches
    - Referenced configuration paths do not exist

    Example:
        ```python
        if "model" not in config.class_counts:
            raise ConfigurationError(
                "Model class count is required",
                context={"class_counts": config.class_counts}
            )
        ```
    """

    exit_code = 1


class ShapeError(ColabelError):
    """
    Raised when tensor shapes are incompatible for an operation.

    Example:
        ```python
        if a.shape[1] != b.shape[0]:
            raise ShapeError(
                "Inner dimensions do not agree",
                context={"a": a.shape, "b": b.shape}
            )
        ```
    """

    exit_code = 1


class GradientError(ColabelError):
    """Raised when backward is requested on something that cannot seed it."""

    exit_code = 1


class DatasetError(ColabelError):
    """
    Raised for dataset generation and persistence problems.

    This exception is raised when:
    - A manifest row is malformed or names an unknown annotation kind
    - An image file referenced by the manifest is missing
    - Label indices are outside the schema cardinalities
    - A class-balanced sample cannot be drawn
    """

    exit_code = 1


class ClusteringError(ColabelError):
    """Raised when k-means cannot partition the given points."""


class OverlapError(ColabelError):
    """Raised when a cluster overlap cannot be computed (singleton or empty cluster)."""


class IntegrationError(ColabelError):
    """
    Raised when corroborative integration cannot proceed.

    Example:
        ```python
        if not sources:
            raise IntegrationError(
                "No labeled source dataset for annotation kind",
                context={"kind": kind}
            )
        ```
    """


class ModelError(ColabelError):
    """Raised for invalid network topologies or missing heads."""


class TrainingError(ColabelError):
    """
    Raised when a training run must abort.

    The context carries the diagnostics (epoch, step, per-term losses) that
    were available at the time of failure.
    """


class MetricError(ColabelError):
    """Raised when a metric is undefined for the given inputs."""


class CorrectionError(ColabelError):
    """Raised when retroactive correction cannot run (for example an empty knowledge base)."""


class PipelineError(ColabelError):
    """Raised by the command-line pipeline for invalid stage wiring."""

    exit_code = 1
