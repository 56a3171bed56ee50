"""
Configuration management for CoLabel.

This module handles runtime configuration loaded from environment variables
and .env files: logging, parallelism caps and the default output root.
Stage configurations (generation, integration, model, training) are JSON
documents validated by the pydantic models that live next to the code that
consumes them; ``load_json_config`` is the single entry point for reading
them.
"""

import json
from pathlib import Path
from typing import Type, TypeVar

from pydantic import BaseModel, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from colabel.utils.exceptions import ConfigurationError

ModelT = TypeVar("ModelT", bound=BaseModel)


class LoggingConfig(BaseSettings):
    """Logging configuration settings."""

    model_config = SettingsConfigDict(env_prefix="LOG_")

    level: str = Field(
        default="INFO",
        description="Logging level"
    )
    format: str = Field(
        default="text",
        description="Log format: 'json' or 'text'"
    )

    @field_validator("level")
    @classmethod
    def validate_level(cls, v: str) -> str:
        """Validate logging level."""
        valid_levels = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of: {valid_levels}")
        return v.upper()

    @field_validator("format")
    @classmethod
    def validate_format(cls, v: str) -> str:
        """Validate log format."""
        if v not in {"json", "text"}:
            raise ValueError("Log format must be 'json' or 'text'")
        return v


class RuntimeConfig(BaseSettings):
    """Process-level runtime settings."""

    model_config = SettingsConfigDict(env_prefix="COLABEL_")

    threads: int = Field(
        default=1,
        ge=1,
        le=256,
        description="Maximum number of parallel runs or member trainings"
    )
    output_root: str = Field(
        default="runs",
        description="Default output root when --out is not given"
    )


class AppConfig(BaseSettings):
    """Main application configuration."""

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    debug: bool = Field(
        default=False,
        description="Enable debug mode"
    )

    # Sub-configurations
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)


def load_config() -> AppConfig:
    """
    Load and validate application configuration.

    This function loads configuration from environment variables and .env files,
    validates all settings, and returns a fully configured AppConfig instance.

    Returns:
        AppConfig: Validated application configuration

    Raises:
        ConfigurationError: If configuration is invalid

    Example:
        ```python
        config = load_config()
        print(f"Parallel runs capped at: {config.runtime.threads}")
        ```
    """
    env_file = Path(".env")
    if env_file.exists():
        from dotenv import load_dotenv
        load_dotenv(env_file)

    try:
        return AppConfig(runtime=RuntimeConfig(), logging=LoggingConfig())
    except ValidationError as e:
        raise ConfigurationError(
            "Invalid runtime configuration",
            original_error=e,
        ) from e


def load_json_config(path: str | Path, model: Type[ModelT]) -> ModelT:
    """
    Read a JSON stage configuration and validate it against ``model``.

    Args:
        path: Path to the JSON document
        model: Pydantic model class describing the document

    Returns:
        The validated model instance

    Raises:
        ConfigurationError: If the file is missing, is not JSON, or fails validation
    """
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigurationError(
            "Configuration file not found",
            context={"path": str(config_path)},
        )
    try:
        payload = json.loads(config_path.read_text(encoding="utf-8"))
        return model.model_validate(payload)
    except (json.JSONDecodeError, ValidationError) as e:
        raise ConfigurationError(
            f"Invalid {model.__name__} configuration",
            context={"path": str(config_path)},
            original_error=e,
        ) from e
