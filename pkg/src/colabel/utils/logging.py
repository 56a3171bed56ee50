"""
Logging setup for CoLabel.

Everything logs through structlog to stderr, so stdout stays free for the
console summaries printed by the CLI. Two formats are supported:

- ``text``: one ``[level] event (key=value, ...)`` line per event, meant for
  interactive runs; records from third-party stdlib loggers go through a
  rich handler.
- ``json``: one JSON object per line for batch runs and ablations. Stdlib
  records are rendered by the same processor chain so a log file stays
  parseable line by line.

Long steps (member training, integration of one kind, a training run) are
wrapped in ``log_operation_timing``. It binds ``operation`` and
``correlation_id`` as context variables, so every event logged inside the
step (epochs, k-means warnings, member weights) carries the same id.
"""

import logging
import sys
import time
import uuid
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional

import structlog
from rich.console import Console
from rich.logging import RichHandler

from colabel.config import LoggingConfig

# Keys left out of text lines; they are still present in JSON records.
_TEXT_HIDDEN_KEYS = frozenset({"timestamp", "filename", "lineno", "logger"})

_QUIET_LIBRARIES = ("PIL", "matplotlib", "sklearn")


def _shared_processors() -> List[Any]:
    return [
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.CallsiteParameterAdder(
            parameters=[
                structlog.processors.CallsiteParameter.FILENAME,
                structlog.processors.CallsiteParameter.LINENO,
            ]
        ),
    ]


def render_text_line(logger: Any, method_name: str, event_dict: Dict[str, Any]) -> str:
    """Render an event as ``[level] event (key=value, ...)``."""
    event = str(event_dict.pop("event", ""))
    level = event_dict.pop("level", method_name)
    fields = [f"{key}={value}" for key, value in event_dict.items() if key not in _TEXT_HIDDEN_KEYS]
    if fields:
        event = f"{event} ({', '.join(fields)})"
    return f"[{level}] {event}"


def setup_logging(config: LoggingConfig) -> None:
    """
    Configure structlog and the stdlib root logger from ``config``.

    Calling it again replaces the previous configuration, which the CLI and
    the tests rely on.

    Example:
        ```python
        from colabel.config import load_config
        from colabel.utils.logging import get_stage_logger, setup_logging

        setup_logging(load_config().logging)
        get_stage_logger("generate").info("Generated dataset", dataset="alpha", records=96)
        ```
    """
    level = getattr(logging, config.level)
    if config.format == "json":
        renderer: Any = structlog.processors.JSONRenderer(default=str)
    else:
        renderer = render_text_line

    root = logging.getLogger()
    root.handlers.clear()
    root.setLevel(level)
    root.addHandler(_stdlib_handler(config.format, renderer))

    structlog.configure(
        processors=[*_shared_processors(), renderer],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=structlog.WriteLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=True,
    )
    configure_external_loggers()


def _stdlib_handler(fmt: str, renderer: Any) -> logging.Handler:
    if fmt == "json":
        handler: logging.Handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(
            structlog.stdlib.ProcessorFormatter(
                processor=renderer,
                foreign_pre_chain=_shared_processors(),
            )
        )
        return handler
    return RichHandler(
        console=Console(stderr=True, width=120),
        show_path=False,
        markup=False,
        rich_tracebacks=True,
    )


def get_logger(name: Optional[str] = None) -> structlog.BoundLogger:
    """Return a structlog logger; pass ``__name__``."""
    if name is None:
        return structlog.get_logger()
    return structlog.get_logger(name)


def get_stage_logger(stage: str) -> structlog.BoundLogger:
    """Return a logger bound with ``stage=<stage>`` for pipeline stage code."""
    return get_logger(f"colabel.stage.{stage}").bind(stage=stage)


def log_error(error: Exception, context: Optional[Dict[str, Any]] = None) -> None:
    """
    Log ``error`` as one ``error`` record.

    For a ``ColabelError`` its own context is merged in first, then
    ``context``; keys from the caller win.
    """
    fields: Dict[str, Any] = dict(getattr(error, "context", None) or {})
    fields.update(context or {})
    original = getattr(error, "original_error", None)
    if original is not None:
        fields["cause"] = f"{type(original).__name__}: {original}"
    get_logger(__name__).error(
        "Exception occurred",
        error_type=type(error).__name__,
        error_message=getattr(error, "message", str(error)),
        **fields,
    )


def generate_correlation_id() -> str:
    return uuid.uuid4().hex[:8]


@contextmanager
def log_operation_timing(operation_name: str, **context: Any) -> Iterator[str]:
    """
    Time a step and log its start and its outcome.

    ``operation`` and ``correlation_id`` are bound as context variables for
    the duration of the block. Nested operations rebind them and restore
    the outer values on exit. Context variables do not cross into worker
    threads or processes; work submitted to a pool starts its own operation.

    Args:
        operation_name: Short name such as ``"member training"``
        **context: Extra fields for the start and finish records; pass
            ``correlation_id`` to reuse an existing id

    Yields:
        The correlation id
    """
    logger = get_logger(__name__)
    correlation_id = context.pop("correlation_id", None) or generate_correlation_id()

    with structlog.contextvars.bound_contextvars(operation=operation_name, correlation_id=correlation_id):
        logger.info(f"Starting {operation_name}", **context)
        started = time.perf_counter()
        try:
            yield correlation_id
        except Exception as e:
            logger.error(
                f"Failed {operation_name}",
                duration_ms=round((time.perf_counter() - started) * 1000, 2),
                status="error",
                error_type=type(e).__name__,
                error_message=str(e),
                **context,
            )
            raise
        logger.info(
            f"Completed {operation_name}",
            duration_ms=round((time.perf_counter() - started) * 1000, 2),
            status="success",
            **context,
        )


def configure_external_loggers() -> None:
    """Raise third-party loggers to WARNING."""
    for name in _QUIET_LIBRARIES:
        logging.getLogger(name).setLevel(logging.WARNING)
