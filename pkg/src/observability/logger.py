"""
Structured logging for ContrastGuard.

structlog on stderr, so the CLI can print machine-readable results on
stdout. Attacks, detection sampling and recovery fan out over worker
threads; every event carries the thread name. Numpy scalars and small
arrays in event values are converted to plain Python before rendering.
"""

import logging
import sys
from typing import Any

import numpy as np
import structlog
from structlog.typing import EventDict, Processor, WrappedLogger

from src.config import settings

# arrays longer than this are summarized by shape instead of listed
MAX_LOGGED_ELEMENTS = 16


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        if value.size <= MAX_LOGGED_ELEMENTS:
            return value.tolist()
        return f"ndarray{value.shape}"
    return value


def numpy_to_python(_: WrappedLogger, __: str, event_dict: EventDict) -> EventDict:
    """structlog processor: numpy values become JSON-friendly Python values."""
    return {key: _plain(value) for key, value in event_dict.items()}


def setup_logging(level: str | None = None) -> None:
    """
    Configure structlog for the process.

    JSON lines when app_env is production, a console renderer otherwise
    (colored only on a terminal). `level` overrides settings.log_level; the
    CLI passes --log-level here. The last call wins.
    """
    log_level = getattr(logging, (level or settings.log_level).upper(), logging.INFO)
    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=log_level, force=True)

    processors: list[Processor] = [
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.CallsiteParameterAdder([structlog.processors.CallsiteParameter.THREAD_NAME]),
        numpy_to_python,
    ]
    if settings.is_production:
        processors += [
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer(sort_keys=True),
        ]
    else:
        processors.append(structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty()))

    structlog.configure(
        processors=processors,
        wrapper_class=structlog.make_filtering_bound_logger(log_level),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def get_logger(name: str | None = None, **initial_context: Any) -> structlog.BoundLogger:
    """
    Logger bound to `initial_context`.

    The returned proxy resolves the configuration on each call, so module
    level loggers created before setup_logging still write to stderr.

    Example:
        logger = get_logger(__name__, component="detector")
        logger.info("Reference built", l_c=1.93, sigma_c=0.04)
    """
    return structlog.get_logger(name, **initial_context)


class LogContext:
    """
    Bind keys for the duration of a block, restoring any outer values on exit.

    Contexts nest: the harness binds attack=<run name> and the attack itself
    binds attack=<kind>; the run name is back in place once the attack returns.
    Worker threads start with an empty context.

    Example:
        with LogContext(attack="pbs", layer="encoder.conv2"):
            logger.info("Committed flip")
    """

    def __init__(self, **context: Any) -> None:
        self.context = context
        self._tokens: dict[str, Any] = {}

    def __enter__(self) -> "LogContext":
        self._tokens = structlog.contextvars.bind_contextvars(**self.context)
        return self

    def __exit__(self, *args: Any) -> None:
        structlog.contextvars.reset_contextvars(**self._tokens)
        self._tokens = {}
