"""
ContrastGuard - Observability

- Tracer: OpenTelemetry spans around pipeline stages
- Logger: structlog on stderr with nested context
- Metrics: Per-stage wall-clock timings for timing.json
"""

from src.observability.logger import LogContext, get_logger, setup_logging
from src.observability.metrics import MetricsCollector, MetricsTimer, metrics_collector
from src.observability.tracer import setup_tracing, shutdown_tracing, trace_operation

__all__ = [
    "setup_tracing",
    "shutdown_tracing",
    "trace_operation",
    "setup_logging",
    "get_logger",
    "LogContext",
    "MetricsCollector",
    "MetricsTimer",
    "metrics_collector",
]
