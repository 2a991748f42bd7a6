"""
OpenTelemetry tracing configuration for ContrastGuard.

Spans wrap training phases, attacks, reference building, detection and
recovery. Console spans go to stderr with the logs; stdout carries only
command results. When tracing is disabled the global no-op tracer is used,
so trace_operation is always safe to call.
"""

import sys
from collections.abc import Generator, Mapping
from contextlib import contextmanager
from typing import Any

from opentelemetry import trace
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter, SpanExporter
from opentelemetry.trace import Span, Status, StatusCode, Tracer
from opentelemetry.util.types import AttributeValue

from src import __version__
from src.config import settings

_provider: TracerProvider | None = None


def _exporter() -> SpanExporter:
    if settings.otel_exporter_otlp_endpoint:
        try:
            from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter

            return OTLPSpanExporter(endpoint=settings.otel_exporter_otlp_endpoint)
        except ImportError:
            pass
    return ConsoleSpanExporter(out=sys.stderr)


def setup_tracing() -> None:
    """
    Configure OpenTelemetry tracing once per process.

    Uses the OTLP exporter when an endpoint is configured, the console
    exporter on stderr otherwise. Does nothing unless enable_tracing is set.
    """
    global _provider

    if not settings.enable_tracing or _provider is not None:
        return

    resource = Resource.create({
        "service.name": settings.otel_service_name,
        "service.version": __version__,
        "deployment.environment": settings.app_env,
    })
    _provider = TracerProvider(resource=resource)
    _provider.add_span_processor(BatchSpanProcessor(_exporter()))
    trace.set_tracer_provider(_provider)


def shutdown_tracing() -> None:
    """Flush pending spans; the CLI calls this before exiting."""
    if _provider is not None:
        _provider.force_flush()


def get_tracer(name: str = __name__) -> Tracer:
    return trace.get_tracer(name)


def span_attribute(value: Any) -> AttributeValue:
    """Scalars keep their type; anything else is recorded as its string form."""
    if isinstance(value, bool | int | float | str):
        return value
    return str(value)


@contextmanager
def trace_operation(
    name: str,
    attributes: Mapping[str, Any] | None = None,
) -> Generator[Span, None, None]:
    """
    Context manager for tracing operations.

    Args:
        name: Operation name for the span
        attributes: Optional attributes; None values are skipped

    Example:
        with trace_operation("attack.pbs", {"layers": 5}) as span:
            report = pbs_attack(model, images, labels, cfg)
            span.set_attribute("bits_flipped", report.bits_flipped)
    """
    with get_tracer().start_as_current_span(name) as span:
        for key, value in (attributes or {}).items():
            if value is not None:
                span.set_attribute(key, span_attribute(value))
        try:
            yield span
            span.set_status(Status(StatusCode.OK))
        except Exception as e:
            span.set_status(Status(StatusCode.ERROR, str(e)))
            span.record_exception(e)
            raise
