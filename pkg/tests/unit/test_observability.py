"""
Unit Tests for Observability

Tests log context nesting, stage timings and spans.
"""

import pytest


class TestLogContext:
    """Tests for LogContext."""

    def test_nested_context_restores_outer_value(self):
        """Test an inner bind of the same key is undone on exit."""
        import structlog

        from src.observability.logger import LogContext

        with LogContext(attack="pbs_run", seed=3):
            with LogContext(attack="pbs"):
                assert structlog.contextvars.get_contextvars()["attack"] == "pbs"
            assert structlog.contextvars.get_contextvars() == {"attack": "pbs_run", "seed": 3}

        assert "attack" not in structlog.contextvars.get_contextvars()

    def test_context_cleared_on_error(self):
        import structlog

        from src.observability.logger import LogContext

        with pytest.raises(ValueError):
            with LogContext(recovery_phase="a"):
                raise ValueError("boom")

        assert "recovery_phase" not in structlog.contextvars.get_contextvars()


class TestMetrics:
    """Tests for MetricsCollector and MetricsTimer."""

    def test_summary(self):
        """Test per-stage aggregates and sorted stage names."""
        from src.observability.metrics import MetricsCollector

        collector = MetricsCollector()
        collector.record_stage("train.phase_a", 30.0)
        collector.record_stage("attack.pbs", 10.0)
        collector.record_stage("attack.pbs", 20.0, error=True)

        summary = collector.get_summary()
        assert list(summary) == ["attack.pbs", "train.phase_a"]
        assert summary["attack.pbs"]["count"] == 2
        assert summary["attack.pbs"]["avg_ms"] == 15.0
        assert summary["attack.pbs"]["min_ms"] == 10.0
        assert summary["attack.pbs"]["errors"] == 1

        collector.reset()
        assert collector.get_summary() == {}

    def test_stage_counts_failures(self):
        """Test a stage that raises is still recorded, as an error."""
        from src.observability.metrics import MetricsCollector

        collector = MetricsCollector()
        with collector.stage("detector.detect"):
            pass
        with pytest.raises(RuntimeError):
            with collector.stage("detector.detect"):
                raise RuntimeError("boom")

        summary = collector.get_summary()["detector.detect"]
        assert summary["count"] == 2
        assert summary["errors"] == 1

    def test_timer(self):
        """Test the duration is frozen once the block exits."""
        from src.observability.metrics import MetricsTimer

        with MetricsTimer() as timer:
            pass

        assert timer.duration_ms >= 0.0
        assert timer.duration_ms == timer.duration_ms


class TestTracing:
    """Tests for trace_operation."""

    def test_exception_propagates(self):
        """Test errors inside a span are re-raised."""
        from src.observability.tracer import trace_operation

        with pytest.raises(RuntimeError):
            with trace_operation("detect", {"delta": 0.1}):
                raise RuntimeError("failed")

    def test_span_attribute_types(self):
        """Test scalars keep their type and other values become strings."""
        from pathlib import Path

        from src.observability.tracer import span_attribute

        assert span_attribute(5) == 5
        assert span_attribute(True) is True
        assert span_attribute(0.25) == 0.25
        assert span_attribute(Path("runs")) == "runs"


class TestNumpyProcessor:
    """Tests for the numpy_to_python log processor."""

    def test_scalars_and_arrays(self):
        import numpy as np

        from src.observability.logger import MAX_LOGGED_ELEMENTS, numpy_to_python

        event = {
            "event": "Flip committed",
            "loss": np.float32(0.5),
            "index": np.int64(7),
            "bits": np.array([1, 2]),
            "weights": np.zeros((4, MAX_LOGGED_ELEMENTS)),
        }
        plain = numpy_to_python(None, "info", event)

        assert plain["loss"] == 0.5 and type(plain["loss"]) is float
        assert plain["index"] == 7 and type(plain["index"]) is int
        assert plain["bits"] == [1, 2]
        assert plain["weights"] == f"ndarray(4, {MAX_LOGGED_ELEMENTS})"
        assert plain["event"] == "Flip committed"
