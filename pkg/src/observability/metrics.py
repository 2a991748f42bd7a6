"""
Metrics collection for ContrastGuard.

Records wall-clock durations per pipeline stage (training epochs, attacks,
reference building, detection, recovery). Stages run on worker threads, so
the collector is locked. The experiment harness writes the summary to
timing.json, apart from the deterministic artifacts.
"""

import threading
import time
from collections import defaultdict
from collections.abc import Generator
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any

from src.observability.logger import get_logger

logger = get_logger(__name__)


@dataclass
class StageMetrics:
    """Durations of every execution of one stage."""

    count: int = 0
    total_duration_ms: float = 0.0
    min_duration_ms: float = float("inf")
    max_duration_ms: float = 0.0
    errors: int = 0

    @property
    def avg_duration_ms(self) -> float:
        return self.total_duration_ms / self.count if self.count > 0 else 0.0

    def record(self, duration_ms: float, error: bool = False) -> None:
        self.count += 1
        self.total_duration_ms += duration_ms
        self.min_duration_ms = min(self.min_duration_ms, duration_ms)
        self.max_duration_ms = max(self.max_duration_ms, duration_ms)
        if error:
            self.errors += 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "count": self.count,
            "total_ms": round(self.total_duration_ms, 2),
            "avg_ms": round(self.avg_duration_ms, 2),
            "min_ms": round(self.min_duration_ms, 2) if self.count > 0 else 0,
            "max_ms": round(self.max_duration_ms, 2),
            "errors": self.errors,
        }


class MetricsTimer:
    """
    Context manager for timing operations.

    Example:
        with MetricsTimer() as timer:
            loss = contrastive_epoch(...)
        record = EpochRecord(epoch, loss, timer.duration_ms)
    """

    def __init__(self) -> None:
        self.start_time: float = 0
        self.end_time: float = 0

    @property
    def duration_ms(self) -> float:
        """Elapsed time; still running until the block exits."""
        end = self.end_time or time.perf_counter()
        return (end - self.start_time) * 1000

    def __enter__(self) -> "MetricsTimer":
        self.start_time = time.perf_counter()
        self.end_time = 0
        return self

    def __exit__(self, *args: Any) -> None:
        self.end_time = time.perf_counter()


@dataclass
class MetricsCollector:
    """
    Per-stage timings for one process or experiment run.

    Example:
        with metrics_collector.stage("attack.pbs"):
            report = pbs_attack(model, images, labels, cfg)
    """

    stages: dict[str, StageMetrics] = field(default_factory=lambda: defaultdict(StageMetrics))
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record_stage(self, stage: str, duration_ms: float, error: bool = False) -> None:
        with self._lock:
            self.stages[stage].record(duration_ms, error)
        logger.debug("Stage recorded", stage=stage, duration_ms=round(duration_ms, 2), error=error)

    @contextmanager
    def stage(self, name: str) -> Generator[MetricsTimer, None, None]:
        """Time a block and record it, counting an error if the block raises."""
        timer = MetricsTimer()
        failed = False
        try:
            with timer:
                yield timer
        except BaseException:
            failed = True
            raise
        finally:
            self.record_stage(name, timer.duration_ms, error=failed)

    def get_summary(self) -> dict[str, Any]:
        """Stage name -> aggregate timings, sorted by stage name."""
        with self._lock:
            return {name: m.to_dict() for name, m in sorted(self.stages.items())}

    def reset(self) -> None:
        with self._lock:
            self.stages.clear()


# Global metrics collector instance
metrics_collector = MetricsCollector()
