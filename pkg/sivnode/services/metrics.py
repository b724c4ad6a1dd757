"""
Per-run bookkeeping: time spent simulating and writing output, shots drawn
and result-cache traffic. The current run lives in a ContextVar so API
requests and CLI runs never share counters; finished runs are folded into
`aggregate_metrics`.
"""

import logging
import time
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, fields
from typing import Iterator, Literal, Optional

from sivnode.services.prometheus_metrics import record_io_duration, record_simulation_duration

logger = logging.getLogger(__name__)

Phase = Literal["simulate", "io"]

_current_run: ContextVar[Optional["RunMetrics"]] = ContextVar("sivnode_run", default=None)
_observers = {"simulate": record_simulation_duration, "io": record_io_duration}


@dataclass
class RunMetrics:
    simulate_ms: float = 0.0
    io_ms: float = 0.0
    shots: int = 0
    cache_hits: int = 0
    cache_misses: int = 0

    def add(self, other: "RunMetrics") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["simulate_ms"] = round(self.simulate_ms, 2)
        out["io_ms"] = round(self.io_ms, 2)
        return out


def start_run_metrics() -> RunMetrics:
    run = RunMetrics()
    _current_run.set(run)
    return run


def current_metrics() -> Optional[RunMetrics]:
    return _current_run.get()


def _bump(name: str, amount: float) -> None:
    run = _current_run.get()
    if run is not None:
        setattr(run, name, getattr(run, name) + amount)


def record_phase(phase: Phase, elapsed_ms: float) -> None:
    """Charge elapsed_ms to the current run and observe it in Prometheus."""
    _bump(f"{phase}_ms", elapsed_ms)
    _observers[phase](elapsed_ms / 1000.0)


def record_shots(shots: int) -> None:
    _bump("shots", shots)


def record_cache_hit() -> None:
    _bump("cache_hits", 1)


def record_cache_miss() -> None:
    _bump("cache_misses", 1)


@contextmanager
def timed(phase: Phase) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    finally:
        record_phase(phase, (time.perf_counter() - start) * 1000)


def timed_simulation():
    return timed("simulate")


def timed_io():
    return timed("io")


class AggregateMetrics:
    """Totals over finished runs, served by /api/metrics."""

    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.run_count = 0
        self.totals = RunMetrics()

    def record(self, run: RunMetrics) -> None:
        self.run_count += 1
        self.totals.add(run)
        logger.debug("Run folded into totals: %s", run.to_dict())

    def to_dict(self) -> dict:
        t = self.totals
        lookups = t.cache_hits + t.cache_misses
        return {
            "runs": {
                "count": self.run_count,
                "simulate_total_ms": round(t.simulate_ms, 2),
                "simulate_avg_ms": round(t.simulate_ms / self.run_count, 2) if self.run_count else 0,
                "io_total_ms": round(t.io_ms, 2),
                "shots": t.shots,
            },
            "cache": {
                "hits": t.cache_hits,
                "misses": t.cache_misses,
                "hit_rate_percent": round(100 * t.cache_hits / lookups, 2) if lookups else 0,
            },
        }


aggregate_metrics = AggregateMetrics()
