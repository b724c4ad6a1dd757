"""
Tests for run-scoped metrics and their aggregation.
"""

import contextvars

import pytest

from sivnode.services.metrics import (
    RunMetrics,
    aggregate_metrics,
    current_metrics,
    record_cache_hit,
    record_cache_miss,
    record_phase,
    record_shots,
    start_run_metrics,
    timed_io,
    timed_simulation,
)


def test_phases_and_counters_charge_current_run():
    """Contract test: timers and counters land on the run started in this context"""

    def run():
        m = start_run_metrics()
        with timed_simulation():
            pass
        with timed_io():
            pass
        record_phase("simulate", 5.0)
        record_shots(40)
        record_cache_hit()
        record_cache_miss()
        record_cache_miss()
        return m

    m = contextvars.Context().run(run)
    assert m.simulate_ms >= 5.0
    assert m.io_ms >= 0.0
    assert (m.shots, m.cache_hits, m.cache_misses) == (40, 1, 2)


def test_counters_without_run_are_dropped():
    """Contract test: recording outside a run neither fails nor creates one"""

    def run():
        record_shots(10)
        record_cache_hit()
        return current_metrics()

    assert contextvars.Context().run(run) is None


def test_aggregate_folds_runs():
    """Oracle test: totals, averages and hit rate over two runs"""
    aggregate_metrics.record(RunMetrics(simulate_ms=10.0, shots=100, cache_hits=1))
    aggregate_metrics.record(RunMetrics(simulate_ms=30.0, io_ms=2.5, shots=50, cache_misses=3))
    data = aggregate_metrics.to_dict()
    assert data["runs"] == {
        "count": 2,
        "simulate_total_ms": 40.0,
        "simulate_avg_ms": 20.0,
        "io_total_ms": 2.5,
        "shots": 150,
    }
    assert data["cache"]["hit_rate_percent"] == pytest.approx(25.0)


def test_empty_aggregate_has_zero_rates():
    """Contract test: no runs means zero averages rather than division errors"""
    data = aggregate_metrics.to_dict()
    assert data["runs"]["simulate_avg_ms"] == 0
    assert data["cache"]["hit_rate_percent"] == 0
