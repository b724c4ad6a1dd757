"""
Prometheus metrics for simulation runs, shot throughput and result caching.
Exposed via /metrics endpoint for Prometheus scraping.
"""

from prometheus_client import Counter, Histogram

# Result cache (Redis)
cache_hits_total = Counter(
    "sivnode_cache_hits_total",
    "Total result-cache hits (Redis)",
    ["subcommand"],
)
cache_misses_total = Counter(
    "sivnode_cache_misses_total",
    "Total result-cache misses (Redis)",
    ["subcommand"],
)

# Runs by subcommand and outcome
runs_total = Counter(
    "sivnode_runs_total",
    "Experiment runs by subcommand and status",
    ["subcommand", "status"],  # ok / config_error / simulation_error
)

shots_total = Counter(
    "sivnode_shots_total",
    "Monte Carlo shots simulated",
    ["subcommand"],
)

# Durations (seconds); Monte Carlo runs range from milliseconds to minutes
simulation_duration_seconds = Histogram(
    "sivnode_simulation_duration_seconds",
    "Simulation wall time in seconds",
    buckets=(0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0),
)
io_duration_seconds = Histogram(
    "sivnode_io_duration_seconds",
    "Output writing time in seconds",
    buckets=(0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0),
)


def record_cache_hit(subcommand: str) -> None:
    cache_hits_total.labels(subcommand=subcommand).inc()


def record_cache_miss(subcommand: str) -> None:
    cache_misses_total.labels(subcommand=subcommand).inc()


def record_run(subcommand: str, status: str) -> None:
    """Record a finished run (status: ok, config_error, simulation_error)."""
    runs_total.labels(subcommand=subcommand, status=status).inc()


def record_shots(subcommand: str, shots: int) -> None:
    if shots > 0:
        shots_total.labels(subcommand=subcommand).inc(shots)


def record_simulation_duration(seconds: float) -> None:
    simulation_duration_seconds.observe(seconds)


def record_io_duration(seconds: float) -> None:
    io_duration_seconds.observe(seconds)
