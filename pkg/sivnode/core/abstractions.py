"""
Abstractions for experiment execution and result caching.
Enables component swapping and testability via dependency injection.
"""

from typing import TYPE_CHECKING, Any, Optional, Protocol

if TYPE_CHECKING:
    from sivnode.models import ExperimentConfig
    from sivnode.services.experiments import ExperimentOutput, RunRequest


class CacheBackend(Protocol):
    """Abstract interface for result-cache operations (e.g. Redis)."""

    def is_available(self) -> bool:
        """True if cache is configured and reachable."""
        ...

    def get_result(
        self,
        subcommand: str,
        config_hash: str,
        seed: int,
        shots: Optional[int] = None,
        temperature: Optional[float] = None,
    ) -> Optional[dict[str, Any]]:
        """Get a cached experiment output. Returns None on miss."""
        ...

    def set_result(
        self,
        subcommand: str,
        config_hash: str,
        seed: int,
        shots: Optional[int],
        temperature: Optional[float],
        summary: dict[str, Any],
    ) -> None:
        """Store an experiment output in the cache."""
        ...


class ExperimentRunner(Protocol):
    """Abstract interface for running named experiments."""

    def names(self) -> list[str]:
        """Names of the available experiments."""
        ...

    def execute(
        self,
        name: str,
        config: "ExperimentConfig",
        request: "RunRequest",
        use_cache: bool = True,
    ) -> tuple["ExperimentOutput", bool]:
        """Run (or fetch from cache) one experiment. Returns (output, served_from_cache)."""
        ...
