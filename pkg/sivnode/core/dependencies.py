"""
FastAPI dependency injection providers.
Use Depends(get_experiment_runner), etc. in route handlers; the CLI calls
the same providers directly.
"""

from typing import Optional

from sivnode.core.abstractions import CacheBackend, ExperimentRunner
from sivnode.models import ExperimentConfig
from sivnode.services.cache import NoOpCacheBackend, RedisCacheBackend
from sivnode.services.experiments import ExperimentService
from sivnode.validation import load_config

# --- Singletons (lazy-initialized) ---

_config: Optional[ExperimentConfig] = None
_runner: Optional[ExperimentService] = None
_cache_backend: Optional[CacheBackend] = None


def get_config() -> ExperimentConfig:
    """Provide the base ExperimentConfig (SIVNODE_CONFIG or shipped defaults)."""
    global _config
    if _config is None:
        _config = load_config()
    return _config


def get_cache_backend() -> CacheBackend:
    """Provide CacheBackend. Used as Depends(get_cache_backend) or for runner construction."""
    global _cache_backend
    if _cache_backend is None:
        _cache_backend = RedisCacheBackend()
    return _cache_backend


def get_experiment_runner() -> ExperimentRunner:
    """Provide ExperimentRunner. Used as Depends(get_experiment_runner)."""
    global _runner
    if _runner is None:
        _runner = ExperimentService(cache=get_cache_backend())
    return _runner


def get_noop_cache() -> CacheBackend:
    """Provide NoOpCacheBackend for testing. Override get_cache_backend with this."""
    return NoOpCacheBackend()


# --- Factories for the CLI and test overrides ---


def create_fresh_config(overrides: Optional[dict] = None) -> ExperimentConfig:
    """Load a new config with optional overrides. Use in tests for clean state."""
    return load_config(overrides=overrides)


def create_experiment_runner(cache: Optional[CacheBackend] = None) -> ExperimentService:
    """Create ExperimentService with optional cache. Use in tests with custom cache."""
    return ExperimentService(cache=cache or NoOpCacheBackend())
