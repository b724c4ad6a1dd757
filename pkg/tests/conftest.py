"""
Test fixtures for the SiV network-node simulator.
Uses FastAPI dependency overrides for testable, isolated components.
"""

import os

import pytest
from fastapi.testclient import TestClient

# Disable Redis cache during tests (no Redis required)
os.environ.setdefault("REDIS_URL", "")

from sivnode.core.dependencies import (  # noqa: E402
    create_experiment_runner,
    get_config,
    get_experiment_runner,
    get_noop_cache,
)
from sivnode.main import app  # noqa: E402
from sivnode.models import ExperimentConfig  # noqa: E402
from sivnode.services.metrics import aggregate_metrics  # noqa: E402


@pytest.fixture
def config():
    """Schema-default ExperimentConfig (same values as default-config.json)."""
    return ExperimentConfig()


@pytest.fixture
def cavity_system(config):
    """Cavity + four spin lines of the measured device."""
    return config.cavity.to_system()


@pytest.fixture
def register_params(config):
    """Electron + nuclear register with the measured transition frequencies."""
    return config.register.to_params()


@pytest.fixture
def runner():
    """ExperimentService with the no-op cache."""
    return create_experiment_runner(get_noop_cache())


@pytest.fixture
def client(config, runner):
    """Test client with dependency overrides for config and experiment runner."""
    def get_test_config():
        return config

    def get_test_runner():
        return runner

    app.dependency_overrides[get_config] = get_test_config
    app.dependency_overrides[get_experiment_runner] = get_test_runner

    try:
        yield TestClient(app)
    finally:
        app.dependency_overrides.clear()


@pytest.fixture(autouse=True)
def reset_aggregate_metrics():
    """Reset aggregate metrics before each test for consistent assertions."""
    aggregate_metrics.reset()
    yield
