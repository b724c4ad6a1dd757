"""
Exception hierarchy for the simulator.
Routes and the CLI map these to HTTP status codes and exit codes.
"""

from typing import Optional


class SimulationError(Exception):
    """Base class for all simulator failures."""


class DimensionError(SimulationError):
    """Hilbert-space dimensions are inconsistent or exceed the configured maximum."""


class InvalidStateError(SimulationError):
    """A state, operator or channel violates its invariants."""


class ConfigError(SimulationError):
    """Experiment configuration failed schema validation."""

    def __init__(self, message: str, errors: Optional[list[dict]] = None) -> None:
        super().__init__(message)
        self.errors = errors or []


class NoContrastError(SimulationError):
    """Electron-state reflection contrast vanishes everywhere."""


class SequenceError(SimulationError):
    """Unknown gate or channel, or a pulse sequence breaks its timing rules."""


class HeraldError(SimulationError):
    """No run was heralded (or every heralded run was rejected)."""


class UnreachableTargetError(SimulationError):
    """Requested readout fidelity cannot be reached within the photon cap."""

    def __init__(self, message: str, max_fidelity: float) -> None:
        super().__init__(message)
        self.max_fidelity = max_fidelity


class FitError(SimulationError):
    """A curve fit did not converge or the data do not decay."""


class ShotsError(SimulationError, ValueError):
    """Shot count must be positive."""


class TemperatureError(SimulationError, ValueError):
    """Temperature must be positive."""
