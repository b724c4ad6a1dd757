"""
Nuclear decoherence caused by readout light.

With the electron frozen in one state, a coherent probe α leaves the cavity
through the reflection, transmission and scattering ports with amplitudes
C_n·α that depend on the nuclear state n. The nuclear coherence is the product
of the coherent-state overlaps ⟨C↑α|C↓α⟩ over the three ports.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Literal, Sequence

import numpy as np

from sivnode.core.errors import InvalidStateError
from sivnode.services.cavity import SPIN_VALUES, CavitySystem, port_amplitudes

logger = logging.getLogger(__name__)

PORTS = ("reflection", "transmission", "scattering")
COMPLETENESS_TOL = 1e-10
SWEEP_HEADER = ("omega_hz", "x1_re", "x2", "k_per_photon", "electron_state")
DURATION_HEADER = ("duration_s", "mode", "electron_state", "x", "infidelity")


@dataclass(frozen=True)
class ScatterSplit:
    """Per-port amplitudes for nuclear ↓ and ↑ with the electron fixed."""

    electron: str
    omega: float
    down: tuple  # (r, t, s)
    up: tuple

    def __post_init__(self) -> None:
        for amps in (self.down, self.up):
            total = sum(abs(c) ** 2 for c in amps)
            if abs(total - 1.0) > COMPLETENESS_TOL:
                raise InvalidStateError(f"Port probabilities sum to {total}, not 1")

    def differences(self) -> np.ndarray:
        return np.array(self.down) - np.array(self.up)


def scatter_split(sys: CavitySystem, electron: str, omega: float) -> ScatterSplit:
    if electron not in SPIN_VALUES:
        raise InvalidStateError(f"Unknown electron state {electron!r}")
    down = tuple(complex(c) for c in port_amplitudes(sys, (electron, "down"), omega))
    up = tuple(complex(c) for c in port_amplitudes(sys, (electron, "up"), omega))
    return ScatterSplit(electron, float(omega), down, up)


def _check_nbar(nbar: float) -> None:
    if not (nbar >= 0 and math.isfinite(nbar)):
        raise InvalidStateError("Mean photon number must be finite and >= 0")


def window_coherence(split: ScatterSplit, nbar: float, ports: Sequence[int] = (0, 1, 2)) -> complex:
    """Overlap product restricted to the given port indices."""
    total = 0.0 + 0.0j
    for i in ports:
        cd, cu = split.down[i], split.up[i]
        # ln⟨C↑α|C↓α⟩ = −½|C↓−C↑|²nbar + i·Im(C↑* C↓)·nbar
        total += nbar * complex(-0.5 * abs(cd - cu) ** 2, (cu.conjugate() * cd).imag)
    return complex(np.exp(total))


def single_window_coherence(sys: CavitySystem, electron: str, omega: float, nbar: float) -> complex:
    """ρ↓↑ after one probe window of mean photon number nbar (α = √nbar)."""
    _check_nbar(nbar)
    return window_coherence(scatter_split(sys, electron, omega), nbar)


def echo_coherence(sys: CavitySystem, electron: str, omega: float, nbar_per_window: float) -> float:
    """Two windows around a nuclear π pulse: the phase cancels, the loss doubles."""
    _check_nbar(nbar_per_window)
    k = decoherence_per_photon(sys, electron, omega)
    return float(math.exp(-k * nbar_per_window))


def decoherence_per_photon(sys: CavitySystem, electron: str, omega: float) -> float:
    """k in ρ₂ = exp(−k·nbar): Σ_ports |C↓ − C↑|²."""
    return float(np.sum(np.abs(scatter_split(sys, electron, omega).differences()) ** 2))


def mean_decoherence_per_photon(sys: CavitySystem, omega: float) -> float:
    """k averaged over the two electron states."""
    return float(np.mean([decoherence_per_photon(sys, e, omega) for e in SPIN_VALUES]))


def x_expectation(
    mode: Literal["asymmetric", "symmetric"],
    sys: CavitySystem,
    electron: str,
    omega: float,
    nbar: float,
) -> float:
    """⟨X⟩ of the nucleus: Re ρ₁ for a single window, ρ₂ for the echo."""
    if mode == "asymmetric":
        return single_window_coherence(sys, electron, omega, nbar).real
    if mode == "symmetric":
        return echo_coherence(sys, electron, omega, nbar)
    raise InvalidStateError(f"Unknown mode {mode!r}")


def duration_sweep(
    mode: Literal["asymmetric", "symmetric"],
    sys: CavitySystem,
    electron: str,
    omega: float,
    photon_rate: float,
    durations: Sequence[float],
) -> np.ndarray:
    """⟨X⟩ against laser duration at a fixed incident photon rate (1/s)."""
    return np.array([x_expectation(mode, sys, electron, omega, photon_rate * t) for t in durations])


def infidelity(coherence: float) -> float:
    return 0.5 * (1.0 - coherence)


def frequency_sweep(sys: CavitySystem, omegas: Sequence[float], nbar: float) -> Iterator[tuple]:
    """Rows of SWEEP_HEADER for both electron states."""
    for electron in SPIN_VALUES:
        for w in omegas:
            rho1 = single_window_coherence(sys, electron, float(w), nbar)
            k = decoherence_per_photon(sys, electron, float(w))
            yield float(w), rho1.real, math.exp(-k * nbar), k, electron


def brute_force_overlap(c_down: Sequence[complex], c_up: Sequence[complex], nbar: float, n_max: int = 120) -> complex:
    """Product over ports of Fock-basis sums Σ_n ⟨n|C↑α⟩* ⟨n|C↓α⟩."""
    alpha = math.sqrt(nbar)
    result = 1.0 + 0.0j
    for cd, cu in zip(c_down, c_up):
        bd, bu = cd * alpha, cu * alpha
        amp_d = math.exp(-0.5 * abs(bd) ** 2)
        amp_u = math.exp(-0.5 * abs(bu) ** 2)
        total = 0.0 + 0.0j
        a_d, a_u = complex(amp_d), complex(amp_u)
        for n in range(n_max):
            total += a_u.conjugate() * a_d
            a_d *= bd / math.sqrt(n + 1)
            a_u *= bu / math.sqrt(n + 1)
        result *= total
    return result
