"""
Spin-dependent reflection, transmission and scattering of the SiV-nanocavity
system.

Configuration values are plain frequencies in Hz (FWHM for κ and γ);
the amplitude formulas work in angular units, converted here at the module
boundary. Detunings are always formed relative to ω_c so the 406 THz carrier
never enters a resonance denominator.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Literal, Union

import numpy as np
from scipy.optimize import minimize_scalar

from sivnode.core.errors import InvalidStateError, NoContrastError
from sivnode.core.quantum import check_amplitude

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

SpinValue = Literal["down", "up"]
SpinState = tuple[str, str]  # (electron, nuclear)
ArrayLike = Union[float, np.ndarray]

SPIN_VALUES = ("down", "up")
SPIN_STATES: tuple[SpinState, ...] = (
    ("up", "up"),
    ("up", "down"),
    ("down", "up"),
    ("down", "down"),
)
SPECTRUM_HEADER = ("omega_hz", "re_r", "im_r", "re_t", "im_t", "re_s", "im_s")

READOUT_GRID_POINTS = 4001
READOUT_RESOLUTION_HZ = 1e6
NO_CONTRAST_TOL = 1e-12


@dataclass(frozen=True)
class CavityParams:
    """Cavity and emitter rates in Hz (FWHM)."""

    omega_c: float
    kappa_in: float
    kappa_tot: float
    g: float
    gamma: float

    def __post_init__(self) -> None:
        if not 0 < self.kappa_in <= self.kappa_tot:
            raise InvalidStateError("Require 0 < kappa_in <= kappa_tot")
        if self.g < 0:
            raise InvalidStateError("Coupling g must be non-negative")
        if self.gamma <= 0:
            raise InvalidStateError("Emitter linewidth gamma must be positive")

    @property
    def kappa_out(self) -> float:
        return self.kappa_tot - self.kappa_in


@dataclass(frozen=True)
class SpinLines:
    """Optical resonance frequency (Hz) for each (electron, nuclear) state."""

    omega_a: dict
    # strict=False admits coincident lines (used for degenerate-limit checks)
    strict: bool = field(default=True, compare=False)

    def __post_init__(self) -> None:
        keys = set(self.omega_a)
        if keys != set(SPIN_STATES):
            raise InvalidStateError(f"SpinLines needs exactly the four states {SPIN_STATES}")
        if self.strict and len(set(self.omega_a.values())) != 4:
            raise InvalidStateError("The four optical lines must be distinct")

    def __getitem__(self, spin: SpinState) -> float:
        return self.omega_a[spin]

    def electron_order_ok(self) -> bool:
        """True when both ↓e lines sit above both ↑e lines."""
        down = [self.omega_a[("down", n)] for n in SPIN_VALUES]
        up = [self.omega_a[("up", n)] for n in SPIN_VALUES]
        return min(down) > max(up)


@dataclass(frozen=True)
class CavitySystem:
    params: CavityParams
    lines: SpinLines

    @classmethod
    def from_detunings(
        cls,
        *,
        omega_c: float,
        g: float,
        kappa_in: float,
        kappa_tot: float,
        delta_a: float,
        delta_e: float,
        delta_n: float,
        gamma: float,
    ) -> "CavitySystem":
        """Lines at ω_c + Δ_a ± Δ_e/2 ± Δ_n/2 with ↓e above ↑e."""
        lines = {}
        for e in SPIN_VALUES:
            se = 0.5 if e == "down" else -0.5
            for n in SPIN_VALUES:
                sn = -0.5 if n == "down" else 0.5
                lines[(e, n)] = omega_c + delta_a + se * delta_e + sn * delta_n
        return cls(CavityParams(omega_c, kappa_in, kappa_tot, g, gamma), SpinLines(lines))

    def line_offset(self, spin: SpinState) -> float:
        return self.lines[spin] - self.params.omega_c

    def with_params(self, **changes: float) -> "CavitySystem":
        values = {**self.params.__dict__, **changes}
        return CavitySystem(CavityParams(**values), self.lines)

    def search_window(self, margin: float = 1.0e9) -> tuple[float, float]:
        """Frequency window (Hz) bracketing all four lines."""
        values = list(self.lines.omega_a.values())
        pad = margin + 10 * self.params.gamma
        return min(values) - pad, max(values) + pad


def _amplitudes(sys: CavitySystem, spin: SpinState, omega: ArrayLike):
    p = sys.params
    offset = np.asarray(omega, dtype=float) - p.omega_c
    dc = TWO_PI * offset
    da = TWO_PI * (offset - sys.line_offset(spin))
    k_in = TWO_PI * p.kappa_in
    k_tot = TWO_PI * p.kappa_tot
    k_out = TWO_PI * p.kappa_out
    g = TWO_PI * p.g
    gam = TWO_PI * p.gamma
    emitter = 1j * da + gam / 2
    denom = 1j * dc + k_tot / 2 + g**2 / emitter
    r = 1 - k_in / denom
    t = np.sqrt(k_in * k_out) / denom
    s = np.sqrt(k_in * gam) * g / ((1j * dc + k_tot / 2) * emitter + g**2)
    return r, t, s


def scatter_amplitudes(sys: CavitySystem, spin: SpinState, omega: float) -> tuple[complex, complex, complex]:
    """Complex (r, t, s) for one spin state at laser frequency omega (Hz)."""
    if not math.isfinite(omega):
        raise InvalidStateError("Laser frequency must be finite")
    r, t, s = _amplitudes(sys, spin, omega)
    return check_amplitude(r), check_amplitude(t), check_amplitude(s)


def reflection(sys: CavitySystem, spin: SpinState, omega: ArrayLike) -> np.ndarray:
    """Vectorised r(ω)."""
    return _amplitudes(sys, spin, omega)[0]


def port_amplitudes(sys: CavitySystem, spin: SpinState, omega: ArrayLike) -> np.ndarray:
    """Array of shape (3, ...) stacking r, t, s."""
    return np.stack(np.broadcast_arrays(*_amplitudes(sys, spin, omega)))


def cooperativity(params: CavityParams) -> float:
    return 4 * params.g**2 / (params.kappa_tot * params.gamma)


def contrast_spectrum(sys: CavitySystem, omegas: ArrayLike, nuclear: str) -> np.ndarray:
    """|R↓e − R↑e| with R = |r|² at fixed nuclear state."""
    r_down = np.abs(reflection(sys, ("down", nuclear), omegas)) ** 2
    r_up = np.abs(reflection(sys, ("up", nuclear), omegas)) ** 2
    return np.abs(r_down - r_up)


def contrast_table(sys: CavitySystem, omegas: np.ndarray) -> Iterator[tuple[float, float, float]]:
    """Rows (ω, contrast for ↓n, contrast for ↑n)."""
    c_down = contrast_spectrum(sys, omegas, "down")
    c_up = contrast_spectrum(sys, omegas, "up")
    for w, a, b in zip(omegas, c_down, c_up):
        yield float(w), float(a), float(b)


def resonant_readout_frequency(sys: CavitySystem, nuclear: str = "down") -> float:
    """Frequency of maximum reflection-intensity contrast, to 1 MHz."""
    lo, hi = sys.search_window()
    grid = np.linspace(lo, hi, READOUT_GRID_POINTS)
    contrast = contrast_spectrum(sys, grid, nuclear)
    best = int(np.argmax(contrast))
    if contrast[best] < NO_CONTRAST_TOL:
        raise NoContrastError("Electron-state reflection contrast vanishes in the search window")
    step = grid[1] - grid[0]
    centre = grid[best]
    # bounded search in units of the grid step around the coarse maximum
    result = minimize_scalar(
        lambda x: -float(contrast_spectrum(sys, centre + x * step, nuclear)),
        bounds=(-1.0 if best > 0 else 0.0, 1.0 if best < len(grid) - 1 else 0.0),
        method="bounded",
        options={"xatol": 1e-4},
    )
    omega = centre + result.x * step if -result.fun >= contrast[best] else centre
    omega = round(omega / READOUT_RESOLUTION_HZ) * READOUT_RESOLUTION_HZ
    logger.debug("Resonant readout frequency (nuclear %s): %.6e Hz", nuclear, omega)
    return float(omega)


def mean_reflectivity(sys: CavitySystem, omega: float, nuclear: str = "down") -> float:
    """Electron-state averaged |r|²."""
    return float(
        np.mean([abs(reflection(sys, (e, nuclear), omega)) ** 2 for e in SPIN_VALUES])
    )


def gate_contrast_fidelity(sys: CavitySystem, omega: float, nuclear: str = "down") -> float:
    """R_bright / (R_bright + R_dark): cavity-limited ZZ fidelity of a reflection gate."""
    rs = sorted(abs(reflection(sys, (e, nuclear), omega)) ** 2 for e in SPIN_VALUES)
    return float(rs[1] / (rs[0] + rs[1]))


def spectrum_table(sys: CavitySystem, spin: SpinState, omegas: np.ndarray) -> Iterator[tuple[float, ...]]:
    r, t, s = _amplitudes(sys, spin, omegas)
    for i, w in enumerate(np.asarray(omegas, dtype=float)):
        yield (float(w), r[i].real, r[i].imag, t[i].real, t[i].imag, s[i].real, s[i].imag)
