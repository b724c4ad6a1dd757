"""
Probe-frequency optimization for nucleus-preserving electron readout.

The figure of merit is the ratio of two trace distances for a coherent probe
α: how well the reflected light tells the electron states apart (reflection
port only, the one we collect) against how much the light learns about the
nucleus through all three output ports.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from sivnode.core.errors import InvalidStateError, NoContrastError
from sivnode.services.backaction import mean_decoherence_per_photon, scatter_split
from sivnode.services.bayes_readout import NBAR_CAP, ArrivalModel, phase_photons_for_fidelity
from sivnode.services.cavity import (
    READOUT_GRID_POINTS,
    READOUT_RESOLUTION_HZ,
    SPIN_VALUES,
    CavitySystem,
    reflection,
)

logger = logging.getLogger(__name__)

RATIO_HEADER = ("omega_hz", "d_e", "d_n", "ratio")
GRID_SCAN_HEADER = ("g_hz", "kappa_in_hz", "omega_star_hz", "ratio", "n_readouts")
OPTIMIZER_GRID_POINTS = 10_000
# Returned when the probe leaves the nucleus untouched
READOUT_BUDGET_CAP = 1.0e9
FLAT_TOL = 1e-15


@dataclass(frozen=True)
class OptimizerConfig:
    system: CavitySystem
    alpha: float = 0.1
    freq_window: Optional[tuple[float, float]] = None
    target_readout_fidelity: float = 0.95
    nbar_cap: float = NBAR_CAP
    reference_ratio: float = 2.0
    reference_offset: float = 50e9
    grid_points: int = OPTIMIZER_GRID_POINTS
    shots: int = 4000
    beat_periods: int = 600

    def __post_init__(self) -> None:
        lo, hi = self.window
        if not hi > lo:
            raise InvalidStateError("Frequency window is empty")
        if not 0.5 < self.target_readout_fidelity < 1:
            raise InvalidStateError("target_readout_fidelity must be in (0.5, 1)")
        if self.alpha < 0 or self.reference_ratio <= 0:
            raise InvalidStateError("alpha must be >= 0 and reference_ratio > 0")

    @property
    def window(self) -> tuple[float, float]:
        return self.freq_window if self.freq_window is not None else self.system.search_window()


def electron_distance(sys: CavitySystem, omega: float, alpha: float) -> float:
    """√(1 − |⟨R↓α|R↑α⟩|²) on the reflected port, averaged over nuclear states."""
    values = []
    for n in SPIN_VALUES:
        rd = complex(reflection(sys, ("down", n), omega))
        ru = complex(reflection(sys, ("up", n), omega))
        values.append(math.sqrt(-math.expm1(-abs(rd - ru) ** 2 * alpha**2)))
    return float(np.mean(values))


def nuclear_distance(sys: CavitySystem, omega: float, alpha: float, ports: Sequence[int] = (0, 1, 2)) -> float:
    """√(1 − Π_ports |⟨C↓α|C↑α⟩|²), averaged over electron states."""
    values = []
    for e in SPIN_VALUES:
        diffs = scatter_split(sys, e, omega).differences()
        k = float(sum(abs(diffs[i]) ** 2 for i in ports))
        values.append(math.sqrt(-math.expm1(-k * alpha**2)))
    return float(np.mean(values))


def distance_ratio(sys: CavitySystem, omega: float, alpha: float) -> float:
    d_e = electron_distance(sys, omega, alpha)
    d_n = nuclear_distance(sys, omega, alpha)
    if d_n <= FLAT_TOL:
        return math.inf if d_e > FLAT_TOL else 0.0
    return d_e / d_n


def ratio_scan(sys: CavitySystem, omegas: Sequence[float], alpha: float) -> Iterator[tuple[float, float, float, float]]:
    for w in omegas:
        d_e = electron_distance(sys, float(w), alpha)
        d_n = nuclear_distance(sys, float(w), alpha)
        ratio = d_e / d_n if d_n > FLAT_TOL else math.inf
        yield float(w), d_e, d_n, ratio


@dataclass(frozen=True)
class FrequencyOptimum:
    omega_star: float
    ratio_star: float
    d_e: float
    d_n: float


def optimize_frequency(config: OptimizerConfig) -> FrequencyOptimum:
    """Coarse grid over the window, then a bounded search inside the best cell."""
    sys, alpha = config.system, config.alpha
    lo, hi = config.window
    grid = np.linspace(lo, hi, config.grid_points)
    d_e = np.array([electron_distance(sys, w, alpha) for w in grid])
    if d_e.max() <= FLAT_TOL:
        raise NoContrastError("Electron distance vanishes across the window: objective is flat")
    ratios = np.array([distance_ratio(sys, w, alpha) for w in grid])
    best = int(np.argmax(ratios))
    omega = float(grid[best])
    if math.isfinite(ratios[best]):
        step = grid[1] - grid[0]
        result = minimize_scalar(
            lambda x: -distance_ratio(sys, omega + x * step, alpha),
            bounds=(-1.0 if best > 0 else 0.0, 1.0 if best < grid.size - 1 else 0.0),
            method="bounded",
            options={"xatol": 1e-4},
        )
        if -result.fun > ratios[best]:
            omega = float(omega + result.x * step)
    optimum = FrequencyOptimum(
        omega,
        distance_ratio(sys, omega, alpha),
        electron_distance(sys, omega, alpha),
        nuclear_distance(sys, omega, alpha),
    )
    logger.info("Optimal probe at %.6e Hz (ratio %.4g)", optimum.omega_star, optimum.ratio_star)
    return optimum


# --- two-tone carrier for the phase readout --------------------------------


def sideband_merit(sys: CavitySystem, carrier: float, sideband_offset: float = 3.0e8) -> float:
    """Phase information per unit nuclear decoherence for sidebands at carrier ± offset."""
    sidebands = (carrier + sideband_offset, carrier - sideband_offset)
    k = float(np.mean([mean_decoherence_per_photon(sys, w) for w in sidebands]))
    if k <= 0:
        return math.inf
    information = 0.0
    intensity = 0.0
    for n in SPIN_VALUES:
        phases = []
        for e in SPIN_VALUES:
            rb, rr = (complex(reflection(sys, (e, n), w)) for w in sidebands)
            phases.append(np.angle(rb) - np.angle(rr))
            intensity += 0.25 * (abs(rb) ** 2 + abs(rr) ** 2)
        information += 1 - math.cos(phases[0] - phases[1])
    return information * (intensity / 2) / k


def optimize_sideband_carrier(
    sys: CavitySystem,
    sideband_offset: float = 3.0e8,
    window: Optional[tuple[float, float]] = None,
) -> float:
    """Carrier maximizing the sideband merit, to 1 MHz."""
    lo, hi = window if window is not None else sys.search_window()
    grid = np.linspace(lo, hi, READOUT_GRID_POINTS)
    merit = np.array([sideband_merit(sys, w, sideband_offset) for w in grid])
    best = int(np.argmax(merit))
    step = grid[1] - grid[0]
    result = minimize_scalar(
        lambda x: -sideband_merit(sys, grid[best] + x * step, sideband_offset),
        bounds=(-1.0 if best > 0 else 0.0, 1.0 if best < grid.size - 1 else 0.0),
        method="bounded",
        options={"xatol": 1e-4},
    )
    carrier = grid[best] + result.x * step if -result.fun >= merit[best] else grid[best]
    carrier = round(carrier / READOUT_RESOLUTION_HZ) * READOUT_RESOLUTION_HZ
    logger.debug("Sideband carrier %.6e Hz (merit %.4g)", carrier, merit[best])
    return float(carrier)


# --- readouts per nuclear lifetime at the optimum ---------------------------


def reference_beat_model(sys: CavitySystem, omega: float, config: OptimizerConfig, nuclear: str = "down") -> ArrivalModel:
    """
    Probe at ω beating against a reference tone on an ideal detector.
    Photon numbers are per probe photon; rescale with `with_nbar`.
    """
    omega_ref = omega + config.reference_offset
    rho = config.reference_ratio
    values = {}
    for e in SPIN_VALUES:
        rp = complex(reflection(sys, (e, nuclear), omega))
        rf = complex(reflection(sys, (e, nuclear), omega_ref))
        intensity = rho**2 * abs(rf) ** 2 + abs(rp) ** 2
        vis = 2 * rho * abs(rf) * abs(rp) / intensity if intensity > 0 else 0.0
        values[e] = (float(np.angle(rp) - np.angle(rf)), min(vis, 1.0), intensity)
    beat = abs(config.reference_offset)
    return ArrivalModel(
        beat_freq=beat,
        phase_down=values["down"][0],
        phase_up=values["up"][0],
        visibility_down=values["down"][1],
        visibility_up=values["up"][1],
        nbar_down=values["down"][2],
        nbar_up=values["up"][2],
        background_frac=0.0,
        window=config.beat_periods / beat,
        jitter=0.0,
        sidebands=(omega, omega_ref),
        detected_per_probe_photon=0.5 * (values["down"][2] + values["up"][2]),
    )


@dataclass(frozen=True)
class BudgetReport:
    omega_star: float
    detected_photons: float
    probe_photons: float
    reference_photons: float
    loss_per_probe_photon: float
    n_readouts: float

    @property
    def incident_photons(self) -> float:
        return self.probe_photons + self.reference_photons

    def to_dict(self) -> dict:
        return {**self.__dict__, "incident_photons": self.incident_photons}


def expected_readout_budget(
    config: OptimizerConfig,
    seed: Optional[int] = None,
    optimum: Optional[FrequencyOptimum] = None,
) -> BudgetReport:
    """Readouts at the target fidelity (no postselection) before the nucleus reaches 1/e."""
    sys = config.system
    optimum = optimum or optimize_frequency(config)
    omega = optimum.omega_star
    k_probe = mean_decoherence_per_photon(sys, omega)
    k_ref = mean_decoherence_per_photon(sys, omega + config.reference_offset)
    loss = k_probe + config.reference_ratio**2 * k_ref
    if loss <= FLAT_TOL:
        logger.warning("Probe leaves the nucleus untouched; readout budget capped")
        return BudgetReport(omega, math.nan, math.nan, math.nan, 0.0, READOUT_BUDGET_CAP)
    model = reference_beat_model(sys, omega, config)
    detected = phase_photons_for_fidelity(
        model, config.target_readout_fidelity, epsilon=0.5, shots=config.shots, seed=seed, cap=config.nbar_cap
    )
    probe = detected / model.detected_per_probe_photon
    reference = config.reference_ratio**2 * probe
    n_readouts = min(1.0 / (loss * probe), READOUT_BUDGET_CAP)
    report = BudgetReport(omega, detected, probe, reference, loss, n_readouts)
    logger.info("Readout budget at %.6e Hz: %.2f probe photons, %.1f readouts", omega, probe, n_readouts)
    return report


def parameter_grid_scan(
    config: OptimizerConfig,
    g_values: Sequence[float],
    kappa_in_values: Sequence[float],
    seed: Optional[int] = None,
) -> Iterator[tuple[float, float, float, float, float]]:
    """Readout budget over a grid of coupling and input-coupling rates."""
    for g in g_values:
        for kappa_in in kappa_in_values:
            sys = config.system.with_params(g=float(g), kappa_in=float(kappa_in))
            cfg = replace(config, system=sys, freq_window=None)
            try:
                optimum = optimize_frequency(cfg)
                budget = expected_readout_budget(cfg, seed, optimum)
                yield float(g), float(kappa_in), optimum.omega_star, optimum.ratio_star, budget.n_readouts
            except NoContrastError:
                logger.warning("No contrast at g=%.3g, kappa_in=%.3g", g, kappa_in)
                yield float(g), float(kappa_in), math.nan, math.nan, math.nan
