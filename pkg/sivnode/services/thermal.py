"""
Temperature dependence of electron and nuclear relaxation/coherence.

Phonon processes follow Bose-Einstein occupations: a direct (single-phonon)
process at the qubit frequency and a two-phonon process through the upper
ground-state orbital at Δ_GS. The nucleus additionally sees a bath of
two-level fluctuators whose telegraph switching is driven by phonons at
their own transition frequencies; fast switching motionally averages the
noise, which makes the nuclear T2 rise before it falls.
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, curve_fit

from sivnode.core.errors import FitError, InvalidStateError, ShotsError, TemperatureError
from sivnode.core.seeding import chunk_rngs, chunk_sizes

logger = logging.getLogger(__name__)

H_OVER_K = 4.799243e-11  # K·s
TWO_PI = 2.0 * math.pi
GHZ = 1e9
E_FOLD = math.exp(-1.0)
CHUNK_SHOTS = 1000
# Above this many expected switches per sequence the telegraph noise is Gaussian
GAUSSIAN_SWITCHES = 2000.0
BOSE_EXP_CUTOFF = 700.0

THERMAL_HEADER = ("temperature_k", "t2_e_s", "t2_n_s")
T2_VS_N_HEADER = ("n_pulses", "t2_s")
T1_HEADER = ("temperature_k", "delta_gs_hz", "t1_norm_inverse")
T1_SPLITTINGS = (50e9, 150e9, 300e9, 416e9, 554e9)


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise TemperatureError(f"Temperature must be positive, got {temperature}")


def bose(frequency: float, temperature: float) -> float:
    """Mean phonon occupation n̄ = 1/(exp(hν/kT) − 1)."""
    _check_temperature(temperature)
    x = H_OVER_K * frequency / temperature
    if x > BOSE_EXP_CUTOFF:
        return math.exp(-x)
    return 1.0 / math.expm1(x)


@dataclass(frozen=True)
class PhononParams:
    """
    Phonon-coupling constants. Rates are in s⁻¹; prefactor_1ph multiplies
    (ω_qubit / 1 GHz)³.
    """

    delta_gs: float = 554e9
    omega_qubit: float = 12e9
    prefactor_1ph: float = 1.982982e-4
    prefactor_2ph: float = 1.202661e9
    orbach_prefactor: float = 2.596589e4
    t_noise_bath: float = 78.0e-6
    t2_c13: float = 0.5
    t1_coupling: float = 3.74

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            if not getattr(self, name) > 0:
                raise InvalidStateError(f"Phonon parameter {name} must be positive")
        if self.delta_gs <= self.omega_qubit:
            raise InvalidStateError("delta_gs must exceed omega_qubit")

    def with_delta_gs(self, delta_gs: float) -> "PhononParams":
        return replace(self, delta_gs=float(delta_gs))


@dataclass(frozen=True)
class Fluctuator:
    """Two-level fluctuator: phonon-addressable transition (Hz) and the shift (Hz) it puts on the nucleus."""

    omega: float
    coupling: float

    def __post_init__(self) -> None:
        if self.omega <= 0 or self.coupling < 0:
            raise InvalidStateError("Fluctuator needs omega > 0 and coupling >= 0")


@dataclass(frozen=True)
class FluctuatorBath:
    fluctuators: tuple[Fluctuator, ...] = (Fluctuator(26e9, 7.3), Fluctuator(34e9, 2.4))
    base_rate: float = 2.7e7

    def __post_init__(self) -> None:
        if self.base_rate < 0:
            raise InvalidStateError("base_rate must be non-negative")

    def switch_rate(self, fluctuator: Fluctuator, temperature: float) -> float:
        """Symmetric switching rate (per direction) at `temperature`."""
        return self.base_rate * bose(fluctuator.omega, temperature)

    def scaled(self, factor: float) -> "FluctuatorBath":
        return replace(
            self,
            fluctuators=tuple(Fluctuator(f.omega, f.coupling * factor) for f in self.fluctuators),
        )

    @classmethod
    def empty(cls) -> "FluctuatorBath":
        return cls(fluctuators=())


@dataclass(frozen=True)
class ThermalAnchors:
    """Measured coherence times at two temperatures used for calibration."""

    t_low: float = 0.1
    t_high: float = 4.3
    t1e: tuple[float, float] = (2.9, 17e-3)
    t2e: tuple[float, float] = (78e-6, 400e-9)
    t2n: tuple[float, float] = (79e-3, 4.5e-3)


# --- phonon rates -----------------------------------------------------------


def single_phonon_rate(temperature: float, params: PhononParams) -> float:
    """Direct process at the qubit frequency, symmetrized emission + absorption."""
    n = bose(params.omega_qubit, temperature)
    return params.prefactor_1ph * (params.omega_qubit / GHZ) ** 3 * (2 * n + 1)


def two_phonon_rate(temperature: float, params: PhononParams) -> float:
    return params.prefactor_2ph * bose(params.delta_gs, temperature)


def electron_t1_rate(temperature: float, params: PhononParams) -> float:
    return single_phonon_rate(temperature, params) + params.orbach_prefactor * bose(params.delta_gs, temperature)


def electron_t1(temperature: float, params: PhononParams) -> float:
    return 1.0 / electron_t1_rate(temperature, params)


def electron_t2(temperature: float, params: PhononParams) -> float:
    """Echo T2 of the electron: noise bath, thermal direct process and two-phonon dephasing."""
    n_q = bose(params.omega_qubit, temperature)
    direct = params.prefactor_1ph * (params.omega_qubit / GHZ) ** 3 * 2 * n_q
    return 1.0 / (1.0 / params.t_noise_bath + direct + two_phonon_rate(temperature, params))


def calibrate_electron(params: PhononParams, anchors: ThermalAnchors = ThermalAnchors()) -> PhononParams:
    """Solve the T1 and T2 anchor equations exactly for the four electron constants."""
    temps = (anchors.t_low, anchors.t_high)
    w3 = (params.omega_qubit / GHZ) ** 3
    n_q = [bose(params.omega_qubit, t) for t in temps]
    n_gs = [bose(params.delta_gs, t) for t in temps]

    t1_matrix = np.array([[w3 * (2 * n + 1), g] for n, g in zip(n_q, n_gs)])
    p1, orbach = np.linalg.solve(t1_matrix, 1.0 / np.asarray(anchors.t1e))

    direct = [p1 * w3 * 2 * n for n in n_q]
    t2_matrix = np.array([[1.0, g] for g in n_gs])
    rhs = 1.0 / np.asarray(anchors.t2e) - np.asarray(direct)
    noise_rate, p2 = np.linalg.solve(t2_matrix, rhs)
    if min(p1, orbach, noise_rate, p2) <= 0:
        raise InvalidStateError("Electron anchors imply a non-positive rate constant")
    logger.debug("Electron calibration: p1=%.6e a2=%.6e p2=%.6e t_noise=%.6e", p1, orbach, p2, 1 / noise_rate)
    return replace(
        params,
        prefactor_1ph=float(p1),
        orbach_prefactor=float(orbach),
        prefactor_2ph=float(p2),
        t_noise_bath=float(1.0 / noise_rate),
    )


def crossover_temperature(params: PhononParams) -> float:
    """Temperature where two-phonon dephasing overtakes the direct process."""

    def gap(log_t: float) -> float:
        t = math.exp(log_t)
        two = two_phonon_rate(t, params)
        return math.log(max(two, 1e-300)) - math.log(single_phonon_rate(t, params))

    return float(math.exp(brentq(gap, math.log(0.02), math.log(50.0), xtol=1e-12)))


def t1_curves(
    params: PhononParams,
    splittings: Sequence[float] = T1_SPLITTINGS,
    t_grid: Sequence[float] = tuple(np.linspace(0.1, 5.0, 50)),
    reference_temperature: float = 0.1,
) -> list[tuple[float, float, float]]:
    """Rows (T, Δ_GS, T1(T_ref)/T1(T)) for each splitting."""
    for t in t_grid:
        if not 0.1 - 1e-12 <= t <= 5.0 + 1e-12:
            raise TemperatureError(f"T1 curves are defined on [0.1, 5] K, got {t}")
    rows = []
    for delta in splittings:
        p = params.with_delta_gs(delta)
        reference = electron_t1_rate(reference_temperature, p)
        rows.extend((float(t), float(delta), electron_t1_rate(t, p) / reference) for t in t_grid)
    return rows


# --- telegraph noise ---------------------------------------------------------


@dataclass(frozen=True)
class DecouplingSequence:
    """n_pulses instantaneous π pulses at (j − ½)·total_time/n_pulses."""

    n_pulses: int
    total_time: float

    def __post_init__(self) -> None:
        if self.n_pulses < 1 or self.total_time <= 0:
            raise InvalidStateError("Need at least one pulse and a positive duration")

    @classmethod
    def hahn(cls, total_time: float) -> "DecouplingSequence":
        return cls(1, total_time)

    @classmethod
    def xy8(cls, n_pulses: int, tau: float) -> "DecouplingSequence":
        if n_pulses % 8:
            raise InvalidStateError("XY8 needs a multiple of 8 pulses")
        return cls(n_pulses, n_pulses * tau)

    def with_time(self, total_time: float) -> "DecouplingSequence":
        return replace(self, total_time=float(total_time))

    def breakpoints(self) -> np.ndarray:
        pulses = (np.arange(1, self.n_pulses + 1) - 0.5) * self.total_time / self.n_pulses
        return np.concatenate([[0.0], pulses, [self.total_time]])

    def toggling_integral(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints and the antiderivative of the ±1 toggling function at them."""
        bp = self.breakpoints()
        slopes = (-1.0) ** np.arange(bp.size - 1)
        return bp, np.concatenate([[0.0], np.cumsum(slopes * np.diff(bp))])


class TelegraphEnsemble:
    """
    Unit-rate switching trajectories shared across couplings and rates.

    Arrivals are drawn switch by switch for all trajectories of a chunk, so
    extending the horizon never changes the switches already drawn.
    """

    def __init__(self, shots: int, seed: Optional[int], tag: str) -> None:
        if shots <= 0:
            raise ShotsError("shots must be positive")
        self._sizes = chunk_sizes(shots, CHUNK_SHOTS)
        self._rngs = chunk_rngs(seed, tag, len(self._sizes))
        self.signs = np.concatenate(
            [rng.choice(np.array([-1.0, 1.0]), size) for rng, size in zip(self._rngs, self._sizes)]
        )
        self._arrivals = np.zeros((shots, 0))

    @property
    def shots(self) -> int:
        return int(self.signs.size)

    def arrivals(self, horizon: float) -> np.ndarray:
        """Cumulative unit-rate switch times covering [0, horizon] for every trajectory."""
        while self._arrivals.shape[1] == 0 or self._arrivals[:, -1].min() < horizon:
            covered = self._arrivals[:, -1].min() if self._arrivals.shape[1] else 0.0
            block = int(1.2 * (horizon - covered) + 8 * math.sqrt(max(horizon, 1.0)) + 16)
            draws = np.concatenate(
                [rng.standard_exponential((block, size)).T for rng, size in zip(self._rngs, self._sizes)]
            )
            start = self._arrivals[:, -1:] if self._arrivals.shape[1] else np.zeros((self.shots, 1))
            self._arrivals = np.hstack([self._arrivals, start + np.cumsum(draws, axis=1)])
        count = int((self._arrivals < horizon).sum(axis=1).max())
        return self._arrivals[:, :count]


@lru_cache(maxsize=16)
def _ensemble(tag: str, shots: int, seed: Optional[int]) -> TelegraphEnsemble:
    return TelegraphEnsemble(shots, seed, tag)


def _mc_samples(
    ensemble: TelegraphEnsemble, coupling: float, rate: float, seq: DecouplingSequence
) -> np.ndarray:
    """cos of the accumulated toggled phase for each trajectory."""
    t = seq.total_time
    bp, g = seq.toggling_integral()
    if rate > 0:
        times = np.minimum(ensemble.arrivals(rate * t) / rate, t)
    else:
        times = np.zeros((ensemble.shots, 0))
    inner = np.interp(times, bp, g)
    g_all = np.hstack([np.zeros((ensemble.shots, 1)), inner, np.full((ensemble.shots, 1), g[-1])])
    alternating = (-1.0) ** np.arange(g_all.shape[1] - 1)
    phase = TWO_PI * coupling * ensemble.signs * (np.diff(g_all, axis=1) @ alternating)
    return np.cos(phase)


def gaussian_coherence(coupling: float, rate: float, seq: DecouplingSequence) -> float:
    """exp(−⟨φ²⟩/2) for telegraph noise with correlation exp(−2k|τ|)."""
    if coupling == 0:
        return 1.0
    lam = 2.0 * rate
    v = TWO_PI * coupling
    bp = seq.breakpoints()
    d = np.diff(bp)
    s = (-1.0) ** np.arange(d.size)
    a = -np.expm1(-lam * d)
    diag = 2.0 / lam**2 * (lam * d - a)
    gap = bp[:-1][None, :] - bp[1:][:, None]
    upper = np.triu(np.ones((d.size, d.size), dtype=bool), k=1)
    cross = np.where(upper, np.outer(a, a) * np.exp(-lam * np.where(upper, gap, 0.0)), 0.0) / lam**2
    var = v**2 * (np.sum(s**2 * diag) + 2.0 * s @ cross @ s)
    return float(math.exp(-var / 2.0))


def _use_gaussian(coupling: float, rate: float, total_time: float) -> bool:
    return rate * total_time > GAUSSIAN_SWITCHES and TWO_PI * coupling < 0.2 * rate


def _tag(fluctuator: Fluctuator) -> str:
    return f"telegraph:{fluctuator.omega:.9e}"


def fluctuator_coherence(
    fluctuator: Fluctuator,
    rate: float,
    seq: DecouplingSequence,
    shots: int = 2000,
    seed: Optional[int] = None,
) -> float:
    """Coherence from one fluctuator; closed form when switching is fast and weak."""
    if fluctuator.coupling == 0:
        return 1.0
    if _use_gaussian(fluctuator.coupling, rate, seq.total_time):
        return gaussian_coherence(fluctuator.coupling, rate, seq)
    return float(np.mean(_mc_samples(_ensemble(_tag(fluctuator), shots, seed), fluctuator.coupling, rate, seq)))


def bath_coherence(
    bath: FluctuatorBath,
    temperature: float,
    seq: DecouplingSequence,
    shots: int = 2000,
    seed: Optional[int] = None,
) -> float:
    value = 1.0
    for f in bath.fluctuators:
        value *= fluctuator_coherence(f, bath.switch_rate(f, temperature), seq, shots, seed)
    return value


def motional_mc(
    bath: FluctuatorBath,
    temperature: float,
    sequence: DecouplingSequence,
    shots: int = 10_000,
    seed: Optional[int] = None,
) -> float:
    """Decoupled nuclear coherence in the fluctuator bath at `temperature`."""
    if shots < 1000:
        raise ShotsError("motional_mc needs at least 1000 trajectories")
    return bath_coherence(bath, temperature, sequence, shots, seed)


@dataclass(frozen=True)
class CoherenceEstimate:
    value: float
    stderr: float


def telegraph_coherence(
    coupling: float,
    rate: float,
    sequence: DecouplingSequence,
    shots: int = 10_000,
    seed: Optional[int] = None,
) -> CoherenceEstimate:
    """Plain telegraph Monte Carlo (no closed-form shortcut) with its standard error."""
    if rate < 0:
        raise InvalidStateError("Switching rate must be non-negative")
    ensemble = _ensemble("telegraph:direct", shots, seed)
    samples = _mc_samples(ensemble, coupling, rate, sequence)
    return CoherenceEstimate(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size)))


def _decay_time(coherence: Callable[[float], float], start: float = 1e-3, max_doublings: int = 80) -> float:
    """First 1/e crossing of a decaying coherence curve."""
    lo = start
    for _ in range(max_doublings):
        if coherence(lo) > E_FOLD:
            break
        lo /= 2.0
    else:
        raise FitError("Coherence is below 1/e at every probed time")
    hi = lo
    for _ in range(max_doublings):
        hi *= 2.0
        if coherence(hi) <= E_FOLD:
            break
        lo = hi
    else:
        raise FitError("Coherence does not decay to 1/e")
    return float(brentq(lambda t: coherence(t) - E_FOLD, lo, hi, xtol=1e-15, rtol=1e-14))


@lru_cache(maxsize=1024)
def _fluctuator_rate(fluctuator: Fluctuator, rate: float, shots: int, seed: Optional[int]) -> float:
    if fluctuator.coupling == 0:
        return 0.0
    seq = DecouplingSequence.hahn(1.0)
    t_e = _decay_time(lambda t: fluctuator_coherence(fluctuator, rate, seq.with_time(t), shots, seed))
    return 1.0 / t_e


def fluctuator_dephasing_rate(
    bath: FluctuatorBath,
    temperature: float,
    shots: int = 2000,
    seed: Optional[int] = None,
) -> float:
    """Sum over fluctuators of the inverse Hahn-echo 1/e time."""
    return sum(
        _fluctuator_rate(f, bath.switch_rate(f, temperature), shots, seed) for f in bath.fluctuators
    )


def nuclear_t2(
    temperature: float,
    params: PhononParams,
    bath: FluctuatorBath = FluctuatorBath(),
    shots: int = 2000,
    seed: Optional[int] = None,
) -> float:
    """Hahn-echo nuclear T2: electron T1 flips, ¹³C bath and fluctuator dephasing."""
    rate = (
        params.t1_coupling * electron_t1_rate(temperature, params)
        + 1.0 / params.t2_c13
        + fluctuator_dephasing_rate(bath, temperature, shots, seed)
    )
    return 1.0 / rate


def calibrate_nuclear(
    params: PhononParams,
    bath: FluctuatorBath = FluctuatorBath(),
    anchors: ThermalAnchors = ThermalAnchors(),
    shots: int = 2000,
    seed: Optional[int] = None,
    scale_bounds: tuple[float, float] = (1e-3, 1e3),
) -> tuple[PhononParams, FluctuatorBath]:
    """
    Fit the electron-T1 coupling and a common scale on the fluctuator
    couplings so both nuclear anchors are met.
    """
    t_lo, t_hi = anchors.t_low, anchors.t_high
    target_lo, target_hi = (1.0 / t for t in anchors.t2n)
    c13 = 1.0 / params.t2_c13
    g_lo = electron_t1_rate(t_lo, params)
    g_hi = electron_t1_rate(t_hi, params)

    def coupling_for(scale: float) -> float:
        return (target_hi - c13 - fluctuator_dephasing_rate(bath.scaled(scale), t_hi, shots, seed)) / g_hi

    def residual(scale: float) -> float:
        scaled = bath.scaled(scale)
        return coupling_for(scale) * g_lo + c13 + fluctuator_dephasing_rate(scaled, t_lo, shots, seed) - target_lo

    lo, hi = scale_bounds
    if not bath.fluctuators:
        raise InvalidStateError("Nuclear calibration needs at least one fluctuator")
    if residual(lo) >= 0 or residual(hi) <= 0:
        raise InvalidStateError("Nuclear anchors cannot be met by scaling the fluctuator couplings")
    scale = brentq(residual, lo, hi, xtol=1e-14, rtol=1e-14)
    c = coupling_for(scale)
    if c <= 0:
        raise InvalidStateError("Nuclear anchors imply a negative electron-T1 coupling")
    logger.debug("Nuclear calibration: coupling scale %.9f, T1 coupling %.6f", scale, c)
    return replace(params, t1_coupling=float(c)), bath.scaled(scale)


def thermal_curves(
    params: PhononParams,
    bath: FluctuatorBath,
    t_grid: Sequence[float],
    shots: int = 2000,
    seed: Optional[int] = None,
) -> Iterator[tuple[float, float, float]]:
    for t in t_grid:
        yield float(t), electron_t2(t, params), nuclear_t2(t, params, bath, shots, seed)


# --- T2 versus number of decoupling pulses ----------------------------------


@dataclass(frozen=True)
class T2Row:
    n_pulses: int
    t2: float
    beta: float
    flagged: bool = False


@dataclass(frozen=True)
class T2Table:
    rows: tuple[T2Row, ...]
    alpha: float

    def csv_rows(self) -> list[tuple]:
        return [(r.n_pulses, r.t2) for r in self.rows]


def _stretched(t: np.ndarray, t2: float, beta: float) -> np.ndarray:
    return np.exp(-((t / t2) ** beta))


def t2_vs_n(
    bath: FluctuatorBath,
    temperature: float,
    n_list: Sequence[int] = (8, 64, 256, 1024),
    shots: int = 2000,
    seed: Optional[int] = None,
    grid_points: int = 12,
) -> T2Table:
    """Fit exp[−(t/T2)^β] per pulse count and the power law T2 ∝ n^α."""
    if any(n <= 0 or n % 8 for n in n_list):
        raise InvalidStateError("Pulse counts must be positive multiples of 8")
    rows = []
    for n in n_list:
        seq = DecouplingSequence(int(n), 1.0)

        def coherence(t: float) -> float:
            return bath_coherence(bath, temperature, seq.with_time(t), shots, seed)

        try:
            t_e = _decay_time(coherence)
            times = t_e * np.linspace(0.25, 2.0, grid_points)
            values = np.array([coherence(t) for t in times])
            (t2, beta), _ = curve_fit(
                _stretched, times, values, p0=(t_e, 2.0),
                bounds=([t_e * 1e-3, 0.5], [t_e * 1e3, 4.0]),
            )
            rows.append(T2Row(int(n), float(t2), float(beta)))
        except (FitError, RuntimeError, ValueError) as e:
            logger.warning("T2 fit failed for n=%d: %s", n, e)
            rows.append(T2Row(int(n), math.nan, math.nan, flagged=True))
    good = [r for r in rows if not r.flagged]
    if len(good) >= 2:
        alpha = float(np.polyfit(np.log([r.n_pulses for r in good]), np.log([r.t2 for r in good]), 1)[0])
    else:
        alpha = math.nan
    logger.info("T2 vs n at %.3f K: alpha=%.3f", temperature, alpha)
    return T2Table(tuple(rows), alpha)
