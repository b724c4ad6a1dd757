"""
Electron + ²⁹Si register: pulses, conditional gates, geometric phases and
decoupling sequences.

Basis ordering is nucleus ⊗ electron (index 2n + e, 0 = down, 1 = up). With
the optional ¹³C the register is ¹³C ⊗ nucleus ⊗ electron; the ¹³C only
shifts the electron transitions.

Each pulse acts on disjoint two-level transitions. Every transition is
propagated in its own rotating frame with the exact 2×2 Rabi solution, and
the frame phase φ + 2πδt keeps successive pulses phase-coherent.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Optional, Sequence

import numpy as np
from scipy.optimize import curve_fit

from sivnode.core.errors import FitError, InvalidStateError, SequenceError, ShotsError
from sivnode.core.quantum import DensityMatrix, UnitaryOperator, process_fidelity
from sivnode.core.seeding import derive_rng
from sivnode.services.noise import NoiseModel

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

Channel = Literal["MW", "RF", "WAIT"]
CHANNELS = ("MW", "RF", "WAIT")
GATE_NAMES = ("CnNOTe", "CnNOTe_bar", "CeNOTn", "CeNOTn_bar", "e_pi", "e_pi2", "n_pi", "n_pi2")
XY8_PHASES = (0.0, 0.5 * math.pi, 0.0, 0.5 * math.pi, 0.5 * math.pi, 0.0, 0.5 * math.pi, 0.0)
CONSISTENCY_TOL = 0.01
PERIOD_TOL = 1e-6
AREA_TOL = 0.01
BASIS_LABELS = ("dn_de", "dn_ue", "un_de", "un_ue")


@dataclass(frozen=True)
class C13Params:
    a_par: float = 3.2e6
    a_perp: float = 0.36e6
    rf_down: float = 1.041e6
    rf_up: float = 7.475e6
    rabi: float = 5.23e3


@dataclass(frozen=True)
class RegisterParams:
    """
    Drive frequencies and coherence times of the register (Hz, s).

    `rabi_e`, `rabi_n1`, `rabi_n2` hold the measured Rabi rates. In "formula"
    mode the rates actually used are synchronised to the hyperfine splitting
    so that the spectator transition completes whole cycles.
    """

    omega_mw1: float = 12.00746e9
    omega_mw2: float = 12.07384e9
    omega_rf1: float = 29.636e6
    omega_rf2: float = 36.614e6
    a_par: float = 66.25e6
    rabi_e: float = 16.7e6
    rabi_n1: float = 19.6e3
    rabi_n2: float = 24.2e3
    t1_e: float = 2.9
    t2_e_star: float = 5e-6
    t2_e_echo: float = 78e-6
    t1_n: Optional[float] = None
    t2_n_star: float = 5e-3
    t2_n_echo: float = 79e-3
    rabi_mode: Literal["formula", "table"] = "formula"
    cnot_m: int = 2
    c13: Optional[C13Params] = None

    def __post_init__(self) -> None:
        rates = (self.omega_mw1, self.omega_mw2, self.omega_rf1, self.omega_rf2, self.a_par,
                 self.rabi_e, self.rabi_n1, self.rabi_n2, self.t1_e, self.t2_e_star,
                 self.t2_e_echo, self.t2_n_star, self.t2_n_echo)
        if any(not (v > 0 and math.isfinite(v)) for v in rates):
            raise InvalidStateError("All register rates and times must be positive")
        if self.t1_n is not None and self.t1_n <= 0:
            raise InvalidStateError("t1_n must be positive when given")
        if abs((self.omega_rf1 + self.omega_rf2) - self.a_par) > CONSISTENCY_TOL * self.a_par:
            raise InvalidStateError("RF1 + RF2 must match A_par within 1%")
        if abs((self.omega_mw2 - self.omega_mw1) - self.a_par) > CONSISTENCY_TOL * self.a_par:
            raise InvalidStateError("MW2 - MW1 must match A_par within 1%")
        if self.rabi_mode not in ("formula", "table"):
            raise InvalidStateError(f"Unknown Rabi mode {self.rabi_mode!r}")
        if self.cnot_m < 1:
            raise InvalidStateError("cnot_m must be >= 1")

    @property
    def dim(self) -> int:
        return 8 if self.c13 is not None else 4

    @property
    def rf_splitting(self) -> float:
        return self.omega_rf2 - self.omega_rf1

    @property
    def mw_rabi(self) -> float:
        if self.rabi_mode == "table":
            return self.rabi_e
        return cnot_rabi(self.a_par, self.cnot_m)

    def rf_rabi(self, which: int) -> float:
        table = self.rabi_n1 if which == 1 else self.rabi_n2
        if self.rabi_mode == "table":
            return table
        return cnot_rabi(self.rf_splitting, closest_sync_order(self.rf_splitting, table))


@dataclass(frozen=True)
class Pulse:
    channel: str
    frequency: float = 0.0
    rabi: float = 0.0
    phase: float = 0.0
    duration: float = 0.0

    def __post_init__(self) -> None:
        if self.channel not in CHANNELS:
            raise SequenceError(f"Unknown channel {self.channel!r}")
        if not (self.duration >= 0 and math.isfinite(self.duration)):
            raise SequenceError("Pulse duration must be finite and >= 0")

    @classmethod
    def wait(cls, duration: float) -> "Pulse":
        return cls("WAIT", duration=duration)


@dataclass(frozen=True)
class PulseSequence:
    elements: tuple = ()
    # RF pulses of windowed (decoupled) sequences must span whole RF periods
    windowed: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "elements", tuple(self.elements))

    @property
    def duration(self) -> float:
        return float(sum(p.duration for p in self.elements))

    def __add__(self, other: "PulseSequence") -> "PulseSequence":
        return PulseSequence(self.elements + other.elements, self.windowed or other.windowed)

    def __len__(self) -> int:
        return len(self.elements)


def cnot_rabi(a_par: float, m: int) -> float:
    """Rabi rate for which the spectator detuned by a_par completes m full cycles in a π time."""
    if m < 1:
        raise InvalidStateError("Synchronisation order m must be >= 1")
    return a_par / math.sqrt(4 * m * m - 1)


def closest_sync_order(splitting: float, rabi: float) -> int:
    return max(1, round(0.5 * math.sqrt((splitting / rabi) ** 2 + 1)))


def cnot_geometric_phases(m: int, a_par: float = 66.25e6) -> tuple[float, float, float]:
    """(γ_res, γ_det, Γ = 4γ_det − γ_res) for the order-m synchronised CNOT."""
    omega = cnot_rabi(a_par, m)
    gamma_res = -math.pi
    gamma_det = -math.pi * (1 - a_par / math.hypot(a_par, omega))
    return gamma_res, gamma_det, 4 * gamma_det - gamma_res


def validate_sequence(seq: PulseSequence) -> list[str]:
    """Human-readable problems; empty when the sequence obeys the timing rules."""
    problems = []
    if not math.isfinite(seq.duration):
        problems.append("total duration is not finite")
    if seq.windowed:
        for i, p in enumerate(seq.elements):
            if p.channel != "RF":
                continue
            periods = p.duration * p.frequency
            if abs(periods - round(periods)) > PERIOD_TOL:
                problems.append(f"element {i}: RF pulse spans {periods:.6f} periods, not an integer")
    return problems


# --- gates ---------------------------------------------------------------


def _mw(params: RegisterParams, which: int, area: float, phase: float) -> Pulse:
    rabi = params.mw_rabi
    freq = params.omega_mw1 if which == 1 else params.omega_mw2
    return Pulse("MW", freq, rabi, phase, area / (2 * rabi))


def _rf(params: RegisterParams, which: int, area: float, phase: float, detuning: float = 0.0) -> Pulse:
    rabi = params.rf_rabi(which)
    freq = (params.omega_rf1 if which == 1 else params.omega_rf2) + detuning
    return Pulse("RF", freq, rabi, phase, area / (2 * rabi))


def build_gate(name: str, params: RegisterParams, phase: float = 0.0) -> PulseSequence:
    """
    Gate pulses; areas are in units of π. The unconditional e_pi/n_pi family
    drives both hyperfine-resolved transitions back to back.
    """
    if name == "CnNOTe":
        pulses = [_mw(params, 1, 1.0, phase)]
    elif name == "CnNOTe_bar":
        pulses = [_mw(params, 2, 1.0, phase)]
    elif name == "CeNOTn":
        pulses = [_rf(params, 1, 1.0, phase)]
    elif name == "CeNOTn_bar":
        pulses = [_rf(params, 2, 1.0, phase)]
    elif name in ("e_pi", "e_pi2"):
        area = 1.0 if name == "e_pi" else 0.5
        pulses = [_mw(params, 1, area, phase), _mw(params, 2, area, phase)]
    elif name in ("n_pi", "n_pi2"):
        area = 1.0 if name == "n_pi" else 0.5
        pulses = [_rf(params, 1, area, phase), _rf(params, 2, area, phase)]
    else:
        raise SequenceError(f"Unknown gate {name!r}")
    return PulseSequence(pulses)


def gates(names: Iterable[str], params: RegisterParams) -> PulseSequence:
    seq = PulseSequence()
    for name in names:
        seq = seq + build_gate(name, params)
    return seq


# --- propagation ---------------------------------------------------------


def _index(c: int, n: int, e: int, with_c13: bool) -> int:
    return (4 * c if with_c13 else 0) + 2 * n + e


def _frame(a: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * a), np.exp(0.5j * a)])


def _block(rabi: float, delta: float, noise: float, phase: float, t0: float, tau: float) -> np.ndarray:
    """2×2 propagator of one transition, drive detuning delta, extra noise detuning."""
    d_eff = delta - noise
    h = math.hypot(rabi, d_eff)
    theta = math.pi * tau * h
    if h == 0.0:
        core = np.eye(2, dtype=complex)
    else:
        nx, nz = rabi / h, -d_eff / h
        core = np.array(
            [[math.cos(theta) - 1j * math.sin(theta) * nz, -1j * math.sin(theta) * nx],
             [-1j * math.sin(theta) * nx, math.cos(theta) + 1j * math.sin(theta) * nz]]
        )
    a0 = phase + TWO_PI * delta * t0
    a1 = phase + TWO_PI * delta * (t0 + tau)
    return _frame(a1) @ core @ _frame(a0).conj().T


def _z_phases(dim: int, with_c13: bool, de: float, dn: float, tau: float) -> np.ndarray:
    """Diagonal of exp(−iπτ(δe σz_e + δn σz_n))."""
    diag = np.ones(dim, dtype=complex)
    for idx in range(dim):
        e = idx & 1
        n = (idx >> 1) & 1
        z = de * (1 - 2 * e) + dn * (1 - 2 * n)
        diag[idx] = np.exp(-1j * math.pi * tau * z)
    return diag


def pulse_unitary(
    pulse: Pulse,
    params: RegisterParams,
    t0: float = 0.0,
    electron_noise: float = 0.0,
    nuclear_noise: float = 0.0,
) -> np.ndarray:
    """Full-register propagator for one element starting at time t0."""
    with_c13 = params.c13 is not None
    dim = params.dim
    tau = pulse.duration
    if pulse.channel == "WAIT":
        return np.diag(_z_phases(dim, with_c13, electron_noise, nuclear_noise, tau))

    u = np.zeros((dim, dim), dtype=complex)
    c_states = (0, 1) if with_c13 else (0,)
    if pulse.channel == "MW":
        addressed = 0 if abs(pulse.frequency - params.omega_mw1) <= abs(pulse.frequency - params.omega_mw2) else 1
        f_res = params.omega_mw1 if addressed == 0 else params.omega_mw2
        split = params.a_par
        background = _z_phases(dim, with_c13, 0.0, nuclear_noise, tau)
    else:
        addressed = 0 if abs(pulse.frequency - params.omega_rf1) <= abs(pulse.frequency - params.omega_rf2) else 1
        f_res = params.omega_rf1 if addressed == 0 else params.omega_rf2
        split = params.rf_splitting
        background = _z_phases(dim, with_c13, electron_noise, 0.0, tau)
    delta_res = pulse.frequency - f_res

    for c in c_states:
        shift = 0.0
        if with_c13 and pulse.channel == "MW":
            shift = params.c13.a_par * (1 if c == 1 else -1)
        for spectator_state in (0, 1):
            # spectator detuning is delta_res - split for both variants; for MW2 and RF2
            # this is the mirror image of the physical +split, so both variants share one spectator block
            delta = delta_res if spectator_state == addressed else delta_res - split
            if pulse.channel == "MW":
                delta -= shift
                i0, i1 = _index(c, spectator_state, 0, with_c13), _index(c, spectator_state, 1, with_c13)
                noise = electron_noise
            else:
                i0, i1 = _index(c, 0, spectator_state, with_c13), _index(c, 1, spectator_state, with_c13)
                noise = nuclear_noise
            blk = _block(pulse.rabi, delta, noise, pulse.phase, t0, tau)
            u[np.ix_([i0, i1], [i0, i1])] = blk
    return u * background[np.newaxis, :]


def propagate(state: DensityMatrix, pulse: Pulse, params: RegisterParams, t0: float = 0.0) -> DensityMatrix:
    if state.dim != params.dim:
        raise InvalidStateError(f"State dim {state.dim} does not match register dim {params.dim}")
    u = pulse_unitary(pulse, params, t0)
    return DensityMatrix(u @ state.entries @ u.conj().T, check=False)


def sequence_unitary(seq: PulseSequence, params: RegisterParams, t0: float = 0.0) -> np.ndarray:
    u = np.eye(params.dim, dtype=complex)
    t = t0
    for pulse in seq.elements:
        u = pulse_unitary(pulse, params, t) @ u
        t += pulse.duration
    return u


def gate_unitary(seq: PulseSequence, params: RegisterParams) -> UnitaryOperator:
    """Noiseless process of a sequence; raises if numerics broke unitarity."""
    return UnitaryOperator(sequence_unitary(seq, params))


def relative_nuclear_phase(u: np.ndarray, electron: int = 0) -> float:
    """arg(U[↑n,↑n] / U[↓n,↓n]) within the given electron state."""
    a_down = u[_index(0, 0, electron, False), _index(0, 0, electron, False)]
    a_up = u[_index(0, 1, electron, False), _index(0, 1, electron, False)]
    return float(np.angle(a_up / a_down))


def ideal_cenotn(bar: bool = False) -> np.ndarray:
    """|↓e⟩⟨↓e|⊗(−iX) + |↑e⟩⟨↑e|⊗I on the nucleus (electron ↑ for the bar variant)."""
    flip_e = 1 if bar else 0
    u = np.zeros((4, 4), dtype=complex)
    for e in (0, 1):
        for n in (0, 1):
            if e == flip_e:
                u[_index(0, 1 - n, e, False), _index(0, n, e, False)] = -1j
            else:
                u[_index(0, n, e, False), _index(0, n, e, False)] = 1.0
    return u


# --- composite sequences -------------------------------------------------


def _xy_phases(count: int) -> list[float]:
    phases = [XY8_PHASES[i % 8] for i in range(count)]
    if count % 4 == 2:
        # electron-branch phase product must be +1
        phases[-1] = phases[-2]
    return phases


def _segment_periods(params: RegisterParams, order: Sequence[int]) -> list[int]:
    """Integer RF periods per segment, rounding errors diffused so the areas sum to π."""
    k = len(order)
    periods = []
    area = 0.0
    for i, which in enumerate(order):
        freq = params.omega_rf1 if which == 1 else params.omega_rf2
        area_per_period = 2 * params.rf_rabi(which) / freq
        target = (i + 1) / k
        count = round((target - area) / area_per_period)
        if count < 1:
            raise SequenceError(f"{k} RF segments are shorter than one RF period")
        periods.append(count)
        area += count * area_per_period
    if abs(area - 1.0) > AREA_TOL:
        raise SequenceError(f"RF segments reach area {area:.4f}π; need π within 1%")
    return periods


def decoupled_cenotn(
    params: RegisterParams,
    rf_segments: int = 8,
    pad: float = 0.35e-6,
    bar: bool = False,
) -> PulseSequence:
    """
    Nuclear π rotation conditioned on the electron, split into rf_segments
    RF windows separated by unconditional electron π pulses (XY pattern).

    RF1 goes in the first window and alternates with RF2 after every electron
    flip; `bar` swaps the two. Each RF phase absorbs the conditional nuclear
    phase that the preceding electron π pulses imprint on the tracked branch.
    """
    if rf_segments < 2 or rf_segments % 2:
        raise SequenceError("rf_segments must be an even integer >= 2")
    if params.c13 is not None:
        raise SequenceError("Decoupled CeNOTn is defined on the electron + ²⁹Si register")
    first, second = (2, 1) if bar else (1, 2)
    order = [first if i % 2 == 0 else second for i in range(rf_segments)]
    periods = _segment_periods(params, order)
    e_phases = _xy_phases(rf_segments)

    tracked = 1 if bar else 0
    offset = 0.0
    elements: list[Pulse] = []
    for i, which in enumerate(order):
        freq = params.omega_rf1 if which == 1 else params.omega_rf2
        rf = Pulse("RF", freq, params.rf_rabi(which), offset, periods[i] / freq)
        flip = build_gate("e_pi", params, e_phases[i])
        elements.extend([Pulse.wait(pad), rf, Pulse.wait(pad), *flip.elements])
        u_flip = sequence_unitary(flip, params)
        e_cur = tracked if i % 2 == 0 else 1 - tracked
        a_down = u_flip[_index(0, 0, 1 - e_cur, False), _index(0, 0, e_cur, False)]
        a_up = u_flip[_index(0, 1, 1 - e_cur, False), _index(0, 1, e_cur, False)]
        offset += float(np.angle(a_up / a_down))
    seq = PulseSequence(elements, windowed=True)
    logger.debug("Decoupled CeNOTn: %d segments, %.3f us", rf_segments, seq.duration * 1e6)
    return seq


def xy8(params: RegisterParams, n_pulses: int, tau: float, target: str = "electron") -> PulseSequence:
    """τ – π – 2τ – π – … – π – τ with the XY8 phase pattern."""
    if n_pulses < 8 or n_pulses % 8:
        raise SequenceError("XY8 needs a positive multiple of 8 pulses")
    if target not in ("electron", "nucleus"):
        raise SequenceError(f"Unknown XY8 target {target!r}")
    gate = "e_pi" if target == "electron" else "n_pi"
    elements = [Pulse.wait(tau)]
    for i in range(n_pulses):
        elements.extend(build_gate(gate, params, XY8_PHASES[i % 8]).elements)
        elements.append(Pulse.wait(tau if i == n_pulses - 1 else 2 * tau))
    return PulseSequence(elements)


# --- Monte Carlo ---------------------------------------------------------


@dataclass(frozen=True)
class ExperimentResult:
    counts: np.ndarray
    mean_state: DensityMatrix
    shots: int
    labels: tuple = field(default=BASIS_LABELS)

    def probabilities(self) -> np.ndarray:
        return self.counts / self.shots

    def to_dict(self) -> dict:
        return {
            "shots": self.shots,
            "counts": {label: int(c) for label, c in zip(self.labels, self.counts)},
        }


def _labels(dim: int) -> tuple:
    if dim == 4:
        return BASIS_LABELS
    return tuple(f"{'dc' if c == 0 else 'uc'}_{lab}" for c in (0, 1) for lab in BASIS_LABELS)


def _flip_operators(dim: int) -> tuple[np.ndarray, np.ndarray]:
    flip_e = np.zeros((dim, dim))
    flip_n = np.zeros((dim, dim))
    for idx in range(dim):
        flip_e[idx ^ 1, idx] = 1.0
        flip_n[idx ^ 2, idx] = 1.0
    return flip_e, flip_n


def sample_segment_unitaries(
    segments: Sequence[PulseSequence],
    params: RegisterParams,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """
    One noise realisation across back-to-back segments, one propagator per
    segment. The OU detuning carries over segment boundaries; T1 jumps enter
    as spin flips.
    """
    dim = params.dim
    flip_e, flip_n = _flip_operators(dim)
    de = noise.electron.initial(rng, 1) if noise.electron else np.zeros(1)
    dn = noise.nuclear.initial(rng, 1) if noise.nuclear else np.zeros(1)
    t = 0.0
    out = []
    for seg in segments:
        u = np.eye(dim, dtype=complex)
        for pulse in seg.elements:
            dt = pulse.duration
            de_mean = dn_mean = 0.0
            if noise.electron:
                de, mean = noise.electron.step(rng, de, dt)
                de_mean = float(mean[0])
            if noise.nuclear:
                dn, mean = noise.nuclear.step(rng, dn, dt)
                dn_mean = float(mean[0])
            u = pulse_unitary(pulse, params, t, de_mean, dn_mean) @ u
            if noise.t1_e and rng.random() < -0.5 * math.expm1(-dt / noise.t1_e):
                u = flip_e @ u
            if noise.t1_n and rng.random() < -0.5 * math.expm1(-dt / noise.t1_n):
                u = flip_n @ u
            t += dt
        out.append(u)
    return out


def run_experiment(
    seq: PulseSequence,
    initial: DensityMatrix,
    params: RegisterParams,
    noise: Optional[NoiseModel] = None,
    shots: int = 1000,
    seed: Optional[int] = None,
) -> ExperimentResult:
    """
    Shot-by-shot simulation with sampled OU detuning and T1 flips, then a
    computational-basis measurement per shot.
    """
    if shots <= 0:
        raise ShotsError("shots must be positive")
    if initial.dim != params.dim:
        raise InvalidStateError(f"State dim {initial.dim} does not match register dim {params.dim}")
    dim = params.dim
    noise = noise or NoiseModel.noiseless()

    if noise.is_noiseless:
        u = sequence_unitary(seq, params)
        rho = u @ initial.entries @ u.conj().T
        pops = np.clip(np.real(np.diag(rho)), 0, None)
        counts = derive_rng(seed, "run_experiment", 0).multinomial(shots, pops / pops.sum())
        return ExperimentResult(counts, DensityMatrix(rho, check=False), shots, _labels(dim))

    counts = np.zeros(dim, dtype=int)
    total = np.zeros((dim, dim), dtype=complex)
    for shot in range(shots):
        rng = derive_rng(seed, "run_experiment", shot)
        (u,) = sample_segment_unitaries([seq], params, noise, rng)
        rho = u @ initial.entries @ u.conj().T
        pops = np.clip(np.real(np.diag(rho)), 0, None)
        counts[rng.choice(dim, p=pops / pops.sum())] += 1
        total += rho
    return ExperimentResult(counts, DensityMatrix(total / shots, check=False), shots, _labels(dim))


# --- Ramsey and Rabi analysis --------------------------------------------


def rabi_curve(params: RegisterParams, transition: str, durations: Sequence[float]) -> np.ndarray:
    """Flipped-state population after a resonant pulse on MW1/MW2/RF1/RF2."""
    channel, which = transition[:2], int(transition[2])
    if channel not in ("MW", "RF") or which not in (1, 2):
        raise SequenceError(f"Unknown transition {transition!r}")
    if channel == "MW":
        n = which - 1
        start, end = _index(0, n, 0, False), _index(0, n, 1, False)
        base = _mw(params, which, 1.0, 0.0)
    else:
        e = which - 1
        start, end = _index(0, 0, e, False), _index(0, 1, e, False)
        base = _rf(params, which, 1.0, 0.0)
    out = []
    for tau in durations:
        pulse = Pulse(base.channel, base.frequency, base.rabi, 0.0, float(tau))
        u = pulse_unitary(pulse, replace(params, c13=None))
        out.append(abs(u[end, start]) ** 2)
    return np.array(out)


def ramsey_fringes(
    params: RegisterParams,
    waits: Sequence[float],
    detuning: float = 500.0,
) -> np.ndarray:
    """Nuclear Ramsey (electron ↓) with an intentionally detuned RF1; returns P(↑n)."""
    pi2 = _rf(params, 1, 0.5, 0.0, detuning)
    start = _index(0, 0, 0, False)
    end = _index(0, 1, 0, False)
    out = []
    for wait in waits:
        u = sequence_unitary(PulseSequence([pi2, Pulse.wait(float(wait)), pi2]), params)
        out.append(abs(u[end, start]) ** 2)
    return np.array(out)


def fit_fringe_frequency(times: np.ndarray, populations: np.ndarray, guess: float) -> float:
    def model(t, amp, freq, phase, off):
        return off + amp * np.cos(TWO_PI * freq * t + phase)

    try:
        popt, _ = curve_fit(model, times, populations, p0=[0.5, guess, 0.0, 0.5], maxfev=20000)
    except RuntimeError as e:
        raise FitError(f"Fringe fit failed: {e}") from e
    return float(abs(popt[1]))


def _fit_phase(phis: np.ndarray, populations: np.ndarray) -> float:
    # linear start point for the cosine fit
    design = np.column_stack([np.ones_like(phis), np.cos(phis), np.sin(phis)])
    c0, c1, c2 = np.linalg.lstsq(design, populations, rcond=None)[0]

    def model(phi, off, amp, phase):
        return off + amp * np.cos(phi - phase)

    try:
        popt, _ = curve_fit(model, phis, populations, p0=[c0, math.hypot(c1, c2), math.atan2(c2, c1)])
    except RuntimeError as e:
        raise FitError(f"Phase fit failed: {e}") from e
    phase = popt[2] + (math.pi if popt[1] < 0 else 0.0)
    return float(phase)


def _wrap(angle: float) -> float:
    return float((angle + math.pi) % TWO_PI - math.pi)


def ramsey_phase(params: RegisterParams, inserted: Sequence[str], points: int = 24) -> float:
    """
    Phase shift (rad, wrapped to (−π, π]) that the inserted gates imprint on a
    nuclear superposition, fitted from a sweep of the second π/2 phase.
    """
    phis = np.linspace(0, TWO_PI, points, endpoint=False)
    start = _index(0, 0, 0, False)
    end = _index(0, 1, 0, False)

    def sweep(middle: PulseSequence) -> np.ndarray:
        first = PulseSequence([_rf(params, 1, 0.5, 0.0)])
        pops = []
        for phi in phis:
            seq = first + middle + PulseSequence([_rf(params, 1, 0.5, float(phi))])
            u = sequence_unitary(seq, params)
            pops.append(abs(u[end, start]) ** 2)
        return np.array(pops)

    reference = _fit_phase(phis, sweep(PulseSequence()))
    shifted = _fit_phase(phis, sweep(gates(inserted, params)))
    return _wrap(shifted - reference)


# --- Swap-Hold-Read ------------------------------------------------------


@dataclass(frozen=True)
class SwapHoldReadReport:
    rows: tuple  # (step, fidelity)
    decoupled_gate_time: float

    @property
    def total(self) -> float:
        return float(np.prod([f for _, f in self.rows]))

    def to_dict(self) -> dict:
        return {
            "rows": [{"step": s, "fidelity": f} for s, f in self.rows],
            "decoupled_gate_time_s": self.decoupled_gate_time,
            "total": self.total,
        }


def decoupled_dephasing_fidelity(gate_time: float, t2_echo: float) -> float:
    return 0.5 * (1 + math.exp(-((gate_time / t2_echo) ** 2)))


def swap_hold_read_report(
    params: RegisterParams,
    budget: Sequence[tuple],
    rf_segments: int = 8,
    pad: float = 0.35e-6,
) -> SwapHoldReadReport:
    """
    Step-by-step fidelities of the Swap-Hold-Read sequence. The row named
    "decoupled_cenotn" is replaced by the noiseless gate fidelity times the
    Gaussian electron dephasing over the simulated gate time.
    """
    seq = decoupled_cenotn(params, rf_segments, pad)
    gate_time = seq.duration
    intrinsic = process_fidelity(ideal_cenotn(), sequence_unitary(seq, params))
    dephasing = decoupled_dephasing_fidelity(gate_time, params.t2_e_echo)
    rows = []
    for step, value in budget:
        if step == "decoupled_cenotn":
            value = intrinsic * dephasing
        rows.append((step, float(value)))
    report = SwapHoldReadReport(tuple(rows), gate_time)
    logger.info("Swap-Hold-Read total fidelity %.4f (gate time %.2f us)", report.total, gate_time * 1e6)
    return report


# --- ¹³C -----------------------------------------------------------------


def _c13_propagator(c13: C13Params, electron: int, tau: float) -> np.ndarray:
    """¹³C precession while the electron sits in one state; tilt sinθ = ±A⊥/f."""
    sign = -1.0 if electron == 0 else 1.0
    f = c13.rf_down if electron == 0 else c13.rf_up
    ax = sign * c13.a_perp
    az = math.sqrt(max(f * f - c13.a_perp**2, 0.0))
    theta = math.pi * tau * f
    c, s = math.cos(theta), math.sin(theta)
    nx, nz = ax / f, az / f
    return np.array([[c - 1j * s * nz, -1j * s * nx], [-1j * s * nx, c + 1j * s * nz]])


def c13_xy8_coherence(c13: C13Params, n_pulses: int, tau: float) -> float:
    """
    Electron coherence after an XY8-n train with instantaneous π pulses and an
    unpolarised ¹³C: ½ Re Tr(U_↓ U_↑†).
    """
    if n_pulses < 8 or n_pulses % 8:
        raise SequenceError("XY8 needs a positive multiple of 8 pulses")
    branches = []
    for start in (0, 1):
        u = _c13_propagator(c13, start, tau)
        e = start
        for i in range(n_pulses):
            e = 1 - e
            u = _c13_propagator(c13, e, tau if i == n_pulses - 1 else 2 * tau) @ u
        branches.append(u)
    return float(0.5 * np.real(np.trace(branches[0] @ branches[1].conj().T)))


def c13_resonance_tau(c13: C13Params, k: int = 1) -> float:
    """Half inter-pulse spacing of the k-th XY8 collapse."""
    if k < 1:
        raise InvalidStateError("Resonance order k must be >= 1")
    return (2 * k - 1) / (2 * (c13.rf_down + c13.rf_up))


@dataclass(frozen=True)
class C13InitReport:
    shift_hz: float
    flip_polarized: float
    flip_unpolarized: float


def c13_initialization(params: RegisterParams) -> C13InitReport:
    """
    Electron π-pulse fidelity on MW1 with the ¹³C initialised to ↓ (drive
    retuned to the shifted line) versus left unpolarised (drive on the bare line).
    """
    if params.c13 is None:
        raise InvalidStateError("Register has no ¹³C")
    shift = -params.c13.a_par
    base = _mw(params, 1, 1.0, 0.0)
    retuned = Pulse("MW", base.frequency + shift, base.rabi, 0.0, base.duration)
    start, end = _index(0, 0, 0, True), _index(0, 0, 1, True)
    start_up, end_up = _index(1, 0, 0, True), _index(1, 0, 1, True)
    u_ret = pulse_unitary(retuned, params)
    u_bare = pulse_unitary(base, params)
    polarized = abs(u_ret[end, start]) ** 2
    unpolarized = 0.5 * (abs(u_bare[end, start]) ** 2 + abs(u_bare[end_up, start_up]) ** 2)
    return C13InitReport(shift, float(polarized), float(unpolarized))


# --- text format ---------------------------------------------------------


def sequence_to_text(seq: PulseSequence) -> str:
    lines = [f"{p.channel} {p.frequency!r} {p.rabi!r} {p.phase!r} {p.duration!r}" for p in seq.elements]
    return "\n".join(lines) + ("\n" if lines else "")


def sequence_from_text(text: str, windowed: bool = False) -> PulseSequence:
    """Parse `CHANNEL freq_hz rabi_hz phase_rad duration_s` lines; '#' starts a comment."""
    elements = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise SequenceError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            values = [float(v) for v in parts[1:]]
        except ValueError as e:
            raise SequenceError(f"line {lineno}: {e}") from e
        elements.append(Pulse(parts[0].upper(), *values))
    return PulseSequence(elements, windowed=windowed)
