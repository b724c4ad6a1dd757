"""
Time-bin spin-photon gates: electron-photon entanglement, the PHONE gate,
flag-based error detection and Bell-fidelity bookkeeping.

The photon lives in {vacuum, early, late}. Reflection off the cavity acts on
each time bin with the spin-dependent amplitude r; light leaving through the
other ports never heralds, so the heralded branch is the photon found in the
early or late bin.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from sivnode.core.errors import HeraldError, InvalidStateError, SequenceError, ShotsError
from sivnode.core.quantum import (
    DensityMatrix,
    PAULI_X,
    PAULI_Y,
    bell_overlap,
    kron_all,
    partial_trace,
)
from sivnode.core.seeding import derive_rng
from sivnode.services.cavity import (
    READOUT_GRID_POINTS,
    READOUT_RESOLUTION_HZ,
    CavitySystem,
    mean_reflectivity,
    reflection,
    resonant_readout_frequency,
)
from sivnode.services.noise import NoiseModel
from sivnode.services.spin_register import (
    Pulse,
    PulseSequence,
    RegisterParams,
    build_gate,
    sample_segment_unitaries,
)
from sivnode.services.thermal import PhononParams, electron_t1, electron_t2

logger = logging.getLogger(__name__)

GateName = Literal["electron_photon", "phone"]
GATES = ("electron_photon", "phone")
BASES = ("ZZ", "XX", "YY")
STORAGE_HEADER = ("t_s", "fidelity")
MIXED_FIDELITY = 0.25

FACTOR_NAMES = (
    "initialization",
    "mw_gates",
    "siv_contrast",
    "dark_counts",
    "two_photon",
    "readout",
    "tdi_contrast",
    "tdi_lock",
    "t2_dephasing",
)
XY_ONLY = ("tdi_contrast", "tdi_lock", "t2_dephasing")


@dataclass(frozen=True)
class PhotonParams:
    """Weak coherent time-bin pulse."""

    nbar_in: float = 5e-3
    timebin_sep: float = 143.5e-9
    pulse_width: float = 20.8e-9
    pulse_shape: Literal["gaussian", "square"] = "gaussian"
    path_efficiency: float = 0.52
    dark_prob: float = 2.9e-6

    def __post_init__(self) -> None:
        if not 0 < self.nbar_in < 1:
            raise InvalidStateError("nbar_in must be in (0, 1)")
        if not 0 < self.path_efficiency <= 1:
            raise InvalidStateError("path_efficiency must be in (0, 1]")
        if self.pulse_width >= self.timebin_sep:
            raise InvalidStateError("Pulse must fit inside the time-bin separation")

    def initial_amplitudes(self) -> np.ndarray:
        """Single-photon truncation of the coherent pulse over {vacuum, early, late}."""
        half = self.nbar_in / 2
        return np.array([math.sqrt(1 - self.nbar_in), math.sqrt(half), math.sqrt(half)], dtype=complex)


@dataclass(frozen=True)
class ErrorBudget:
    """Multiplicative fidelity factors of one gate at one temperature."""

    gate: str
    temperature: float
    initialization: float = 1.0
    mw_gates: float = 1.0
    siv_contrast: float = 1.0
    dark_counts: float = 1.0
    two_photon: float = 1.0
    readout: float = 1.0
    tdi_contrast: float = 1.0
    tdi_lock: float = 1.0
    t2_dephasing: float = 1.0

    def __post_init__(self) -> None:
        if self.gate not in GATES:
            raise InvalidStateError(f"Unknown gate {self.gate!r}")
        for name in FACTOR_NAMES:
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise InvalidStateError(f"Budget factor {name}={value} outside (0, 1]")

    def factors(self, basis: str = "XX") -> dict[str, float]:
        """Factors that act on shots measured in `basis`."""
        names = [n for n in FACTOR_NAMES if basis != "ZZ" or n not in XY_ONLY]
        return {n: getattr(self, n) for n in names}

    def common_product(self) -> float:
        return float(np.prod(list(self.factors("ZZ").values())))

    def xy_product(self) -> float:
        return float(np.prod([getattr(self, n) for n in XY_ONLY]))

    def total(self) -> float:
        # ZZ carries half the Bell fidelity, XX and YY a quarter each
        return self.common_product() * (0.5 + 0.5 * self.xy_product())

    def with_contrast(self, fidelity: float) -> "ErrorBudget":
        return replace(self, siv_contrast=float(fidelity))


def default_budgets() -> tuple[ErrorBudget, ...]:
    shared = dict(dark_counts=0.997, two_photon=0.998, readout=0.995, tdi_contrast=0.967, tdi_lock=0.98)
    ep = dict(initialization=0.995, mw_gates=0.99, siv_contrast=0.96, t2_dephasing=0.997, **shared)
    return (
        ErrorBudget("electron_photon", 0.1, **ep),
        ErrorBudget("electron_photon", 1.5, **ep),
        ErrorBudget("phone", 0.1, initialization=0.995, mw_gates=0.94, siv_contrast=0.94, t2_dephasing=0.997, **shared),
        ErrorBudget("phone", 4.3, initialization=0.970, mw_gates=0.89, siv_contrast=0.94, t2_dephasing=0.680, **shared),
    )


def find_budget(budgets: Sequence[ErrorBudget], gate: str, temperature: float) -> ErrorBudget:
    for b in budgets:
        if b.gate == gate and abs(b.temperature - temperature) < 1e-9:
            return b
    known = sorted(b.temperature for b in budgets if b.gate == gate)
    raise InvalidStateError(f"No {gate} budget at {temperature} K (known: {known})")


def budget_product(budgets: Sequence[ErrorBudget], gate: str, temperature: float) -> float:
    return find_budget(budgets, gate, temperature).total()


@dataclass(frozen=True)
class ErrorModel:
    """
    How budget errors show up on the electron flag.

    Initialization errors always leave the electron flipped; MW and T2 errors
    flip it with the detectable fractions below. The flag readout itself errs
    with probability flag_readout_error.
    """

    mw_detectable: float = 0.4
    t2_detectable: float = 0.05
    flag_readout_error: float = 0.05

    def __post_init__(self) -> None:
        for name in ("mw_detectable", "t2_detectable", "flag_readout_error"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidStateError(f"{name} must be a probability")

    @classmethod
    def noiseless(cls) -> "ErrorModel":
        return cls(flag_readout_error=0.0)


@dataclass(frozen=True)
class HeraldResult:
    state: DensityMatrix
    herald_prob: float
    flag_raised: bool = False
    fidelity: float = field(default=math.nan, compare=False)


# --- cavity-limited heralded states ----------------------------------------


def _bright_electron(sys: CavitySystem, omega: float) -> int:
    """Index (0 = ↓) of the more reflective electron state, averaged over nuclei."""
    r = [np.mean([abs(reflection(sys, (e, n), omega)) ** 2 for n in ("down", "up")]) for e in ("down", "up")]
    return 0 if r[0] >= r[1] else 1


def _amplitude(sys: CavitySystem, electron: int, nuclear: int, omega: float) -> complex:
    spins = ("down", "up")
    return complex(reflection(sys, (spins[electron], spins[nuclear]), omega))


def _reflection_grid(sys: CavitySystem, omega: float) -> np.ndarray:
    """r[n, e] at omega, indexed like the register (nucleus, electron)."""
    return np.array([[_amplitude(sys, e, n, omega) for e in (0, 1)] for n in (0, 1)])


# --- electron flips between the time bins ----------------------------------


def thermal_noise(register: RegisterParams, phonons: PhononParams, temperature: float) -> NoiseModel:
    """Register noise with the electron T1 and echo T2 taken from the phonon rates at temperature."""
    t2_echo = min(register.t2_e_echo, electron_t2(temperature, phonons))
    warm = replace(
        register,
        t1_e=electron_t1(temperature, phonons),
        t2_e_echo=t2_echo,
        t2_e_star=min(register.t2_e_star, 0.5 * t2_echo),
    )
    logger.debug("Electron noise at %.3g K: T1=%.3g s, T2=%.3g s", temperature, warm.t1_e, warm.t2_e_echo)
    return NoiseModel.from_register(warm)


@dataclass(frozen=True)
class SpinDrive:
    """
    How the gate sequences flip the electron.

    Without a register the flips are ideal permutations. With one, every flip
    is the register's own pulse sequence (CnNOTe, CnNOTe_bar or e_pi) and the
    rest of the time-bin separation is spent waiting. A noise model is sampled
    `samples` times and the heralded states are averaged.
    """

    register: Optional[RegisterParams] = field(default_factory=RegisterParams)
    noise: Optional[NoiseModel] = None
    samples: int = 200
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.samples <= 0:
            raise ShotsError("samples must be positive")
        if self.register is None and self.noise is not None:
            raise InvalidStateError("A noise model needs register pulses to act on")
        if self.register is not None and self.register.c13 is not None:
            raise InvalidStateError("Spin drive runs on the electron + ²⁹Si register only")

    @classmethod
    def ideal(cls) -> "SpinDrive":
        return cls(register=None)

    @classmethod
    def at_temperature(
        cls,
        register: RegisterParams,
        phonons: PhononParams,
        temperature: float,
        samples: int = 200,
        seed: Optional[int] = None,
    ) -> "SpinDrive":
        return cls(register, thermal_noise(register, phonons, temperature), samples, seed)

    @property
    def is_noiseless(self) -> bool:
        return self.noise is None or self.noise.is_noiseless


def _ideal_flip(nuclear: Optional[int] = None) -> np.ndarray:
    """Electron X on the 2n + e register where the nucleus is `nuclear` (everywhere when None)."""
    u = np.zeros((4, 4), dtype=complex)
    for n in (0, 1):
        for e in (0, 1):
            target = 1 - e if nuclear is None or n == nuclear else e
            u[2 * n + target, 2 * n + e] = 1.0
    return u


def _ideal_unitaries(gate: str) -> list[np.ndarray]:
    if gate == "phone":
        return [_ideal_flip(1), _ideal_flip(0) @ _ideal_flip(1), _ideal_flip(0)]
    return [np.eye(4, dtype=complex), _ideal_flip(), np.eye(4, dtype=complex)]


def _wait(duration: float) -> PulseSequence:
    if duration < 0:
        raise SequenceError("Electron flips do not fit between the time bins")
    return PulseSequence([Pulse.wait(duration)])


def gate_segments(gate: str, register: RegisterParams, photon: PhotonParams) -> list[PulseSequence]:
    """Register pulses before the early bin, between the bins and after the late bin."""
    if gate == "phone":
        early, late = build_gate("CnNOTe_bar", register), build_gate("CnNOTe", register)
        gap = photon.timebin_sep - early.duration - late.duration
        return [early, early + _wait(gap) + late, late]
    if gate == "electron_photon":
        flip = build_gate("e_pi", register)
        half = _wait(0.5 * (photon.timebin_sep - flip.duration))
        return [PulseSequence(), half + flip + half, PulseSequence()]
    raise InvalidStateError(f"Unknown gate {gate!r}")


def _drive_unitaries(drive: SpinDrive, gate: str, photon: PhotonParams, noisy: bool = True):
    """Per-realisation [before, between, after] propagators of the drive."""
    if drive.register is None:
        yield _ideal_unitaries(gate)
        return
    segments = gate_segments(gate, drive.register, photon)
    if not noisy or drive.is_noiseless:
        rng = derive_rng(drive.seed, "spin_drive")
        yield sample_segment_unitaries(segments, drive.register, NoiseModel.noiseless(), rng)
        return
    for i in range(drive.samples):
        rng = derive_rng(drive.seed, f"spin_drive:{gate}", i)
        yield sample_segment_unitaries(segments, drive.register, drive.noise, rng)


def _time_bins(ket: np.ndarray, r: np.ndarray, unitaries: Sequence[np.ndarray]) -> np.ndarray:
    """(bin, n, e) ket after flip, early reflection, flip, late reflection, flip."""
    out = ket.copy()
    for step, u in enumerate(unitaries):
        out = (out.reshape(3, 4) @ u.T).reshape(3, 2, 2)
        if step < 2:
            out[step + 1] *= r
    return out


def _heralded_mixture(
    ket: np.ndarray,
    r: np.ndarray,
    drive: SpinDrive,
    gate: str,
    photon: PhotonParams,
    early: tuple[int, int],
    late: tuple[int, int],
) -> tuple[np.ndarray, float]:
    """
    Normalised heralded (bin, n, e) density averaged over drive realisations,
    and the herald probability. The late bin carries the photon phase
    reference that puts the noiseless early and late targets in phase.
    """
    reference = _time_bins(ket, r, next(_drive_unitaries(drive, gate, photon, noisy=False)))
    phase = np.exp(1j * (np.angle(reference[1][early]) - np.angle(reference[2][late])))
    total = np.zeros((8, 8), dtype=complex)
    count = 0
    for unitaries in _drive_unitaries(drive, gate, photon):
        out = _time_bins(ket, r, unitaries)
        out[2] *= phase
        branch = out[1:3].reshape(-1)
        total += np.outer(branch, branch.conj())
        count += 1
    total /= count
    p_reflected = float(np.real(np.trace(total)))
    if p_reflected <= 0:
        raise HeraldError("No spin state reflects: herald probability is zero")
    return total / p_reflected, p_reflected * photon.path_efficiency + photon.dark_prob


def electron_photon_state(
    sys: CavitySystem,
    omega: Optional[float] = None,
    nuclear: str = "down",
    photon: PhotonParams = PhotonParams(),
    drive: SpinDrive = SpinDrive(),
) -> HeraldResult:
    """
    Heralded photon ⊗ electron state after early bin, electron π, late bin.

    The bright electron state ends up labelled so that the ideal outcome is
    (|e↓⟩ + |l↑⟩)/√2.
    """
    omega = resonant_readout_frequency(sys, nuclear) if omega is None else omega
    n = 0 if nuclear == "down" else 1
    r = _reflection_grid(sys, omega)
    bright = 0 if abs(r[n, 0]) > abs(r[n, 1]) else 1
    ket = np.zeros((3, 2, 2), dtype=complex)
    ket[:, n, :] = np.outer(photon.initial_amplitudes(), np.array([1, 1]) / math.sqrt(2))
    rho, herald = _heralded_mixture(ket, r, drive, "electron_photon", photon, (n, 1 - bright), (n, bright))
    if bright == 0:
        relabel = kron_all([np.eye(4), PAULI_X])
        rho = relabel @ rho @ relabel
    reduced = partial_trace(DensityMatrix(rho, check=False), keep=(0, 2), dims=(2, 2, 2))
    return HeraldResult(reduced, herald)


def phone_state(
    sys: CavitySystem,
    omega: Optional[float] = None,
    photon: PhotonParams = PhotonParams(),
    drive: SpinDrive = SpinDrive(),
) -> tuple[HeraldResult, float]:
    """
    Heralded photon ⊗ nucleus state of the PHONE gate and the electron-flip
    probability left at the end (zero for the ideal sequence).

    Early bin: electron dark unless the nucleus is ↓; late bin: dark unless ↑.
    The photon phase reference aligns the two bright amplitudes.
    """
    omega = phone_gate_frequency(sys) if omega is None else omega
    bright = _bright_electron(sys, omega)
    ket = np.zeros((3, 2, 2), dtype=complex)
    ket[:, 0, bright] = photon.initial_amplitudes() / math.sqrt(2)
    ket[:, 1, bright] = photon.initial_amplitudes() / math.sqrt(2)
    r = _reflection_grid(sys, omega)
    rho, herald = _heralded_mixture(ket, r, drive, "phone", photon, (0, bright), (1, bright))
    flipped = float(np.sum(np.real(np.diag(rho)).reshape(2, 2, 2)[:, :, 1 - bright]))
    reduced = partial_trace(DensityMatrix(rho, check=False), keep=(0, 1), dims=(2, 2, 2))
    return HeraldResult(reduced, herald, flag_raised=flipped > 1e-10), flipped


def phone_cavity_fidelity(sys: CavitySystem, omega: float) -> float:
    """Bell overlap of the cavity-limited PHONE state, in closed form."""
    bright = _bright_electron(sys, omega)
    rb = [abs(_amplitude(sys, bright, n, omega)) for n in (0, 1)]
    rd = [abs(_amplitude(sys, 1 - bright, n, omega)) ** 2 for n in (0, 1)]
    total = rb[0] ** 2 + rb[1] ** 2 + rd[0] + rd[1]
    return float((rb[0] + rb[1]) ** 2 / (2 * total))


def phone_gate_frequency(sys: CavitySystem) -> float:
    """Laser frequency maximizing the cavity-limited PHONE fidelity, to 1 MHz."""
    lo, hi = sys.search_window()
    grid = np.linspace(lo, hi, READOUT_GRID_POINTS)
    values = np.array([phone_cavity_fidelity(sys, w) for w in grid])
    best = int(np.argmax(values))
    step = grid[1] - grid[0]
    result = minimize_scalar(
        lambda x: -phone_cavity_fidelity(sys, grid[best] + x * step),
        bounds=(-1.0, 1.0),
        method="bounded",
        options={"xatol": 1e-4},
    )
    omega = grid[best] + result.x * step if -result.fun >= values[best] else grid[best]
    return float(round(omega / READOUT_RESOLUTION_HZ) * READOUT_RESOLUTION_HZ)


def cavity_limited_fidelity(
    sys: CavitySystem,
    gate: str,
    omega: Optional[float] = None,
    photon: PhotonParams = PhotonParams(),
    drive: SpinDrive = SpinDrive(),
) -> float:
    if gate == "electron_photon":
        return bell_overlap(electron_photon_state(sys, omega, photon=photon, drive=drive).state)
    if gate == "phone":
        return bell_overlap(phone_state(sys, omega, photon, drive)[0].state)
    raise InvalidStateError(f"Unknown gate {gate!r}")


def _spin_noise(rho: DensityMatrix, target: float) -> DensityMatrix:
    """
    Random X or Y on the memory (second) qubit, with the flip probability
    that brings the Φ⁺ overlap down to target.
    """
    x = kron_all([np.eye(2), PAULI_X])
    y = kron_all([np.eye(2), PAULI_Y])
    e = rho.entries
    flipped = 0.5 * (x @ e @ x.conj().T + y @ e @ y.conj().T)
    before = bell_overlap(rho)
    after_flip = bell_overlap(DensityMatrix(flipped, check=False))
    if before - after_flip <= 0:
        raise InvalidStateError("Memory flips cannot lower the Bell overlap of this state")
    p = (before - target) / (before - after_flip)
    if not -1e-12 <= p <= 1:
        raise InvalidStateError(f"Bell overlap {target:.4f} is out of reach from {before:.4f}")
    p = max(p, 0.0)
    return DensityMatrix((1 - p) * e + p * flipped)


def _with_budget(result: HeraldResult, budget: Optional[ErrorBudget]) -> HeraldResult:
    cavity = bell_overlap(result.state)
    if budget is None:
        return replace(result, fidelity=cavity)
    folded = budget.with_contrast(cavity)
    noisy = _spin_noise(result.state, folded.common_product())
    return replace(result, state=noisy, fidelity=folded.total())


def electron_photon_gate(
    sys: CavitySystem,
    budget: Optional[ErrorBudget] = None,
    photon: PhotonParams = PhotonParams(),
    omega: Optional[float] = None,
    drive: SpinDrive = SpinDrive(),
) -> HeraldResult:
    """
    Electron-photon Bell state with the budget folded in.

    `state` carries the basis-independent errors; `fidelity` also includes
    the interferometer factors that only touch XX/YY measurements.
    """
    if budget is not None and budget.gate != "electron_photon":
        raise InvalidStateError("Budget belongs to another gate")
    return _with_budget(electron_photon_state(sys, omega, photon=photon, drive=drive), budget)


def phone_gate(
    sys: CavitySystem,
    budget: Optional[ErrorBudget] = None,
    photon: PhotonParams = PhotonParams(),
    omega: Optional[float] = None,
    drive: SpinDrive = SpinDrive(),
) -> HeraldResult:
    if budget is not None and budget.gate != "phone":
        raise InvalidStateError("Budget belongs to another gate")
    result, _ = phone_state(sys, omega, photon, drive)
    return _with_budget(result, budget)


# --- measurement statistics -------------------------------------------------


_EIGENBASES = {
    "Z": np.eye(2, dtype=complex),
    "X": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    "Y": np.array([[1, 1], [1j, -1j]], dtype=complex) / math.sqrt(2),
}


def basis_probabilities(rho: DensityMatrix, basis: str) -> np.ndarray:
    """Outcome probabilities [p00, p01, p10, p11] in ZZ, XX or YY; 0 is the +1 eigenvector."""
    if basis not in BASES:
        raise InvalidStateError(f"Unknown basis {basis!r}")
    v = _EIGENBASES[basis[0]]
    u = np.kron(v, v)
    probs = np.real(np.einsum("ki,ij,jk->k", u.conj().T, rho.entries, u))
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


def sample_bell_counts(rho: DensityMatrix, shots_per_basis: int, seed: Optional[int] = None) -> dict[str, np.ndarray]:
    if shots_per_basis <= 0:
        raise ShotsError("shots_per_basis must be positive")
    counts = {}
    for basis in BASES:
        rng = derive_rng(seed, f"bell_counts:{basis}")
        counts[basis] = rng.multinomial(shots_per_basis, basis_probabilities(rho, basis))
    return counts


@dataclass(frozen=True)
class BellEstimate:
    fidelity: float
    error: float
    p_zz: float
    p_xx: float
    p_yy: float

    def to_dict(self) -> dict:
        return {k: round(float(v), 6) for k, v in self.__dict__.items()}


def bell_fidelity_from_counts(counts: Mapping[str, Sequence[int]]) -> BellEstimate:
    """F = ½P_zz + ¼P_xx + ¼P_yy from tallies [n00, n01, n10, n11] per basis."""
    missing = [b for b in BASES if b not in counts or int(np.sum(counts[b])) < 1]
    if missing:
        raise InvalidStateError(f"Missing tallies for bases {missing}")
    stats = {}
    for basis in BASES:
        n00, n01, n10, n11 = (int(c) for c in counts[basis])
        total = n00 + n01 + n10 + n11
        even = (n00 + n11) / total
        stats[basis] = (even, total)
    even_zz, n_zz = stats["ZZ"]
    even_xx, n_xx = stats["XX"]
    even_yy, n_yy = stats["YY"]
    p_zz = even_zz
    p_xx = 2 * even_xx - 1
    p_yy = 1 - 2 * even_yy
    fidelity = 0.5 * p_zz + 0.25 * p_xx + 0.25 * p_yy
    var = (
        0.25 * even_zz * (1 - even_zz) / n_zz
        + 0.0625 * 4 * even_xx * (1 - even_xx) / n_xx
        + 0.0625 * 4 * even_yy * (1 - even_yy) / n_yy
    )
    return BellEstimate(float(fidelity), float(math.sqrt(var)), float(p_zz), float(p_xx), float(p_yy))


# --- Monte Carlo with flag-based error detection ----------------------------


@dataclass(frozen=True)
class GateRunBatch:
    """Per-shot outcomes of heralded runs; arrays are aligned by shot."""

    gate: str
    temperature: float
    basis: np.ndarray  # index into BASES
    photon: np.ndarray
    spin: np.ndarray
    flag: np.ndarray
    herald_prob: float = 1.0

    @property
    def shots(self) -> int:
        return int(self.basis.size)

    def counts(self, accepted_only: bool = False) -> dict[str, np.ndarray]:
        keep = ~self.flag if accepted_only else np.ones(self.shots, dtype=bool)
        out = {}
        for i, basis in enumerate(BASES):
            sel = keep & (self.basis == i)
            outcome = 2 * self.photon[sel] + self.spin[sel]
            out[basis] = np.bincount(outcome, minlength=4)
        return out


def _split_shots(shots: int) -> list[int]:
    base, extra = divmod(shots, len(BASES))
    return [base + (1 if i < extra else 0) for i in range(len(BASES))]


def simulate_gate_counts(
    budget: ErrorBudget,
    shots: int,
    seed: Optional[int] = None,
    error_model: ErrorModel = ErrorModel(),
    error_detection: bool = False,
    herald_prob: float = 1.0,
) -> GateRunBatch:
    """
    Heralded runs split evenly over ZZ, XX and YY.

    Each budget factor f fires an error event with probability 1 − f; a shot
    with any event gets one random X or Y on the memory qubit. Factors that
    only affect the interferometer are drawn for XX/YY shots only. With
    error detection on, the flag is the parity of electron flips XOR a flag
    readout error.
    """
    if shots <= 0:
        raise ShotsError("shots must be positive")
    parts = {k: [] for k in ("basis", "photon", "spin", "flag")}
    for index, (basis, n) in enumerate(zip(BASES, _split_shots(shots))):
        rng = derive_rng(seed, f"gate:{budget.gate}:{budget.temperature:g}:{basis}")
        photon = rng.integers(0, 2, n)
        spin = photon.copy() if basis != "YY" else 1 - photon
        events = {name: rng.random(n) > f for name, f in budget.factors(basis).items()}
        corrupted = np.logical_or.reduce(list(events.values()))
        is_y = rng.integers(0, 2, n).astype(bool)
        if basis == "ZZ":
            flips = corrupted
        elif basis == "XX":
            flips = corrupted & is_y
        else:
            flips = corrupted & ~is_y
        spin = spin ^ flips.astype(spin.dtype)

        if error_detection:
            parity = events["initialization"].copy()
            parity ^= events["mw_gates"] & (rng.random(n) < error_model.mw_detectable)
            if "t2_dephasing" in events:
                parity ^= events["t2_dephasing"] & (rng.random(n) < error_model.t2_detectable)
            flag = parity ^ (rng.random(n) < error_model.flag_readout_error)
        else:
            flag = np.zeros(n, dtype=bool)

        parts["basis"].append(np.full(n, index))
        parts["photon"].append(photon)
        parts["spin"].append(spin)
        parts["flag"].append(flag)
    arrays = {k: np.concatenate(v) for k, v in parts.items()}
    return GateRunBatch(budget.gate, budget.temperature, herald_prob=herald_prob, **arrays)


@dataclass(frozen=True)
class ErrorDetectionSummary:
    fidelity_all: float
    fidelity_accepted: float
    rejected_fraction: float
    rejected_fraction_all_attempts: float
    accepted: int
    total: int

    @property
    def gain(self) -> float:
        return self.fidelity_accepted - self.fidelity_all

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items()}
        out["gain"] = self.gain
        return out


def error_detect_filter(batch: GateRunBatch) -> ErrorDetectionSummary:
    """Fidelity over all heralded runs and over runs whose flag stayed down."""
    accepted = int((~batch.flag).sum())
    if accepted == 0:
        raise HeraldError("Every heralded run was rejected by the flag")
    all_fid = bell_fidelity_from_counts(batch.counts()).fidelity
    kept_fid = bell_fidelity_from_counts(batch.counts(accepted_only=True)).fidelity
    rejected = 1 - accepted / batch.shots
    summary = ErrorDetectionSummary(
        fidelity_all=all_fid,
        fidelity_accepted=kept_fid,
        rejected_fraction=rejected,
        rejected_fraction_all_attempts=rejected * batch.herald_prob,
        accepted=accepted,
        total=batch.shots,
    )
    logger.info(
        "Error detection (%s, %.1f K): F %.4f -> %.4f, rejected %.1f%%",
        batch.gate, batch.temperature, all_fid, kept_fid, 100 * rejected,
    )
    return summary


# --- heralding and storage --------------------------------------------------


def heralding_efficiency(
    sys: CavitySystem,
    path_efficiency: float,
    omega: Optional[float] = None,
    nuclear: str = "down",
) -> float:
    """Electron-averaged |r|² at the gate frequency times the collection path."""
    if not 0 < path_efficiency <= 1:
        raise InvalidStateError("path_efficiency must be in (0, 1]")
    omega = resonant_readout_frequency(sys, nuclear) if omega is None else omega
    return mean_reflectivity(sys, omega, nuclear) * path_efficiency


def heralding_probability(
    sys: CavitySystem,
    photon: PhotonParams = PhotonParams(),
    omega: Optional[float] = None,
) -> float:
    return photon.nbar_in * heralding_efficiency(sys, photon.path_efficiency, omega) + photon.dark_prob


def storage_decay(f0: float, tau: float, t_grid: Sequence[float]) -> list[tuple[float, float]]:
    """F(t) = ¼ + (f0 − ¼)·exp(−t/τ): decay towards the maximally mixed overlap."""
    if not MIXED_FIDELITY <= f0 <= 1:
        raise InvalidStateError("f0 must be in [0.25, 1]")
    if tau <= 0:
        raise InvalidStateError("tau must be positive")
    return [(float(t), MIXED_FIDELITY + (f0 - MIXED_FIDELITY) * math.exp(-t / tau)) for t in t_grid]


def storage_crossing(f0: float, tau: float, threshold: float = 0.5) -> float:
    """Time at which the storage curve falls to `threshold` (0 if it starts below)."""
    if not MIXED_FIDELITY < threshold < 1:
        raise InvalidStateError("threshold must be in (0.25, 1)")
    if f0 <= threshold:
        return 0.0
    return tau * math.log((f0 - MIXED_FIDELITY) / (threshold - MIXED_FIDELITY))
