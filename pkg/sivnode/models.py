"""
Experiment configuration schema.

Every section carries a `sources` map (field -> provenance note) that is
kept in the shipped config file but excluded from dumps, so it never
enters the config hash.
"""

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from sivnode.core.seeding import DEFAULT_SEED
from sivnode.services.bayes_readout import ArrivalModel
from sivnode.services.cavity import CavityParams, CavitySystem, SpinLines
from sivnode.services.optimizer import OptimizerConfig
from sivnode.services.spin_photon import FACTOR_NAMES, GATES, ErrorBudget, ErrorModel, PhotonParams, default_budgets
from sivnode.services.spin_register import C13Params, RegisterParams
from sivnode.services.thermal import Fluctuator, FluctuatorBath, PhononParams, ThermalAnchors

# Schema constants
CONSISTENCY_TOL = 0.01
MAX_GRID_POINTS = 200_000
MAX_SHOTS = 10_000_000
LINE_KEYS = {"up_up": ("up", "up"), "up_down": ("up", "down"), "down_up": ("down", "up"), "down_down": ("down", "down")}

SUBCOMMANDS = (
    "cavity-scan",
    "readout-error",
    "readout-budget",
    "backaction",
    "gates",
    "geom-phase",
    "memory",
    "entangle-e",
    "phone",
    "error-detect",
    "storage",
    "thermal",
    "optimize",
    "survey",
)


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    sources: dict[str, str] = Field(default_factory=dict, exclude=True, description="Provenance per field")


class CavitySection(Section):
    omega_c: float = Field(default=406.610e12, gt=0, description="Cavity resonance (Hz)")
    kappa_in: float = Field(default=202e9, gt=0, description="Input-coupling rate, FWHM (Hz)")
    kappa_tot: float = Field(default=250e9, gt=0, description="Total cavity linewidth, FWHM (Hz)")
    g: float = Field(default=3.19e9, ge=0, description="Single-photon coupling (Hz)")
    gamma: float = Field(default=0.1e9, gt=0, description="SiV linewidth, FWHM (Hz)")
    line_offsets: dict[str, float] = Field(
        default_factory=lambda: {"up_up": 68.504e9, "up_down": 68.537e9, "down_up": 69.053e9, "down_down": 69.022e9},
        description="Optical line of each (electron, nuclear) state relative to omega_c (Hz)",
    )
    scan_points: int = Field(default=2001, ge=2, le=MAX_GRID_POINTS)

    @model_validator(mode="after")
    def check_cavity(self) -> "CavitySection":
        if self.kappa_in > self.kappa_tot:
            raise ValueError("kappa_in must not exceed kappa_tot")
        if set(self.line_offsets) != set(LINE_KEYS):
            raise ValueError(f"line_offsets needs exactly the keys {sorted(LINE_KEYS)}")
        if len(set(self.line_offsets.values())) != 4:
            raise ValueError("The four optical lines must be distinct")
        return self

    def to_system(self) -> CavitySystem:
        params = CavityParams(self.omega_c, self.kappa_in, self.kappa_tot, self.g, self.gamma)
        lines = {LINE_KEYS[k]: self.omega_c + v for k, v in self.line_offsets.items()}
        return CavitySystem(params, SpinLines(lines))


class C13Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    a_par: float = Field(default=3.2e6, gt=0)
    a_perp: float = Field(default=0.36e6, ge=0)
    rf_down: float = Field(default=1.041e6, gt=0)
    rf_up: float = Field(default=7.475e6, gt=0)
    rabi: float = Field(default=5.23e3, gt=0)


class StepFidelity(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    step: str = Field(min_length=1)
    fidelity: float = Field(gt=0, le=1)


def _default_swap_hold_read() -> list[StepFidelity]:
    rows = [
        ("init", 0.995),
        ("sqrt_cnnote", 0.988),
        ("decoupled_cenotn", 0.937),
        ("cnnote", 0.999),
        ("cenotn", 0.980),
        ("sqrt_cenotn", 0.990),
        ("cnnote_readout", 0.999),
        ("readout", 0.995),
    ]
    return [StepFidelity(step=s, fidelity=f) for s, f in rows]


class RegisterSection(Section):
    omega_mw1: float = Field(default=12.00746e9, gt=0)
    omega_mw2: float = Field(default=12.07384e9, gt=0)
    omega_rf1: float = Field(default=29.636e6, gt=0)
    omega_rf2: float = Field(default=36.614e6, gt=0)
    a_par: float = Field(default=66.25e6, gt=0)
    rabi_e: float = Field(default=16.7e6, gt=0)
    rabi_n1: float = Field(default=19.6e3, gt=0)
    rabi_n2: float = Field(default=24.2e3, gt=0)
    t1_e: float = Field(default=2.9, gt=0)
    t2_e_star: float = Field(default=5e-6, gt=0)
    t2_e_echo: float = Field(default=78e-6, gt=0)
    t1_n: Optional[float] = Field(default=None, gt=0)
    t2_n_star: float = Field(default=5e-3, gt=0)
    t2_n_echo: float = Field(default=79e-3, gt=0)
    rabi_mode: Literal["formula", "table"] = "formula"
    cnot_m: int = Field(default=2, ge=1)
    rf_segments: int = Field(default=8, ge=2)
    pad: float = Field(default=0.35e-6, ge=0)
    c13: Optional[C13Section] = None
    swap_hold_read: list[StepFidelity] = Field(default_factory=_default_swap_hold_read, min_length=1)

    @model_validator(mode="after")
    def check_hyperfine(self) -> "RegisterSection":
        if abs((self.omega_rf1 + self.omega_rf2) - self.a_par) > CONSISTENCY_TOL * self.a_par:
            raise ValueError("omega_rf1 + omega_rf2 must match a_par within 1%")
        if abs((self.omega_mw2 - self.omega_mw1) - self.a_par) > CONSISTENCY_TOL * self.a_par:
            raise ValueError("omega_mw2 - omega_mw1 must match a_par within 1%")
        if self.rf_segments % 2:
            raise ValueError("rf_segments must be even")
        return self

    def to_params(self, with_c13: bool = False) -> RegisterParams:
        fields = self.model_dump(exclude={"c13", "swap_hold_read", "rf_segments", "pad"})
        c13 = C13Params(**self.c13.model_dump()) if (with_c13 and self.c13 is not None) else None
        return RegisterParams(**fields, c13=c13)

    def budget_rows(self) -> list[tuple[str, float]]:
        return [(row.step, row.fidelity) for row in self.swap_hold_read]


class GateBudget(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    gate: Literal["electron_photon", "phone"]
    temperature: float = Field(gt=0, description="Kelvin")
    initialization: float = Field(default=1.0, gt=0, le=1)
    mw_gates: float = Field(default=1.0, gt=0, le=1)
    siv_contrast: float = Field(default=1.0, gt=0, le=1)
    dark_counts: float = Field(default=1.0, gt=0, le=1)
    two_photon: float = Field(default=1.0, gt=0, le=1)
    readout: float = Field(default=1.0, gt=0, le=1)
    tdi_contrast: float = Field(default=1.0, gt=0, le=1)
    tdi_lock: float = Field(default=1.0, gt=0, le=1)
    t2_dephasing: float = Field(default=1.0, gt=0, le=1)

    def to_budget(self) -> ErrorBudget:
        return ErrorBudget(self.gate, self.temperature, **{n: getattr(self, n) for n in FACTOR_NAMES})


def _default_budgets() -> list[GateBudget]:
    return [
        GateBudget(gate=b.gate, temperature=b.temperature, **{n: getattr(b, n) for n in FACTOR_NAMES})
        for b in default_budgets()
    ]


class StorageCurve(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    label: str = Field(min_length=1)
    f0: float = Field(ge=0.25, le=1)
    tau: float = Field(gt=0, description="Decay constant (s)")


class ErrorModelSection(Section):
    mw_detectable: float = Field(default=0.4, ge=0, le=1)
    t2_detectable: float = Field(default=0.05, ge=0, le=1)
    flag_readout_error: float = Field(default=0.05, ge=0, le=0.5)
    storage: list[StorageCurve] = Field(
        default_factory=lambda: [
            StorageCurve(label="error_detected", f0=0.71, tau=4.5e-3),
            StorageCurve(label="all_runs", f0=0.66, tau=3.8e-3),
        ]
    )
    storage_threshold: float = Field(default=0.5, gt=0.25, lt=1)
    storage_t_max: float = Field(default=10e-3, gt=0)
    storage_points: int = Field(default=101, ge=2, le=MAX_GRID_POINTS)

    def to_model(self) -> ErrorModel:
        return ErrorModel(self.mw_detectable, self.t2_detectable, self.flag_readout_error)


class FluctuatorEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    omega: float = Field(gt=0, description="Phonon-addressable transition (Hz)")
    coupling: float = Field(ge=0, description="Shift imposed on the nucleus (Hz)")


class ThermalSection(Section):
    delta_gs: float = Field(default=554e9, gt=0)
    omega_qubit: float = Field(default=12e9, gt=0)
    prefactor_1ph: float = Field(default=1.982982e-4, gt=0)
    prefactor_2ph: float = Field(default=1.202661e9, gt=0)
    orbach_prefactor: float = Field(default=2.596589e4, gt=0)
    t_noise_bath: float = Field(default=78.0e-6, gt=0)
    t2_c13: float = Field(default=0.5, gt=0)
    t1_coupling: float = Field(default=3.74, gt=0)
    fluctuators: list[FluctuatorEntry] = Field(
        default_factory=lambda: [FluctuatorEntry(omega=26e9, coupling=7.3), FluctuatorEntry(omega=34e9, coupling=2.4)]
    )
    base_rate: float = Field(default=2.7e7, ge=0)
    anchor_temperatures: tuple[float, float] = (0.1, 4.3)
    anchor_t1e: tuple[float, float] = (2.9, 17e-3)
    anchor_t2e: tuple[float, float] = (78e-6, 400e-9)
    anchor_t2n: tuple[float, float] = (79e-3, 4.5e-3)
    calibrate: bool = True
    t_min: float = Field(default=0.1, gt=0)
    t_max: float = Field(default=5.0, gt=0)
    t_points: int = Field(default=25, ge=2, le=1000)
    memory_temperature: float = Field(default=0.1, gt=0)
    n_pulses: list[int] = Field(default_factory=lambda: [8, 64, 256, 1024], min_length=1)
    splittings: list[float] = Field(default_factory=lambda: [50e9, 150e9, 300e9, 416e9, 554e9], min_length=1)

    @field_validator("n_pulses")
    @classmethod
    def check_pulses(cls, value: list[int]) -> list[int]:
        if any(n <= 0 or n % 8 for n in value):
            raise ValueError("n_pulses must be positive multiples of 8")
        return value

    @model_validator(mode="after")
    def check_range(self) -> "ThermalSection":
        if self.t_max <= self.t_min:
            raise ValueError("t_max must exceed t_min")
        if self.delta_gs <= self.omega_qubit:
            raise ValueError("delta_gs must exceed omega_qubit")
        return self

    def to_params(self) -> PhononParams:
        return PhononParams(
            delta_gs=self.delta_gs,
            omega_qubit=self.omega_qubit,
            prefactor_1ph=self.prefactor_1ph,
            prefactor_2ph=self.prefactor_2ph,
            orbach_prefactor=self.orbach_prefactor,
            t_noise_bath=self.t_noise_bath,
            t2_c13=self.t2_c13,
            t1_coupling=self.t1_coupling,
        )

    def to_bath(self) -> FluctuatorBath:
        return FluctuatorBath(tuple(Fluctuator(f.omega, f.coupling) for f in self.fluctuators), self.base_rate)

    def to_anchors(self) -> ThermalAnchors:
        lo, hi = self.anchor_temperatures
        return ThermalAnchors(lo, hi, self.anchor_t1e, self.anchor_t2e, self.anchor_t2n)


class ReadoutSection(Section):
    carrier_offset: Optional[float] = Field(
        default=None, description="Phase-readout carrier relative to omega_c (Hz); None = optimized"
    )
    sideband_offset: float = Field(default=3.0e8, gt=0)
    epsilon: float = Field(default=0.2, gt=0, le=0.5)
    jitter: float = Field(default=70e-12, ge=0)
    background_frac: float = Field(default=0.05, ge=0, le=1)
    beat_periods: int = Field(default=600, ge=1)
    detection_efficiency: float = Field(default=0.70, gt=0, le=1)
    nbar_grid: list[float] = Field(default_factory=lambda: [1.0, 2.0, 5.0, 10.0, 15.0, 25.0, 40.0], min_length=1)
    target_fidelities: list[float] = Field(default_factory=lambda: [0.9, 0.95], min_length=1)
    backaction_nbar: float = Field(default=1.0, ge=0)
    backaction_photon_rate: float = Field(default=1.0e7, gt=0, description="Incident photons per second for the duration sweep")
    backaction_max_duration: float = Field(default=5.0e-6, gt=0)
    sweep_points: int = Field(default=401, ge=2, le=MAX_GRID_POINTS)

    @field_validator("target_fidelities")
    @classmethod
    def check_targets(cls, value: list[float]) -> list[float]:
        if any(not 0.5 < t < 1 for t in value):
            raise ValueError("target fidelities must lie in (0.5, 1)")
        return value

    @field_validator("nbar_grid")
    @classmethod
    def check_grid(cls, value: list[float]) -> list[float]:
        if any(n < 0 for n in value):
            raise ValueError("nbar_grid values must be >= 0")
        return value

    def arrival_model(self, sys: CavitySystem, carrier: float) -> ArrivalModel:
        return ArrivalModel.from_cavity(
            sys,
            carrier,
            sideband_offset=self.sideband_offset,
            background_frac=self.background_frac,
            jitter=self.jitter,
            beat_periods=self.beat_periods,
        )


class PhotonSection(Section):
    nbar_in: float = Field(default=5e-3, gt=0, le=1)
    timebin_sep: float = Field(default=143.5e-9, gt=0)
    pulse_width: float = Field(default=20.8e-9, gt=0)
    pulse_shape: Literal["gaussian", "square"] = "gaussian"
    path_efficiency: float = Field(default=0.52, gt=0, le=1)
    dark_prob: float = Field(default=2.9e-6, ge=0, lt=1)

    def to_params(self) -> PhotonParams:
        return PhotonParams(**self.model_dump())


class DeviceSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    g: float = Field(default=7e9, ge=0)
    kappa_in: float = Field(default=180e9, gt=0)
    kappa_tot: float = Field(default=250e9, gt=0)
    delta_a: float = Field(default=100e9)
    delta_e: float = Field(default=1.5e9, gt=0)
    delta_n: float = Field(default=0.05e9, gt=0)
    gamma: float = Field(default=0.16e9, gt=0)

    @model_validator(mode="after")
    def check_kappa(self) -> "DeviceSection":
        if self.kappa_in > self.kappa_tot:
            raise ValueError("kappa_in must not exceed kappa_tot")
        return self


class OptimizerSection(Section):
    alpha: float = Field(default=0.1, ge=0)
    target_readout_fidelity: float = Field(default=0.95, gt=0.5, lt=1)
    reference_ratio: float = Field(default=2.0, gt=0)
    reference_offset: float = Field(default=50e9)
    grid_points: int = Field(default=10_000, ge=3, le=MAX_GRID_POINTS)
    beat_periods: int = Field(default=600, ge=1)
    scan_points: int = Field(default=2001, ge=2, le=MAX_GRID_POINTS)
    device: DeviceSection = Field(default_factory=DeviceSection)
    g_values: list[float] = Field(default_factory=list)
    kappa_in_values: list[float] = Field(default_factory=list)

    def to_config(self, omega_c: float, shots: int = 4000) -> OptimizerConfig:
        sys = CavitySystem.from_detunings(omega_c=omega_c, **self.device.model_dump())
        return OptimizerConfig(
            system=sys,
            alpha=self.alpha,
            target_readout_fidelity=self.target_readout_fidelity,
            reference_ratio=self.reference_ratio,
            reference_offset=self.reference_offset,
            grid_points=self.grid_points,
            shots=shots,
            beat_periods=self.beat_periods,
        )


class SurveySection(Section):
    peaks_csv: Optional[str] = Field(default=None, description="Peak list; None = planted synthetic ensemble")
    mu: float = Field(default=2.0, gt=0)
    sigma: float = Field(default=2.0, gt=0)
    tol: float = Field(default=2e9, gt=0)
    threshold: float = Field(default=400e9, gt=0)
    bin_width: float = Field(default=10e9, gt=0)
    planted_counts: list[int] = Field(default_factory=lambda: [2] * 11 + [3], min_length=1)
    high_fraction: float = Field(default=0.12, ge=0, le=1)
    jitter: float = Field(default=1e9, ge=0)


def _default_shots() -> dict[str, int]:
    return {
        "readout-error": 10_000,
        "readout-budget": 4000,
        "memory": 2000,
        "entangle-e": 100_000,
        "phone": 100_000,
        "error-detect": 100_000,
        "thermal": 2000,
        "optimize": 4000,
        "survey": 10_000,
        "sequence": 1000,
    }


class RunSection(Section):
    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2**64)
    shots: dict[str, int] = Field(default_factory=_default_shots)

    @field_validator("shots")
    @classmethod
    def check_shots(cls, value: dict[str, int]) -> dict[str, int]:
        for name, n in value.items():
            if not 0 < n <= MAX_SHOTS:
                raise ValueError(f"shots for {name} must be in (0, {MAX_SHOTS}]")
        return value

    def shots_for(self, subcommand: str, override: Optional[int] = None) -> Optional[int]:
        if override is not None:
            return override
        return self.shots.get(subcommand)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    cavity: CavitySection = Field(default_factory=CavitySection)
    register: RegisterSection = Field(default_factory=RegisterSection)
    budgets: list[GateBudget] = Field(default_factory=_default_budgets, min_length=1)
    error_model: ErrorModelSection = Field(default_factory=ErrorModelSection)
    thermal: ThermalSection = Field(default_factory=ThermalSection)
    readout: ReadoutSection = Field(default_factory=ReadoutSection)
    photon: PhotonSection = Field(default_factory=PhotonSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    survey: SurveySection = Field(default_factory=SurveySection)
    run: RunSection = Field(default_factory=RunSection)

    @model_validator(mode="after")
    def check_budgets(self) -> "ExperimentConfig":
        seen = set()
        for b in self.budgets:
            key = (b.gate, round(b.temperature, 9))
            if key in seen:
                raise ValueError(f"Duplicate budget for {b.gate} at {b.temperature} K")
            seen.add(key)
        missing = [g for g in GATES if g not in {b.gate for b in self.budgets}]
        if missing:
            raise ValueError(f"No budget for gates {missing}")
        return self

    def error_budgets(self) -> tuple[ErrorBudget, ...]:
        return tuple(b.to_budget() for b in self.budgets)


class ExperimentRequest(BaseModel):
    """Body of POST /api/experiments/{name}."""

    model_config = ConfigDict(extra="forbid")

    overrides: dict = Field(default_factory=dict, description="Config fragment merged over the base config")
    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    shots: Optional[int] = Field(default=None, gt=0, le=MAX_SHOTS)
    temperature: Optional[float] = Field(default=None, gt=0, description="Kelvin")
    use_cache: bool = True
