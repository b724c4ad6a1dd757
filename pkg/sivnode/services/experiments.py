"""
Experiment runners shared by the CLI and the HTTP API.

Each runner is a pure function of (config, seed, shots, temperature) that
returns a JSON-ready summary plus the plot-ready tables; writing files is
left to the caller.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from sivnode.adapters.tables import read_peaks_csv, to_json_data
from sivnode.core.abstractions import CacheBackend
from sivnode.core.errors import InvalidStateError
from sivnode.models import ExperimentConfig
from sivnode.services import prometheus_metrics as prom
from sivnode.services.backaction import (
    DURATION_HEADER,
    SWEEP_HEADER,
    duration_sweep,
    frequency_sweep,
    infidelity,
    mean_decoherence_per_photon,
)
from sivnode.services.bayes_readout import ERROR_CURVE_HEADER, TRADEOFF_HEADER, error_curve, tradeoff_table
from sivnode.services.cache import NoOpCacheBackend
from sivnode.services.metrics import record_cache_hit, record_cache_miss, record_shots, timed_simulation
from sivnode.services.cavity import (
    SPECTRUM_HEADER,
    SPIN_STATES,
    SPIN_VALUES,
    CavitySystem,
    contrast_table,
    cooperativity,
    gate_contrast_fidelity,
    mean_reflectivity,
    resonant_readout_frequency,
    spectrum_table,
)
from sivnode.services.optimizer import (
    GRID_SCAN_HEADER,
    RATIO_HEADER,
    expected_readout_budget,
    optimize_frequency,
    optimize_sideband_carrier,
    parameter_grid_scan,
    ratio_scan,
)
from sivnode.services.spin_photon import (
    BASES,
    STORAGE_HEADER,
    ErrorBudget,
    SpinDrive,
    bell_fidelity_from_counts,
    cavity_limited_fidelity,
    electron_photon_gate,
    error_detect_filter,
    find_budget,
    heralding_efficiency,
    heralding_probability,
    phone_gate,
    phone_gate_frequency,
    simulate_gate_counts,
    storage_crossing,
    storage_decay,
)
from sivnode.services.spin_register import fit_fringe_frequency, ramsey_fringes, ramsey_phase, swap_hold_read_report
from sivnode.services.survey import (
    HISTOGRAM_HEADER,
    PEAKS_HEADER,
    fraction_above,
    histogram,
    match_quadruples,
    planted_ensemble,
    sample_distribution,
)
from sivnode.services.thermal import (
    T1_HEADER,
    T2_VS_N_HEADER,
    THERMAL_HEADER,
    calibrate_electron,
    calibrate_nuclear,
    crossover_temperature,
    electron_t2,
    nuclear_t2,
    t1_curves,
    t2_vs_n,
    thermal_curves,
)
from sivnode.validation import config_hash

logger = logging.getLogger(__name__)

QUADRUPLE_HEADER = ("cavity_id", "a_hz", "b_hz", "c_hz", "d_hz", "delta_gs_hz", "delta_es_hz")
STEP_HEADER = ("step", "fidelity")
ERROR_DETECT_HEADER = ("temperature_k", "fidelity_all", "fidelity_accepted", "rejected_fraction", "gain")
FRINGE_HEADER = ("wait_s", "p_up_n")
T1_GRID = tuple(float(t) for t in np.linspace(0.1, 5.0, 50))
FRINGE_DETUNING = 500.0


@dataclass(frozen=True)
class RunRequest:
    seed: int
    shots: Optional[int] = None
    temperature: Optional[float] = None


@dataclass
class Table:
    filename: str
    header: tuple
    rows: list


@dataclass
class ExperimentOutput:
    subcommand: str
    summary: dict
    tables: list[Table] = field(default_factory=list)
    shots: int = 0

    def to_dict(self) -> dict:
        """JSON-ready form for the result cache; non-finite floats are kept as they are."""
        return to_json_data(
            {
                "subcommand": self.subcommand,
                "summary": self.summary,
                "tables": [{"filename": t.filename, "header": t.header, "rows": t.rows} for t in self.tables],
                "shots": self.shots,
            },
            strict=False,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentOutput":
        tables = [Table(t["filename"], tuple(t["header"]), [tuple(r) for r in t["rows"]]) for t in data["tables"]]
        return cls(data["subcommand"], data["summary"], tables, int(data.get("shots", 0)))


Runner = Callable[[ExperimentConfig, RunRequest], ExperimentOutput]
EXPERIMENTS: dict[str, Runner] = {}


def experiment(name: str) -> Callable[[Runner], Runner]:
    def register(func: Runner) -> Runner:
        EXPERIMENTS[name] = func
        return func

    return register


def run_experiment(name: str, config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    if name not in EXPERIMENTS:
        raise KeyError(name)
    logger.info("Running %s (seed=%d, shots=%s, T=%s)", name, request.seed, request.shots, request.temperature)
    output = EXPERIMENTS[name](config, request)
    output.summary = {
        "subcommand": name,
        "seed": request.seed,
        "shots": config.run.shots_for(name, request.shots),
        "temperature": request.temperature,
        **output.summary,
    }
    return output


class ExperimentService:
    """Runs experiments through the result cache and records run metrics."""

    def __init__(self, cache: Optional[CacheBackend] = None) -> None:
        self._cache = cache or NoOpCacheBackend()

    def names(self) -> list[str]:
        return sorted(EXPERIMENTS)

    def execute(
        self,
        name: str,
        config: ExperimentConfig,
        request: RunRequest,
        use_cache: bool = True,
    ) -> tuple[ExperimentOutput, bool]:
        """Returns (output, served_from_cache)."""
        digest = config_hash(config)
        key = (name, digest, request.seed, request.shots, request.temperature)
        if use_cache:
            cached = self._cache.get_result(*key)
            if cached is not None:
                record_cache_hit()
                prom.record_cache_hit(name)
                logger.info("Cache hit for %s (%s)", name, digest[:12])
                return ExperimentOutput.from_dict(cached), True
            record_cache_miss()
            prom.record_cache_miss(name)
        with timed_simulation():
            output = run_experiment(name, config, request)
        record_shots(output.shots)
        prom.record_shots(name, output.shots)
        if use_cache:
            self._cache.set_result(*key, output.to_dict())
        return output, False


def _shots(config: ExperimentConfig, name: str, request: RunRequest) -> int:
    shots = config.run.shots_for(name, request.shots)
    if shots is None:
        raise InvalidStateError(f"No shot count configured for {name}")
    return shots


def _offset(sys: CavitySystem, omega: float) -> float:
    return omega - sys.params.omega_c


def readout_carrier(config: ExperimentConfig, sys: CavitySystem) -> float:
    """Configured phase-readout carrier, or the optimized two-tone carrier."""
    if config.readout.carrier_offset is not None:
        return config.cavity.omega_c + config.readout.carrier_offset
    return optimize_sideband_carrier(sys, config.readout.sideband_offset)


# --- cavity and readout -----------------------------------------------------


@experiment("cavity-scan")
def cavity_scan(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    sys = config.cavity.to_system()
    lo, hi = sys.search_window()
    omegas = np.linspace(lo, hi, config.cavity.scan_points)
    tables = [
        Table(f"spectrum_{e}e_{n}n.csv", SPECTRUM_HEADER, list(spectrum_table(sys, (e, n), omegas)))
        for e, n in SPIN_STATES
    ]
    tables.append(Table("contrast.csv", ("omega_hz", "contrast_down_n", "contrast_up_n"), list(contrast_table(sys, omegas))))
    omega_r = resonant_readout_frequency(sys)
    reflectivity = mean_reflectivity(sys, omega_r)
    summary = {
        "cooperativity": cooperativity(sys.params),
        "resonant_readout_offset_hz": _offset(sys, omega_r),
        "mean_reflectivity": reflectivity,
        "heralding_efficiency": heralding_efficiency(sys, config.photon.path_efficiency, omega_r),
        "gate_contrast_fidelity": gate_contrast_fidelity(sys, omega_r),
    }
    return ExperimentOutput("cavity-scan", summary, tables)


@experiment("readout-error")
def readout_error(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    shots = _shots(config, "readout-error", request)
    sys = config.cavity.to_system()
    carrier = readout_carrier(config, sys)
    model = config.readout.arrival_model(sys, carrier)
    points = error_curve(model, config.readout.nbar_grid, shots, config.readout.epsilon, request.seed)
    summary = {
        "carrier_offset_hz": _offset(sys, carrier),
        "epsilon": config.readout.epsilon,
        "points": [dict(zip(ERROR_CURVE_HEADER, p.as_row())) for p in points],
    }
    tables = [Table("error_curve.csv", ERROR_CURVE_HEADER, [p.as_row() for p in points])]
    return ExperimentOutput("readout-error", summary, tables, shots * 2 * len(points))


@experiment("readout-budget")
def readout_budget(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    shots = _shots(config, "readout-budget", request)
    sys = config.cavity.to_system()
    carrier = readout_carrier(config, sys)
    model = config.readout.arrival_model(sys, carrier)
    rows = tradeoff_table(
        sys,
        model,
        config.readout.target_fidelities,
        detection_efficiency=config.readout.detection_efficiency,
        epsilon=config.readout.epsilon,
        shots=shots,
        seed=request.seed,
    )
    ratios = {}
    for target in config.readout.target_fidelities:
        by_method = {m: n for m, t, n in rows if t == target}
        if "phase" in by_method and "resonant" in by_method and by_method["resonant"] > 0:
            ratios[repr(target)] = by_method["phase"] / by_method["resonant"]
    summary = {
        "carrier_offset_hz": _offset(sys, carrier),
        "rows": [dict(zip(TRADEOFF_HEADER, r)) for r in rows],
        "phase_over_resonant": ratios,
    }
    return ExperimentOutput("readout-budget", summary, [Table("tradeoff.csv", TRADEOFF_HEADER, rows)], shots)


@experiment("backaction")
def backaction(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    sys = config.cavity.to_system()
    lo, hi = sys.search_window()
    omegas = np.linspace(lo, hi, config.readout.sweep_points)
    rows = list(frequency_sweep(sys, omegas, config.readout.backaction_nbar))
    carrier = readout_carrier(config, sys)
    omega_r = resonant_readout_frequency(sys)
    offset = config.readout.sideband_offset
    summary = {
        "nbar": config.readout.backaction_nbar,
        "k_resonant_readout": mean_decoherence_per_photon(sys, omega_r),
        "k_sideband_upper": mean_decoherence_per_photon(sys, carrier + offset),
        "k_sideband_lower": mean_decoherence_per_photon(sys, carrier - offset),
        "resonant_readout_offset_hz": _offset(sys, omega_r),
        "carrier_offset_hz": _offset(sys, carrier),
    }
    durations = np.linspace(0.0, config.readout.backaction_max_duration, 51)
    duration_rows = []
    for mode in ("asymmetric", "symmetric"):
        for electron in SPIN_VALUES:
            xs = duration_sweep(mode, sys, electron, omega_r, config.readout.backaction_photon_rate, durations)
            duration_rows.extend((float(t), mode, electron, float(x), infidelity(float(x))) for t, x in zip(durations, xs))
    tables = [
        Table("backaction_sweep.csv", SWEEP_HEADER, rows),
        Table("backaction_duration.csv", DURATION_HEADER, duration_rows),
    ]
    return ExperimentOutput("backaction", summary, tables)


# --- register ---------------------------------------------------------------


def _gate_totals(config: ExperimentConfig, sys: CavitySystem) -> list[dict]:
    totals = []
    for budget in config.error_budgets():
        omega = phone_gate_frequency(sys) if budget.gate == "phone" else None
        cavity = cavity_limited_fidelity(sys, budget.gate, omega)
        totals.append({
            "gate": budget.gate,
            "temperature": budget.temperature,
            "budget_total": budget.total(),
            "cavity_limited_fidelity": cavity,
        "driven_fidelity": driven,
            "simulated_total": budget.with_contrast(cavity).total(),
        })
    return totals


@experiment("gates")
def gates_report(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    params = config.register.to_params()
    report = swap_hold_read_report(params, config.register.budget_rows(), config.register.rf_segments, config.register.pad)
    summary = {"swap_hold_read": report.to_dict(), "spin_photon": _gate_totals(config, config.cavity.to_system())}
    return ExperimentOutput("gates", summary, [Table("swap_hold_read.csv", STEP_HEADER, list(report.rows))])


@experiment("geom-phase")
def geom_phase(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    params = config.register.to_params()
    double = ramsey_phase(params, ["CnNOTe", "CnNOTe"])
    paired = ramsey_phase(params, ["CnNOTe", "CnNOTe", "CnNOTe_bar", "CnNOTe_bar"])
    waits = np.linspace(0, 8e-3, 81)
    fringes = ramsey_fringes(params, waits, FRINGE_DETUNING)
    summary = {
        "double_cnnote_phase_over_pi": double / math.pi,
        "paired_phase_over_pi": paired / math.pi,
        "fringe_detuning_hz": FRINGE_DETUNING,
        "fitted_fringe_hz": fit_fringe_frequency(waits, fringes, guess=0.96 * FRINGE_DETUNING),
    }
    rows = [(float(t), float(p)) for t, p in zip(waits, fringes)]
    return ExperimentOutput("geom-phase", summary, [Table("ramsey_fringes.csv", FRINGE_HEADER, rows)])


# --- thermal ----------------------------------------------------------------


def calibrated_thermal(config: ExperimentConfig, shots: int, seed: int):
    """Phonon constants and fluctuator bath, calibrated to the anchors when enabled."""
    section = config.thermal
    params, bath = section.to_params(), section.to_bath()
    if section.calibrate:
        anchors = section.to_anchors()
        params = calibrate_electron(params, anchors)
        params, bath = calibrate_nuclear(params, bath, anchors, shots, seed)
    return params, bath


def _calibration_dict(params, bath) -> dict:
    return {
        "prefactor_1ph": params.prefactor_1ph,
        "prefactor_2ph": params.prefactor_2ph,
        "orbach_prefactor": params.orbach_prefactor,
        "t_noise_bath": params.t_noise_bath,
        "t1_coupling": params.t1_coupling,
        "fluctuators": [{"omega": f.omega, "coupling": f.coupling} for f in bath.fluctuators],
    }


@experiment("memory")
def memory(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    shots = _shots(config, "memory", request)
    temperature = request.temperature or config.thermal.memory_temperature
    params, bath = calibrated_thermal(config, shots, request.seed)
    table = t2_vs_n(bath, temperature, config.thermal.n_pulses, shots, request.seed)
    summary = {
        "temperature": temperature,
        "alpha": table.alpha,
        "rows": [{"n_pulses": r.n_pulses, "t2_s": r.t2, "beta": r.beta, "flagged": r.flagged} for r in table.rows],
        "calibration": _calibration_dict(params, bath),
    }
    return ExperimentOutput("memory", summary, [Table("t2_vs_n.csv", T2_VS_N_HEADER, table.csv_rows())], shots)


@experiment("thermal")
def thermal(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    shots = _shots(config, "thermal", request)
    section = config.thermal
    params, bath = calibrated_thermal(config, shots, request.seed)
    grid = np.geomspace(section.t_min, section.t_max, section.t_points)
    rows = list(thermal_curves(params, bath, grid, shots, request.seed))
    t1_rows = t1_curves(params, section.splittings, T1_GRID)
    t2n = [r[2] for r in rows]
    anchors = section.to_anchors()
    summary = {
        "calibration": _calibration_dict(params, bath),
        "anchors": {
            "t2_e": [electron_t2(t, params) for t in (anchors.t_low, anchors.t_high)],
            "t2_n": [nuclear_t2(t, params, bath, shots, request.seed) for t in (anchors.t_low, anchors.t_high)],
        },
        "t2_n_peak_temperature": float(grid[int(np.argmax(t2n))]),
        "t2_n_initial_rise": bool(max(t2n) > t2n[0]),
        "crossover_temperatures": {
            repr(d): crossover_temperature(params.with_delta_gs(d)) for d in section.splittings
        },
    }
    tables = [
        Table("thermal.csv", THERMAL_HEADER, rows),
        Table("t1_curves.csv", T1_HEADER, t1_rows),
    ]
    return ExperimentOutput("thermal", summary, tables, shots)


# --- spin-photon gates ------------------------------------------------------


def _gate_run(config: ExperimentConfig, request: RunRequest, gate: str, name: str) -> ExperimentOutput:
    shots = _shots(config, name, request)
    temperature = request.temperature if request.temperature is not None else 0.1
    sys = config.cavity.to_system()
    photon = config.photon.to_params()
    budget = find_budget(config.error_budgets(), gate, temperature)
    omega = phone_gate_frequency(sys) if gate == "phone" else resonant_readout_frequency(sys)
    if gate == "phone":
        expected = phone_gate(sys, budget, photon, omega)
    else:
        expected = electron_photon_gate(sys, budget, photon, omega)
    cavity = cavity_limited_fidelity(sys, gate, omega)
    phonons = config.thermal.to_params()
    if config.thermal.calibrate:
        phonons = calibrate_electron(phonons, config.thermal.to_anchors())
    drive = SpinDrive.at_temperature(config.register.to_params(), phonons, temperature, seed=request.seed)
    driven = cavity_limited_fidelity(sys, gate, omega, photon, drive)
    herald = heralding_probability(sys, photon, omega)
    batch = simulate_gate_counts(budget.with_contrast(cavity), shots, request.seed, herald_prob=herald)
    counts = batch.counts()
    estimate = bell_fidelity_from_counts(counts)
    summary = {
        "gate": gate,
        "temperature": temperature,
        "laser_offset_hz": _offset(sys, omega),
        "heralded_runs": batch.shots,
        "herald_probability": herald,
        "attempts_estimate": batch.shots / herald,
        "flag_count": int(batch.flag.sum()),
        "counts": {basis: counts[basis] for basis in BASES},
        "cavity_limited_fidelity": cavity,
        "expected_fidelity": expected.fidelity,
        "budget_total": budget.total(),
        **estimate.to_dict(),
    }
    rows = [(basis, *(int(c) for c in counts[basis])) for basis in BASES]
    table = Table(f"{gate}_counts.csv", ("basis", "n_00", "n_01", "n_10", "n_11"), rows)
    return ExperimentOutput(name, summary, [table], shots)


@experiment("entangle-e")
def entangle_electron(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    return _gate_run(config, request, "electron_photon", "entangle-e")


@experiment("phone")
def phone(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    return _gate_run(config, request, "phone", "phone")


@experiment("error-detect")
def error_detect(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    shots = _shots(config, "error-detect", request)
    sys = config.cavity.to_system()
    omega = phone_gate_frequency(sys)
    cavity = cavity_limited_fidelity(sys, "phone", omega)
    herald = heralding_probability(sys, config.photon.to_params(), omega)
    budgets: list[ErrorBudget] = [b for b in config.error_budgets() if b.gate == "phone"]
    if request.temperature is not None:
        budgets = [find_budget(budgets, "phone", request.temperature)]
    results = []
    for budget in sorted(budgets, key=lambda b: b.temperature):
        batch = simulate_gate_counts(
            budget.with_contrast(cavity),
            shots,
            request.seed,
            config.error_model.to_model(),
            error_detection=True,
            herald_prob=herald,
        )
        results.append((budget.temperature, error_detect_filter(batch)))
    summary = {"runs": [{"temperature": t, **s.to_dict()} for t, s in results]}
    rows = [(t, s.fidelity_all, s.fidelity_accepted, s.rejected_fraction, s.gain) for t, s in results]
    return ExperimentOutput("error-detect", summary, [Table("error_detect.csv", ERROR_DETECT_HEADER, rows)], shots * len(results))


@experiment("storage")
def storage(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    section = config.error_model
    grid = np.linspace(0.0, section.storage_t_max, section.storage_points)
    tables = []
    crossings = {}
    for curve in section.storage:
        tables.append(Table(f"storage_{curve.label}.csv", STORAGE_HEADER, storage_decay(curve.f0, curve.tau, grid)))
        crossings[curve.label] = storage_crossing(curve.f0, curve.tau, section.storage_threshold)
    highest = max(section.storage, key=lambda c: c.f0).label
    latest = max(crossings, key=crossings.get)
    if crossings[latest] > crossings[highest]:
        logger.warning("Storage curve %s starts highest but %s stays above %.2f longer", highest, latest, section.storage_threshold)
    summary = {"threshold": section.storage_threshold, "crossing_s": crossings}
    return ExperimentOutput("storage", summary, tables)


# --- optimizer and survey ---------------------------------------------------


@experiment("optimize")
def optimize(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    shots = _shots(config, "optimize", request)
    opt = config.optimizer.to_config(config.cavity.omega_c, shots)
    sys = opt.system
    optimum = optimize_frequency(opt)
    lo, hi = opt.window
    scan = list(ratio_scan(sys, np.linspace(lo, hi, config.optimizer.scan_points), opt.alpha))
    budget = expected_readout_budget(opt, request.seed, optimum)
    tables = [Table("ratio_scan.csv", RATIO_HEADER, scan)]
    section = config.optimizer
    if section.g_values and section.kappa_in_values:
        grid_rows = list(parameter_grid_scan(opt, section.g_values, section.kappa_in_values, request.seed))
        tables.append(Table("grid_scan.csv", GRID_SCAN_HEADER, grid_rows))
    summary = {
        "omega_star_offset_hz": _offset(sys, optimum.omega_star),
        "ratio_star": optimum.ratio_star,
        "d_e": optimum.d_e,
        "d_n": optimum.d_n,
        "budget": budget.to_dict(),
    }
    return ExperimentOutput("optimize", summary, tables, shots)


@experiment("survey")
def survey(config: ExperimentConfig, request: RunRequest) -> ExperimentOutput:
    section = config.survey
    repeats = _shots(config, "survey", request)
    planted = None
    if section.peaks_csv:
        spectra = read_peaks_csv(section.peaks_csv)
    else:
        planted = planted_ensemble(section.planted_counts, section.high_fraction, request.seed, section.tol, section.jitter)
        spectra = list(planted.spectra)
    quad_rows = []
    for spectrum in spectra:
        for q in match_quadruples(spectrum, section.tol):
            quad_rows.append((spectrum.cavity_id, q.a, q.b, q.c, q.d, q.delta_gs, q.delta_es))
    result = sample_distribution(spectra, section.mu, section.sigma, repeats, request.seed, section.tol)
    fraction = fraction_above(result.values, section.threshold)
    summary = {
        "cavities": len(spectra),
        "fraction_above": fraction.value,
        "fraction_error": fraction.error,
        "threshold_hz": section.threshold,
        "mean_per_repeat": result.mean_per_repeat,
        "skipped": result.skipped,
        "true_fraction": planted.true_fraction if planted else None,
    }
    tables = [
        Table("histogram.csv", HISTOGRAM_HEADER, histogram(result.values, section.bin_width)),
        Table("quadruples.csv", QUADRUPLE_HEADER, quad_rows),
    ]
    if planted is not None:
        peak_rows = [(s.cavity_id, p, w) for s in spectra for p, w in zip(s.peaks, s.intensities)]
        tables.append(Table("peaks.csv", PEAKS_HEADER, peak_rows))
    return ExperimentOutput("survey", summary, tables, repeats)
