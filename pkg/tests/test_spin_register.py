"""
Tests for the electron + ²⁹Si register: conditional gates, geometric phases,
decoupled CeNOTn, XY8, Monte Carlo runs and the ¹³C helpers.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from sivnode.core.errors import InvalidStateError, SequenceError, ShotsError
from sivnode.core.quantum import DensityMatrix, process_fidelity
from sivnode.core.seeding import derive_rng
from sivnode.services.noise import NoiseModel, calibrate_ou
from sivnode.services.spin_register import (
    C13Params,
    Pulse,
    PulseSequence,
    build_gate,
    c13_initialization,
    c13_resonance_tau,
    c13_xy8_coherence,
    cnot_geometric_phases,
    cnot_rabi,
    decoupled_cenotn,
    fit_fringe_frequency,
    gate_unitary,
    gates,
    ideal_cenotn,
    propagate,
    rabi_curve,
    ramsey_fringes,
    ramsey_phase,
    relative_nuclear_phase,
    run_experiment,
    sample_segment_unitaries,
    sequence_from_text,
    sequence_to_text,
    sequence_unitary,
    swap_hold_read_report,
    validate_sequence,
    xy8,
)

# basis index 2n + e
DN_DE, DN_UE, UN_DE, UN_UE = 0, 1, 2, 3

SWAP_HOLD_READ_BUDGET = [
    ("init", 0.995),
    ("sqrt_cnnote", 0.988),
    ("decoupled_cenotn", 0.937),
    ("cnnote", 0.999),
    ("cenotn", 0.980),
    ("sqrt_cenotn", 0.990),
    ("cnnote_readout", 0.999),
    ("readout", 0.995),
]


def _ket_state(index, dim=4):
    return DensityMatrix.basis(dim, index)


def test_cnot_rabi_formula():
    """Oracle test: Ω = A∥/√(4m²−1) and the spectator closes 2m cycles"""
    a_par = 66.25e6
    assert cnot_rabi(a_par, 1) == pytest.approx(a_par / math.sqrt(3), rel=1e-15)
    omega = cnot_rabi(a_par, 2)
    assert omega == pytest.approx(17.105e6, rel=1e-4)
    assert math.hypot(a_par, omega) * (math.pi / omega) == pytest.approx(4 * math.pi, abs=1e-12)
    with pytest.raises(InvalidStateError):
        cnot_rabi(a_par, 0)


def test_geometric_phases_analytic():
    """Oracle test: γ_det = −π(1−√15/4) and Γ ≈ 0.87π for m = 2"""
    gamma_res, gamma_det, big_gamma = cnot_geometric_phases(2)
    assert gamma_res == -math.pi
    assert gamma_det == pytest.approx(-math.pi * (1 - math.sqrt(15) / 4), abs=1e-12)
    assert big_gamma / math.pi == pytest.approx(0.873, abs=0.005)


def test_resonant_mw_pi_pulse(register_params):
    """Contract test: MW1 π pulse moves |↓e↓n⟩ to |↑e↓n⟩"""
    u = sequence_unitary(build_gate("CnNOTe", register_params), register_params)
    assert abs(u[DN_UE, DN_DE]) ** 2 == pytest.approx(1.0, abs=1e-10)


def test_spectator_branch_returns(register_params):
    """Contract test: with the nucleus up the detuned electron returns to its start"""
    u = sequence_unitary(build_gate("CnNOTe", register_params), register_params)
    assert abs(u[UN_DE, UN_DE]) ** 2 == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize(
    "name,untouched",
    [("CnNOTe", (UN_DE, UN_UE)), ("CnNOTe_bar", (DN_DE, DN_UE)), ("CeNOTn", (DN_UE, UN_UE)), ("CeNOTn_bar", (DN_DE, UN_DE))],
)
def test_conditioning_leaves_other_subspace(register_params, name, untouched):
    """Property test: each CNOT leaves the non-addressed subspace invariant"""
    u = sequence_unitary(build_gate(name, register_params), register_params)
    for idx in untouched:
        leak = 1 - abs(u[idx, idx]) ** 2
        assert leak < 1e-9


def test_bar_variant_shares_spectator_block(register_params):
    """Contract test: MW1 and MW2 detune their spectator by -A_par alike, so the spectator blocks coincide"""
    plain = sequence_unitary(build_gate("CnNOTe", register_params), register_params)
    bar = sequence_unitary(build_gate("CnNOTe_bar", register_params), register_params)
    spectator, bar_spectator = [UN_DE, UN_UE], [DN_DE, DN_UE]
    assert np.allclose(plain[np.ix_(spectator, spectator)], bar[np.ix_(bar_spectator, bar_spectator)], atol=1e-10)


@pytest.mark.parametrize("name", ["CnNOTe", "CnNOTe_bar", "CeNOTn", "CeNOTn_bar", "e_pi", "e_pi2", "n_pi", "n_pi2"])
def test_built_gates_are_unitary(register_params, name):
    """Property test: every built-in gate propagates to a unitary"""
    u = gate_unitary(build_gate(name, register_params), register_params).entries
    assert np.max(np.abs(u.conj().T @ u - np.eye(4))) < 1e-9


def test_gate_durations_in_table_mode(register_params):
    """Contract test: table-mode gate times match the measured π times"""
    table = replace(register_params, rabi_mode="table")
    assert build_gate("CnNOTe", table).duration == pytest.approx(30.0e-9, abs=0.1e-9)
    assert build_gate("CeNOTn", table).duration == pytest.approx(25.5e-6, abs=0.1e-6)
    assert build_gate("CeNOTn_bar", table).duration == pytest.approx(20.7e-6, abs=0.1e-6)


def test_unknown_gate_rejected(register_params):
    """Contract test: unknown gate name raises SequenceError"""
    with pytest.raises(SequenceError):
        build_gate("CZ", register_params)


def test_double_cnot_is_identity_on_populations(register_params):
    """Property test: CnNOTe twice returns every basis population"""
    u = sequence_unitary(gates(["CnNOTe", "CnNOTe"], register_params), register_params)
    assert np.allclose(np.abs(u) ** 2, np.eye(4), atol=1e-10)


@pytest.mark.parametrize("transition", ["MW1", "MW2", "RF1", "RF2"])
def test_rabi_oscillations_follow_table_rates(register_params, transition):
    """Oracle test: table-mode Rabi sweeps oscillate at the measured rates"""
    table = replace(register_params, rabi_mode="table")
    rate = {"MW1": 16.7e6, "MW2": 16.7e6, "RF1": 19.6e3, "RF2": 24.2e3}[transition]
    durations = np.linspace(0, 3 / rate, 61)
    pops = rabi_curve(table, transition, durations)
    assert np.allclose(pops, np.sin(math.pi * rate * durations) ** 2, atol=1e-9)


def test_double_cnot_phase_matches_analytic(register_params):
    """Oracle test: propagated double CnNOTe phase equals Γ within 0.01π"""
    u = sequence_unitary(gates(["CnNOTe", "CnNOTe"], register_params), register_params)
    measured = relative_nuclear_phase(u)
    expected = cnot_geometric_phases(2)[2]
    diff = (measured - expected + math.pi) % (2 * math.pi) - math.pi
    assert abs(diff) < 0.01 * math.pi


def test_pulse_by_pulse_propagation_keeps_geometric_phase(register_params):
    """Oracle test: stepping a nuclear X superposition through two CnNOTe gates leaves phase Γ"""
    seq = gates(["CnNOTe", "CnNOTe"], register_params)
    psi = np.zeros(4, dtype=complex)
    psi[[DN_DE, UN_DE]] = 1 / math.sqrt(2)
    rho = initial = DensityMatrix(np.outer(psi, psi.conj()))
    t = 0.0
    for pulse in seq.elements:
        rho = propagate(rho, pulse, register_params, t)
        t += pulse.duration
    u = sequence_unitary(seq, register_params)
    assert np.allclose(rho.entries, u @ initial.entries @ u.conj().T, atol=1e-10)
    diff = (np.angle(rho.entries[UN_DE, DN_DE]) - cnot_geometric_phases(2)[2] + math.pi) % (2 * math.pi) - math.pi
    assert abs(diff) < 0.01 * math.pi
    with pytest.raises(InvalidStateError):
        propagate(DensityMatrix.basis(2, 0), seq.elements[0], register_params)


def test_geometric_phase_cancellation(register_params):
    """Property test: [CnNOTe, CnNOTe, CnNOTe_bar, CnNOTe_bar] imparts no relative phase"""
    seq = gates(["CnNOTe", "CnNOTe", "CnNOTe_bar", "CnNOTe_bar"], register_params)
    u = sequence_unitary(seq, register_params)
    assert abs(relative_nuclear_phase(u)) < 1e-6


def test_ramsey_phase_shift(register_params):
    """Oracle test: Ramsey phase sweep recovers ≈0.87π, and 0 once both variants are applied"""
    shift = ramsey_phase(register_params, ["CnNOTe", "CnNOTe"])
    assert shift / math.pi == pytest.approx(0.873, abs=0.01)
    cancelled = ramsey_phase(register_params, ["CnNOTe", "CnNOTe", "CnNOTe_bar", "CnNOTe_bar"])
    assert abs(cancelled) < 0.01 * math.pi


def test_ramsey_fringes_at_intentional_detuning(register_params):
    """Oracle test: 500 Hz RF detuning gives 500 Hz fringes"""
    waits = np.linspace(0, 8e-3, 81)
    pops = ramsey_fringes(register_params, waits, detuning=500.0)
    assert fit_fringe_frequency(waits, pops, guess=480.0) == pytest.approx(500.0, abs=1.0)


def test_decoupled_cenotn_fidelity(register_params):
    """Contract test: noiseless decoupled CeNOTn implements the CNOT above 0.999"""
    seq = decoupled_cenotn(register_params, rf_segments=8)
    u = sequence_unitary(seq, register_params)
    assert process_fidelity(ideal_cenotn(), u) > 0.999
    assert seq.duration == pytest.approx(29.2e-6, abs=0.3e-6)


def test_decoupled_cenotn_swap(register_params):
    """Smoke test: nucleus flips only for electron down"""
    u = sequence_unitary(decoupled_cenotn(register_params, rf_segments=8), register_params)
    assert abs(u[UN_DE, DN_DE]) ** 2 > 0.999
    assert abs(u[DN_UE, DN_UE]) ** 2 > 0.999


def test_decoupled_bar_variant_inverts_conditioning(register_params):
    """Contract test: swapping RF1/RF2 positions conditions on electron up"""
    seq = decoupled_cenotn(register_params, rf_segments=8, bar=True)
    u = sequence_unitary(seq, register_params)
    assert process_fidelity(ideal_cenotn(bar=True), u) > 0.999
    assert seq.elements[1].frequency == register_params.omega_rf2


@pytest.mark.parametrize("segments", [2, 4, 6, 8, 16])
def test_decoupled_segments_span_integer_periods(register_params, segments):
    """Property test: every RF segment lasts an integer number of RF periods"""
    seq = decoupled_cenotn(register_params, rf_segments=segments)
    assert validate_sequence(seq) == []
    for p in seq.elements:
        if p.channel == "RF":
            periods = p.duration * p.frequency
            assert abs(periods - round(periods)) < 1e-6


def test_decoupled_rejects_bad_segment_counts(register_params):
    """Contract test: odd or unreachable segment counts raise SequenceError"""
    with pytest.raises(SequenceError):
        decoupled_cenotn(register_params, rf_segments=3)
    with pytest.raises(SequenceError):
        decoupled_cenotn(register_params, rf_segments=2000)


def test_validate_sequence_flags_fractional_periods(register_params):
    """Contract test: a windowed RF pulse of 10.5 periods is flagged"""
    f = register_params.omega_rf1
    seq = PulseSequence([Pulse("RF", f, 1e4, 0.0, 10.5 / f)], windowed=True)
    problems = validate_sequence(seq)
    assert len(problems) == 1
    assert "element 0" in problems[0]


def test_swap_hold_read_total(register_params):
    """Oracle test: Swap-Hold-Read total fidelity reproduces 0.891 ± 0.01"""
    report = swap_hold_read_report(register_params, SWAP_HOLD_READ_BUDGET)
    assert report.total == pytest.approx(0.891, abs=0.01)
    rows = dict(report.rows)
    assert rows["decoupled_cenotn"] == pytest.approx(0.935, abs=0.005)


def test_xy8_preserves_superposition(register_params):
    """Smoke test: noiseless XY8-8 returns an electron X superposition"""
    ket = np.array([1, 1, 0, 0], dtype=complex) / math.sqrt(2)
    rho = DensityMatrix.from_ket(ket)
    u = sequence_unitary(xy8(register_params, 8, 1e-6), register_params)
    out = u @ rho.entries @ u.conj().T
    assert abs(out[0, 1]) == pytest.approx(0.5, abs=1e-9)


def test_xy8_rejects_bad_counts(register_params):
    """Contract test: XY8 needs a multiple of 8 pulses"""
    with pytest.raises(SequenceError):
        xy8(register_params, 12, 1e-6)


def test_run_experiment_noiseless_matches_propagation(register_params):
    """Contract test: noiseless Monte Carlo mean state equals direct propagation"""
    seq = build_gate("e_pi2", register_params)
    initial = _ket_state(DN_DE)
    result = run_experiment(seq, initial, register_params, shots=2000, seed=7)
    u = sequence_unitary(seq, register_params)
    assert np.allclose(result.mean_state.entries, u @ initial.entries @ u.conj().T, atol=1e-12)
    assert result.counts.sum() == 2000
    assert result.counts[DN_DE] == pytest.approx(1000, abs=150)


def test_segment_realisation_composes_to_full_sequence(register_params):
    """Contract test: per-segment propagators of one realisation multiply to the whole sequence"""
    early, late = build_gate("CnNOTe_bar", register_params), build_gate("CnNOTe", register_params)
    segments = [early, early + late, late]
    whole = segments[0] + segments[1] + segments[2]
    u0, u1, u2 = sample_segment_unitaries(segments, register_params, NoiseModel.noiseless(), derive_rng(3, "segments"))
    assert np.allclose(u2 @ u1 @ u0, sequence_unitary(whole, register_params), atol=1e-12)


def test_run_experiment_deterministic_with_seed(register_params):
    """Property test: identical seeds give identical noisy histograms"""
    noise = NoiseModel.from_register(register_params)
    seq = xy8(register_params, 8, 2e-6)
    initial = DensityMatrix.from_ket([1, 1, 0, 0])
    a = run_experiment(seq, initial, register_params, noise, shots=30, seed=11)
    b = run_experiment(seq, initial, register_params, noise, shots=30, seed=11)
    assert np.array_equal(a.counts, b.counts)


def test_run_experiment_empty_sequence(register_params):
    """Smoke test: zero-duration sequence samples the initial state"""
    result = run_experiment(PulseSequence(), _ket_state(UN_DE), register_params, shots=50, seed=1)
    assert result.counts[UN_DE] == 50


def test_run_experiment_rejects_zero_shots(register_params):
    """Contract test: shots = 0 raises ShotsError"""
    with pytest.raises(ShotsError):
        run_experiment(PulseSequence(), _ket_state(0), register_params, shots=0)


def test_ou_calibration_hits_both_timescales():
    """Oracle test: calibrated OU noise decays to 1/e at T2* (FID) and at T2 (echo)"""
    noise = calibrate_ou(5e-6, 78e-6)
    assert noise.fid_coherence(5e-6) == pytest.approx(math.exp(-1), rel=1e-6)
    assert noise.echo_coherence(78e-6) == pytest.approx(math.exp(-1), rel=1e-6)
    assert noise.tau_c > 78e-6


def test_ou_sampled_phase_variance():
    """Oracle test: sampled integral variance matches the FID phase variance"""
    noise = calibrate_ou(5e-6, 78e-6)
    rng = np.random.default_rng(3)
    start = noise.initial(rng, 40000)
    _, mean = noise.step(rng, start, 5e-6)
    phases = 2 * math.pi * mean * 5e-6
    assert np.var(phases) == pytest.approx(2.0, rel=0.05)


def test_c13_resonance_position():
    """Oracle test: first ¹³C XY8 resonance at τ = 1/(2(f↓+f↑))"""
    tau = c13_resonance_tau(C13Params())
    assert tau == pytest.approx(58.71e-9, abs=0.05e-9)


def test_c13_xy8_collapse_at_resonance():
    """Contract test: electron coherence collapses at the ¹³C resonance and survives off it"""
    c13 = C13Params()
    tau = c13_resonance_tau(c13)
    assert c13_xy8_coherence(c13, 64, tau) < 0.0
    assert c13_xy8_coherence(c13, 64, 44e-9) > 0.95
    assert c13_xy8_coherence(c13, 8, 44e-9) > 0.99


def test_c13_initialization_bookkeeping(register_params):
    """Contract test: a polarised ¹³C lets a retuned MW π pulse flip the electron fully"""
    report = c13_initialization(replace(register_params, c13=C13Params()))
    assert report.shift_hz == pytest.approx(-3.2e6)
    assert report.flip_polarized > 0.9999
    assert report.flip_unpolarized < 0.99


def test_decoupled_rejects_c13_register(register_params):
    """Contract test: the decoupled gate is defined without the ¹³C"""
    with pytest.raises(SequenceError):
        decoupled_cenotn(replace(register_params, c13=C13Params()))


def test_sequence_text_format(register_params):
    """Contract test: text format keeps every field of every element"""
    seq = decoupled_cenotn(register_params, rf_segments=4)
    parsed = sequence_from_text(sequence_to_text(seq), windowed=True)
    assert parsed == seq


def test_sequence_text_errors():
    """Contract test: malformed lines and unknown channels raise SequenceError"""
    with pytest.raises(SequenceError):
        sequence_from_text("MW 1e9 1e6 0.0\n")
    with pytest.raises(SequenceError):
        sequence_from_text("LASER 1 1 0 1\n")
    parsed = sequence_from_text("# header\nwait 0 0 0 1e-6  # idle\n")
    assert parsed.elements == (Pulse.wait(1e-6),)
