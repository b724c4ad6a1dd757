"""
Tests for phonon-limited electron coherence, the fluctuator-bath nuclear
model and dynamical decoupling.
"""

import math

import numpy as np
import pytest

from sivnode.core.errors import InvalidStateError, ShotsError, TemperatureError
from sivnode.models import ExperimentConfig
from sivnode.services.experiments import calibrated_thermal
from sivnode.services.thermal import (
    T1_HEADER,
    DecouplingSequence,
    FluctuatorBath,
    PhononParams,
    ThermalAnchors,
    bose,
    calibrate_electron,
    crossover_temperature,
    electron_t1,
    electron_t2,
    gaussian_coherence,
    motional_mc,
    nuclear_t2,
    single_phonon_rate,
    t1_curves,
    t2_vs_n,
    telegraph_coherence,
    two_phonon_rate,
)

SEED = 20240501


@pytest.fixture(scope="module")
def calibrated():
    """Electron and nuclear constants fitted to the measured anchors."""
    return calibrated_thermal(ExperimentConfig(), 2000, SEED)


def test_bose_occupation():
    """Oracle test: n̄ at 12 GHz and 100 mK; classical limit kT/hν"""
    x = 4.799243e-11 * 12e9 / 0.1
    assert bose(12e9, 0.1) == pytest.approx(1 / math.expm1(x))
    assert bose(1e9, 100.0) == pytest.approx(100.0 / (4.799243e-11 * 1e9), rel=1e-2)
    assert bose(1e15, 0.01) == pytest.approx(0.0, abs=1e-300)


@pytest.mark.parametrize("temperature", [0.0, -1.0])
def test_non_positive_temperature_rejected(temperature):
    """Contract test: T ≤ 0 is a TemperatureError (also a ValueError)"""
    with pytest.raises(TemperatureError):
        bose(12e9, temperature)
    with pytest.raises(ValueError):
        electron_t1(temperature, PhononParams())


def test_electron_anchors_reproduced():
    """Oracle test: calibrated constants hit the T1/T2 anchors exactly"""
    anchors = ThermalAnchors()
    params = calibrate_electron(PhononParams(), anchors)
    for i, t in enumerate((anchors.t_low, anchors.t_high)):
        assert electron_t1(t, params) == pytest.approx(anchors.t1e[i], rel=1e-9)
        assert electron_t2(t, params) == pytest.approx(anchors.t2e[i], rel=1e-9)


def test_two_phonon_process_takes_over():
    """Property test: two-phonon dephasing dominates above the crossover"""
    params = calibrate_electron(PhononParams())
    t_x = crossover_temperature(params)
    assert 0.1 < t_x < 4.3
    assert two_phonon_rate(t_x, params) == pytest.approx(single_phonon_rate(t_x, params), rel=1e-6)
    assert two_phonon_rate(4.3, params) > single_phonon_rate(4.3, params)


def test_t1_degradation_falls_with_splitting():
    """Property test: at 4 K a larger Δ_GS degrades T1 less"""
    params = calibrate_electron(PhononParams())
    splittings = (50e9, 150e9, 300e9, 416e9, 554e9)
    rows = t1_curves(params, splittings, t_grid=(0.1, 4.0))
    assert all(len(row) == len(T1_HEADER) for row in rows)
    at_4k = [ratio for t, _, ratio in rows if t == pytest.approx(4.0)]
    assert len(at_4k) == len(splittings)
    assert all(a > b for a, b in zip(at_4k, at_4k[1:]))
    assert [ratio for t, _, ratio in rows if t == pytest.approx(0.1)] == pytest.approx([1.0] * 5)


def test_t1_curves_reject_out_of_range_temperature():
    """Contract test: curves are defined on [0.1, 5] K"""
    with pytest.raises(TemperatureError):
        t1_curves(PhononParams(), t_grid=(0.05,))


def test_phonon_params_validated():
    """Contract test: Δ_GS must exceed the qubit frequency"""
    with pytest.raises(InvalidStateError):
        PhononParams(delta_gs=10e9)


def test_decoupling_sequence_timing():
    """Oracle test: pulses at (j − ½)·T/n and a toggling integral that returns to zero"""
    seq = DecouplingSequence(2, 1.0)
    assert np.allclose(seq.breakpoints(), [0.0, 0.25, 0.75, 1.0])
    _, g = seq.toggling_integral()
    assert g[-1] == pytest.approx(0.0)
    assert DecouplingSequence.xy8(16, 1e-3).total_time == pytest.approx(16e-3)
    with pytest.raises(InvalidStateError):
        DecouplingSequence.xy8(12, 1e-3)


def test_uncoupled_fluctuator_is_silent():
    """Oracle test: zero coupling leaves full coherence"""
    assert gaussian_coherence(0.0, 1e3, DecouplingSequence.hahn(1e-2)) == 1.0
    assert telegraph_coherence(0.0, 50.0, DecouplingSequence.hahn(1e-2), shots=1000, seed=1).value == pytest.approx(1.0)


def test_motional_narrowing():
    """Property test: fast switching restores coherence by more than 3σ"""
    seq = DecouplingSequence.hahn(0.05)
    slow = telegraph_coherence(7.3, 20.0, seq, seed=SEED)
    fast = telegraph_coherence(7.3, 2000.0, seq, seed=SEED)
    gap = fast.value - slow.value
    assert gap > 3 * math.hypot(fast.stderr, slow.stderr)


def test_gaussian_limit_matches_monte_carlo():
    """Oracle test: the closed form agrees with telegraph Monte Carlo when switching is fast"""
    seq = DecouplingSequence.hahn(0.05)
    mc = telegraph_coherence(7.3, 2000.0, seq, seed=SEED)
    assert gaussian_coherence(7.3, 2000.0, seq) == pytest.approx(mc.value, abs=3 * mc.stderr + 5e-3)


def test_telegraph_rejects_bad_inputs():
    """Contract test: negative rates and too few trajectories"""
    with pytest.raises(InvalidStateError):
        telegraph_coherence(1.0, -1.0, DecouplingSequence.hahn(1e-3))
    with pytest.raises(ShotsError):
        motional_mc(FluctuatorBath(), 0.1, DecouplingSequence.hahn(1e-3), shots=10)


@pytest.mark.slow
def test_nuclear_anchors_reproduced(calibrated):
    """Oracle test: nuclear Hahn T2 hits both anchors after calibration"""
    params, bath = calibrated
    anchors = ThermalAnchors()
    assert nuclear_t2(anchors.t_low, params, bath, 2000, SEED) == pytest.approx(anchors.t2n[0], rel=1e-9)
    assert nuclear_t2(anchors.t_high, params, bath, 2000, SEED) == pytest.approx(anchors.t2n[1], rel=1e-9)


@pytest.mark.slow
def test_nuclear_t2_rises_before_it_falls(calibrated):
    """Property test: motional averaging lifts nuclear T2 above its 0.1 K value"""
    params, bath = calibrated
    temps = np.linspace(0.1, 4.3, 15)
    t2 = [nuclear_t2(float(t), params, bath, 2000, SEED) for t in temps]
    peak = int(np.argmax(t2))
    assert 0 < peak < len(temps) - 1
    assert t2[peak] > t2[0]
    assert t2[-1] < t2[0]


@pytest.mark.slow
def test_decoupling_extends_memory(calibrated):
    """Oracle test: T2 grows with pulse count as a sub-linear power law past one second"""
    _, bath = calibrated
    table = t2_vs_n(bath, 0.1, (8, 64, 256, 1024), shots=2000, seed=SEED)
    t2 = [row.t2 for row in table.rows]
    assert not any(row.flagged for row in table.rows)
    assert all(a <= b for a, b in zip(t2, t2[1:]))
    assert 0.3 < table.alpha < 0.8
    assert t2[-1] >= 1.0
