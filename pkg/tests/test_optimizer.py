"""
Tests for the probe-frequency optimizer and the sideband carrier search.
"""

import math
from dataclasses import replace

import pytest

from sivnode.core.errors import InvalidStateError, NoContrastError
from sivnode.services import optimizer as optimizer_module
from sivnode.services.optimizer import (
    GRID_SCAN_HEADER,
    RATIO_HEADER,
    OptimizerConfig,
    distance_ratio,
    electron_distance,
    expected_readout_budget,
    nuclear_distance,
    optimize_frequency,
    optimize_sideband_carrier,
    parameter_grid_scan,
    ratio_scan,
    reference_beat_model,
    sideband_merit,
)


@pytest.fixture
def optimizer_config(config):
    """Optimizer setup for the proposed high-cooperativity device."""
    return config.optimizer.to_config(config.cavity.omega_c)


def test_distances_are_bounded(optimizer_config):
    """Property test: both trace distances lie in [0, 1]"""
    sys = optimizer_config.system
    lo, hi = sys.search_window()
    for i in range(21):
        omega = lo + (hi - lo) * i / 20
        assert 0 <= electron_distance(sys, omega, 0.1) <= 1
        assert 0 <= nuclear_distance(sys, omega, 0.1) <= 1


def test_zero_amplitude_probe_has_no_ratio(optimizer_config):
    """Oracle test: α = 0 distinguishes nothing and the ratio is defined as 0"""
    sys = optimizer_config.system
    omega = sys.params.omega_c + 100e9
    assert electron_distance(sys, omega, 0.0) == 0.0
    assert distance_ratio(sys, omega, 0.0) == 0.0


def test_ratio_scan_rows(optimizer_config):
    """Contract test: scan rows follow the ratio header"""
    sys = optimizer_config.system
    lo, hi = sys.search_window()
    rows = list(ratio_scan(sys, [lo, (lo + hi) / 2, hi], 0.1))
    assert len(rows) == 3
    for omega, d_e, d_n, ratio in rows:
        assert len((omega, d_e, d_n, ratio)) == len(RATIO_HEADER)
        assert ratio == pytest.approx(d_e / d_n)


def test_optimal_probe_frequency(config, optimizer_config):
    """Oracle test: ω* sits about 100.19 GHz above the cavity"""
    optimum = optimize_frequency(optimizer_config)
    assert optimum.omega_star - config.cavity.omega_c == pytest.approx(100.191e9, abs=0.5e9)
    assert optimum.ratio_star == pytest.approx(optimum.d_e / optimum.d_n)
    lo, hi = optimizer_config.window
    assert lo <= optimum.omega_star <= hi


def test_optimum_insensitive_to_small_alpha(optimizer_config):
    """Property test: halving a small α leaves ω* in place"""
    small = optimize_frequency(replace(optimizer_config, alpha=0.05))
    default = optimize_frequency(optimizer_config)
    assert small.omega_star == pytest.approx(default.omega_star, abs=1e9)


def test_uncoupled_device_has_flat_objective(optimizer_config):
    """Contract test: with g = 0 the electron is invisible"""
    bare = replace(optimizer_config, system=optimizer_config.system.with_params(g=0.0), grid_points=101)
    with pytest.raises(NoContrastError):
        optimize_frequency(bare)


def test_config_validation(optimizer_config):
    """Contract test: empty windows and unreachable targets are rejected"""
    sys = optimizer_config.system
    with pytest.raises(InvalidStateError):
        OptimizerConfig(sys, freq_window=(2e14, 1e14))
    with pytest.raises(InvalidStateError):
        OptimizerConfig(sys, target_readout_fidelity=1.0)


@pytest.mark.slow
def test_readouts_per_nuclear_lifetime(optimizer_config):
    """Oracle test: about 90 readouts at 95% before the nucleus reaches 1/e"""
    report = expected_readout_budget(optimizer_config, seed=20240501)
    assert 90 * 0.75 <= report.n_readouts <= 90 * 1.25
    assert report.reference_photons == pytest.approx(optimizer_config.reference_ratio**2 * report.probe_photons)
    assert report.incident_photons > report.detected_photons


def test_budget_separates_reference_tone_photons(optimizer_config, monkeypatch):
    """Contract test: detected photons include the reference tone, so they can outnumber probe photons"""
    monkeypatch.setattr(optimizer_module, "phase_photons_for_fidelity", lambda *args, **kwargs: 30.0)
    optimum = optimize_frequency(optimizer_config)
    model = reference_beat_model(optimizer_config.system, optimum.omega_star, optimizer_config)
    report = expected_readout_budget(optimizer_config, seed=1, optimum=optimum)
    assert model.detected_per_probe_photon > 1.0
    assert report.detected_photons == 30.0
    assert report.probe_photons == pytest.approx(30.0 / model.detected_per_probe_photon)
    assert report.probe_photons < report.detected_photons < report.incident_photons
    assert report.to_dict()["incident_photons"] == pytest.approx(5.0 * report.probe_photons)


def test_grid_scan_marks_dead_devices(optimizer_config):
    """Contract test: a device without coupling yields a NaN row instead of failing"""
    small = replace(optimizer_config, grid_points=101)
    rows = list(parameter_grid_scan(small, [0.0], [small.system.params.kappa_in]))
    assert len(rows) == 1
    assert len(rows[0]) == len(GRID_SCAN_HEADER)
    assert math.isnan(rows[0][2])


def test_sideband_carrier_inside_window(cavity_system):
    """Property test: the optimised carrier lies in the window and beats its neighbours"""
    carrier = optimize_sideband_carrier(cavity_system, 3e8)
    lo, hi = cavity_system.search_window()
    assert lo <= carrier <= hi
    assert carrier % 1e6 == pytest.approx(0.0, abs=1e-3)
    best = sideband_merit(cavity_system, carrier)
    assert best >= sideband_merit(cavity_system, carrier + 5e9)
    assert best >= sideband_merit(cavity_system, carrier - 5e9)
