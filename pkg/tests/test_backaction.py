"""
Tests for readout-induced nuclear decoherence.
"""

import math

import numpy as np
import pytest

from sivnode.core.errors import InvalidStateError
from sivnode.services.backaction import (
    SWEEP_HEADER,
    brute_force_overlap,
    decoherence_per_photon,
    duration_sweep,
    echo_coherence,
    frequency_sweep,
    infidelity,
    mean_decoherence_per_photon,
    scatter_split,
    single_window_coherence,
    x_expectation,
)
from sivnode.services.cavity import resonant_readout_frequency
from sivnode.services.optimizer import optimize_sideband_carrier


def test_echo_is_modulus_squared_of_single_window(cavity_system):
    """Property test: ρ₂ = |ρ₁|² over a frequency grid and both electron states"""
    lo, hi = cavity_system.search_window()
    for electron in ("down", "up"):
        for omega in np.linspace(lo, hi, 41):
            for nbar in (0.1, 1.0, 7.5):
                rho1 = single_window_coherence(cavity_system, electron, float(omega), nbar)
                rho2 = echo_coherence(cavity_system, electron, float(omega), nbar)
                assert rho2 == pytest.approx(abs(rho1) ** 2, abs=1e-12)


def test_symmetric_window_is_exponential_in_nbar(cavity_system):
    """Oracle test: ⟨X₂⟩(n) = exp(−k·n) exactly"""
    omega = resonant_readout_frequency(cavity_system)
    k = decoherence_per_photon(cavity_system, "down", omega)
    durations = np.linspace(0, 1e-6, 11)
    values = duration_sweep("symmetric", cavity_system, "down", omega, 5e6, durations)
    assert np.allclose(values, np.exp(-k * 5e6 * durations), rtol=0, atol=1e-14)


def test_zero_photons_leave_coherence(cavity_system):
    """Oracle test: nbar = 0 gives ρ₁ = 1"""
    omega = resonant_readout_frequency(cavity_system)
    assert single_window_coherence(cavity_system, "up", omega, 0.0) == pytest.approx(1.0)
    assert x_expectation("asymmetric", cavity_system, "up", omega, 0.0) == pytest.approx(1.0)


def test_closed_form_matches_fock_sum(cavity_system):
    """Oracle test: the Gaussian overlap formula equals a truncated Fock-basis sum"""
    omega = cavity_system.params.omega_c + 68.7e9
    split = scatter_split(cavity_system, "down", omega)
    for nbar in (0.3, 2.0, 10.0):
        brute = brute_force_overlap(split.down, split.up, nbar)
        closed = single_window_coherence(cavity_system, "down", omega, nbar)
        assert brute == pytest.approx(closed, abs=1e-12)


def test_resonant_readout_decoheres_more_than_sidebands(cavity_system):
    """Property test: k at the resonant readout exceeds k at both phase-readout sidebands"""
    omega_r = resonant_readout_frequency(cavity_system)
    carrier = optimize_sideband_carrier(cavity_system, 3e8)
    k_res = mean_decoherence_per_photon(cavity_system, omega_r)
    assert k_res > mean_decoherence_per_photon(cavity_system, carrier + 3e8)
    assert k_res > mean_decoherence_per_photon(cavity_system, carrier - 3e8)


def test_frequency_sweep_rows(cavity_system):
    """Contract test: one row per frequency and electron state, x2 = exp(−k·nbar)"""
    omegas = np.linspace(*cavity_system.search_window(), 7)
    rows = list(frequency_sweep(cavity_system, omegas, 2.0))
    assert len(rows) == 14
    for row in rows:
        assert len(row) == len(SWEEP_HEADER)
        _, x1, x2, k, electron = row
        assert electron in ("down", "up")
        assert x2 == pytest.approx(math.exp(-2.0 * k))
        assert abs(x1) <= 1.0 + 1e-12


def test_infidelity_and_bad_inputs(cavity_system):
    """Contract test: infidelity of full coherence is zero; negative nbar is rejected"""
    assert infidelity(1.0) == 0.0
    assert infidelity(0.0) == 0.5
    omega = resonant_readout_frequency(cavity_system)
    with pytest.raises(InvalidStateError):
        single_window_coherence(cavity_system, "down", omega, -1.0)
    with pytest.raises(InvalidStateError):
        scatter_split(cavity_system, "sideways", omega)
    with pytest.raises(InvalidStateError):
        x_expectation("diagonal", cavity_system, "down", omega, 1.0)
