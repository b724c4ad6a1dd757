"""
Tests for the ground-state splitting survey: quadruple matching, assignment
sampling and the planted synthetic ensemble.
"""

import numpy as np
import pytest

from sivnode.core.errors import InvalidStateError, ShotsError
from sivnode.services.survey import (
    ES_FLOOR,
    GS_FLOOR,
    PeakSpectrum,
    SiVAssignment,
    excited_splitting,
    fraction_above,
    histogram,
    match_quadruples,
    maximal_configurations,
    planted_ensemble,
    sample_distribution,
    siv_lines,
)

SEED = 20240501


def test_single_siv_is_recovered():
    """Oracle test: the four lines of one SiV give exactly one quadruple"""
    spectrum = PeakSpectrum.from_unsorted("cav", siv_lines(406.7e12, 120e9))
    candidates = match_quadruples(spectrum)
    assert len(candidates) == 1
    assert candidates[0].delta_gs == pytest.approx(120e9)
    assert candidates[0].delta_es == pytest.approx(excited_splitting(120e9))


def test_candidates_satisfy_line_constraints():
    """Property test: every candidate clears both splitting floors and matches its gaps"""
    ensemble = planted_ensemble(seed=SEED)
    for spectrum in ensemble.spectra:
        for candidate in match_quadruples(spectrum):
            assert candidate.satisfies()
            assert candidate.a - candidate.b > GS_FLOOR
            assert candidate.c - candidate.d > GS_FLOOR
            assert candidate.a - candidate.c > ES_FLOOR
            assert len(candidate.indices) == 4


def test_too_few_peaks_rejected():
    """Contract test: a cavity needs at least four peaks"""
    with pytest.raises(InvalidStateError):
        match_quadruples(PeakSpectrum("cav", (1.0, 2.0, 3.0)))


def test_spectrum_must_be_sorted():
    """Contract test: peaks are stored ascending; from_unsorted keeps intensities aligned"""
    with pytest.raises(InvalidStateError):
        PeakSpectrum("cav", (3.0, 1.0))
    spectrum = PeakSpectrum.from_unsorted("cav", [3.0, 1.0, 2.0], [30.0, 10.0, 20.0])
    assert spectrum.peaks == (1.0, 2.0, 3.0)
    assert spectrum.intensities == (10.0, 20.0, 30.0)


def test_maximal_configurations():
    """Oracle test: overlapping candidates split into separate configurations"""
    a = SiVAssignment(4, 3, 2, 1, frozenset({0, 1, 2, 3}))
    b = SiVAssignment(8, 7, 6, 5, frozenset({4, 5, 6, 7}))
    c = SiVAssignment(8, 7, 2, 1, frozenset({0, 1, 6, 7}))
    configs = sorted(maximal_configurations([a, b, c]))
    assert configs == [(0, 1), (2,)]


def test_planted_fraction_recovered():
    """Oracle test: the sampled high-strain fraction matches the planted one within 3%"""
    ensemble = planted_ensemble(seed=SEED)
    result = sample_distribution(ensemble.spectra, ensemble.mean_count, repeats=200, seed=SEED)
    fraction = fraction_above(result.values)
    assert fraction.value == pytest.approx(ensemble.true_fraction, abs=0.03)
    assert result.mean_per_repeat == pytest.approx(len(ensemble.splittings), abs=0.5)


def test_planted_ensemble_is_seeded():
    """Contract test: same seed, same spectra"""
    assert planted_ensemble(seed=3) == planted_ensemble(seed=3)


@pytest.mark.parametrize("seed", range(51))
def test_planted_ensemble_draws_for_every_seed(seed):
    """Property test: every seed yields clean cavities with the planted high-strain count"""
    ensemble = planted_ensemble(seed=seed)
    assert len(ensemble.spectra) == 12
    assert len(ensemble.splittings) == 25
    high = sum(s > 400e9 for s in ensemble.splittings)
    assert high == 3
    for spectrum in ensemble.spectra:
        for candidate in match_quadruples(spectrum):
            assert len({i // 4 for i in candidate.indices}) == 1


def test_sampling_rejects_zero_repeats():
    """Contract test: at least one repeat"""
    with pytest.raises(ShotsError):
        sample_distribution([], 2.0, repeats=0)


def test_histogram_and_fraction():
    """Oracle test: bin counts add up; fraction error is binomial"""
    values = np.array([55e9, 58e9, 120e9, 450e9])
    rows = histogram(values, 10e9)
    assert sum(count for _, count in rows) == 4
    assert rows[0] == (pytest.approx(55e9), 2)
    fraction = fraction_above(values, 400e9)
    assert fraction.value == pytest.approx(0.25)
    assert fraction.error == pytest.approx(np.sqrt(0.25 * 0.75 / 4))
    assert histogram([], 10e9) == []
    with pytest.raises(InvalidStateError):
        fraction_above([])
