"""
Tests for the file adapters: CSV tables, JSON summaries, peak lists and
pulse files.
"""

import json
import math

import numpy as np
import pytest

from sivnode.adapters.tables import (
    parse_peaks_csv,
    read_peaks_csv,
    read_pulse_file,
    write_csv,
    write_json,
    write_peaks_csv,
    write_pulse_file,
)
from sivnode.core.errors import InvalidStateError, SequenceError
from sivnode.services.spin_register import Pulse, PulseSequence
from sivnode.services.survey import PeakSpectrum


def test_csv_cells_are_exact(tmp_path):
    """Contract test: floats use repr, NaN is literal, numpy scalars are plain"""
    path = write_csv(tmp_path / "out" / "t.csv", ("a", "b", "c"), [(0.1, np.int64(3), math.nan), (True, 1e-20, "x")])
    assert path.read_text() == "a,b,c\n0.1,3,nan\ntrue,1e-20,x\n"


def test_csv_rejects_ragged_rows(tmp_path):
    """Contract test: every row matches the header"""
    with pytest.raises(InvalidStateError):
        write_csv(tmp_path / "t.csv", ("a", "b"), [(1,)])


def test_json_summary_is_strict(tmp_path):
    """Contract test: non-finite floats become null; keys are sorted"""
    path = write_json(tmp_path / "s.json", {"b": math.inf, "a": np.float64(0.5), "c": np.array([1, 2])})
    assert json.loads(path.read_text()) == {"a": 0.5, "b": None, "c": [1, 2]}
    assert path.read_text().index('"a"') < path.read_text().index('"b"')


def test_peak_list_grouped_by_cavity():
    """Contract test: rows group per cavity with peaks sorted ascending"""
    text = "cavity_id,peak_hz,intensity\ncav1,3e14,1\ncav0,2e14,5\ncav1,1e14,2\n\n"
    spectra = parse_peaks_csv(text)
    assert [s.cavity_id for s in spectra] == ["cav0", "cav1"]
    assert spectra[1].peaks == (1e14, 3e14)
    assert spectra[1].intensities == (2.0, 1.0)


@pytest.mark.parametrize(
    "text",
    [
        "",
        "cavity,peak,intensity\n",
        "cavity_id,peak_hz,intensity\ncav0,abc,1\n",
        "cavity_id,peak_hz,intensity\ncav0,-5,1\n",
        "cavity_id,peak_hz,intensity\ncav0,5\n",
    ],
)
def test_bad_peak_lists_rejected(text):
    """Contract test: empty, mislabelled and malformed peak lists"""
    with pytest.raises(InvalidStateError):
        parse_peaks_csv(text)


def test_peak_file_written_back(tmp_path):
    """Contract test: a written peak list reads back unchanged"""
    spectra = [PeakSpectrum("cav0", (1e14, 2e14), (1.0, 0.5))]
    path = write_peaks_csv(tmp_path / "peaks.csv", spectra)
    assert read_peaks_csv(path) == spectra


def test_pulse_file(tmp_path):
    """Contract test: pulse files keep every field; comments and blanks are skipped"""
    seq = PulseSequence((Pulse("MW", 12e9, 16.7e6, 0.0, 3e-8), Pulse.wait(1e-6)))
    path = write_pulse_file(tmp_path / "seq.txt", seq)
    assert read_pulse_file(path).elements == seq.elements
    commented = tmp_path / "commented.txt"
    commented.write_text("# header\n\nWAIT 0 0 0 1e-6  # idle\n")
    assert read_pulse_file(commented, windowed=True).windowed
    broken = tmp_path / "broken.txt"
    broken.write_text("MW 1 2 3\n")
    with pytest.raises(SequenceError):
        read_pulse_file(broken)
