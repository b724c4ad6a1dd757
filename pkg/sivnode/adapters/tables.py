"""
File adapters: plot-ready CSV tables, JSON summaries, pulse files and peak lists.

Floats are written with repr() so identical results give byte-identical files.
"""

import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np

from sivnode.core.errors import InvalidStateError
from sivnode.services.spin_register import PulseSequence, sequence_from_text, sequence_to_text
from sivnode.services.survey import PEAKS_HEADER, PeakSpectrum

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def _plain(obj: Any, strict: bool = True) -> Any:
    """numpy scalars/arrays and tuples to JSON-native values; NaN/inf to None when strict."""
    if isinstance(obj, dict):
        return {str(k): _plain(v, strict) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v, strict) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v, strict) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if (math.isfinite(value) or not strict) else None
    return obj


def to_json_data(obj: Any, strict: bool = True) -> Any:
    return _plain(obj, strict)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        count = 0
        for row in rows:
            if len(row) != len(header):
                raise InvalidStateError(f"Row {row!r} does not match header {tuple(header)}")
            writer.writerow([_cell(v) for v in row])
            count += 1
    logger.debug("Wrote %d rows to %s", count, path)
    return path


def write_json(path: PathLike, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def parse_peaks_csv(text: str) -> list[PeakSpectrum]:
    """Parse `cavity_id,peak_hz,intensity` rows into one sorted spectrum per cavity."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InvalidStateError("Peak file is empty")
    if tuple(h.strip() for h in header) != PEAKS_HEADER:
        raise InvalidStateError(f"Peak file header must be {','.join(PEAKS_HEADER)}")
    grouped: dict[str, tuple[list, list]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise InvalidStateError(f"Line {lineno}: expected 3 columns, got {len(row)}")
        cavity, peak, intensity = (c.strip() for c in row)
        try:
            peak_hz, weight = float(peak), float(intensity)
        except ValueError:
            raise InvalidStateError(f"Line {lineno}: peak_hz and intensity must be numbers")
        if not (math.isfinite(peak_hz) and peak_hz > 0):
            raise InvalidStateError(f"Line {lineno}: peak_hz must be a positive frequency")
        peaks, weights = grouped.setdefault(cavity, ([], []))
        peaks.append(peak_hz)
        weights.append(weight)
    return [PeakSpectrum.from_unsorted(cid, p, w) for cid, (p, w) in sorted(grouped.items())]


def read_peaks_csv(path: PathLike) -> list[PeakSpectrum]:
    return parse_peaks_csv(Path(path).read_text(encoding="utf-8"))


def write_peaks_csv(path: PathLike, spectra: Sequence[PeakSpectrum]) -> Path:
    rows = []
    for s in spectra:
        weights = s.intensities or (1.0,) * len(s.peaks)
        rows.extend((s.cavity_id, p, w) for p, w in zip(s.peaks, weights))
    return write_csv(path, PEAKS_HEADER, rows)


def read_pulse_file(path: PathLike, windowed: bool = False) -> PulseSequence:
    return sequence_from_text(Path(path).read_text(encoding="utf-8"), windowed=windowed)


def write_pulse_file(path: PathLike, seq: PulseSequence) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(sequence_to_text(seq), encoding="utf-8")
    return path
