"""
Ground-state splitting survey from photoluminescence peak lists.

Each SiV shows four optical lines A > B and C > D with A − B = C − D = Δ_GS
(the ground-state splitting) and A − C the excited-state splitting. Peaks of
one cavity are grouped into such quadruples; when the grouping is ambiguous
the assignment is sampled.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from sivnode.core.errors import InvalidStateError, ShotsError
from sivnode.core.seeding import chunk_sizes, derive_rng, map_chunks

logger = logging.getLogger(__name__)

GS_FLOOR = 48e9
ES_FLOOR = 259e9
DEFAULT_TOL = 2e9
HIGH_STRAIN = 400e9
HIGH_STRAIN_RANGE = (450e9, 800e9)
LOW_STRAIN_RANGE = (60e9, 250e9)
HISTOGRAM_HEADER = ("delta_gs_hz", "count")
PEAKS_HEADER = ("cavity_id", "peak_hz", "intensity")
MAX_CONFIGURATIONS = 200_000
REPEAT_CHUNK = 500


@dataclass(frozen=True)
class PeakSpectrum:
    cavity_id: str
    peaks: tuple[float, ...]
    intensities: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if list(self.peaks) != sorted(self.peaks):
            raise InvalidStateError(f"Peaks of cavity {self.cavity_id} must be sorted ascending")
        if self.intensities and len(self.intensities) != len(self.peaks):
            raise InvalidStateError("One intensity per peak")

    @classmethod
    def from_unsorted(cls, cavity_id: str, peaks: Sequence[float], intensities: Sequence[float] = ()) -> "PeakSpectrum":
        order = np.argsort(peaks, kind="stable")
        sorted_int = tuple(float(intensities[i]) for i in order) if len(intensities) else ()
        return cls(cavity_id, tuple(float(peaks[i]) for i in order), sorted_int)


@dataclass(frozen=True)
class SiVAssignment:
    a: float
    b: float
    c: float
    d: float
    indices: frozenset = field(default=frozenset(), compare=False)

    @property
    def delta_gs(self) -> float:
        return self.c - self.d

    @property
    def delta_es(self) -> float:
        return self.a - self.c

    def satisfies(self, tol: float = DEFAULT_TOL) -> bool:
        return (
            abs((self.a - self.b) - (self.c - self.d)) <= tol
            and self.a - self.b > GS_FLOOR
            and self.c - self.d > GS_FLOOR
            and self.a - self.c > ES_FLOOR
        )


def match_quadruples(spectrum: PeakSpectrum, tol: float = DEFAULT_TOL) -> list[SiVAssignment]:
    """Every four-peak group that can be one SiV, deduplicated by peak set and role."""
    peaks = np.asarray(spectrum.peaks, dtype=float)
    if peaks.size < 4:
        raise InvalidStateError(f"Cavity {spectrum.cavity_id} has fewer than 4 peaks")
    # ordered pairs (hi, lo) whose gap clears the ground-state floor
    pairs = [(i, j) for i, j in itertools.permutations(range(peaks.size), 2) if peaks[i] - peaks[j] > GS_FLOOR]
    if not pairs:
        return []
    hi = np.array([p[0] for p in pairs])
    lo = np.array([p[1] for p in pairs])
    gaps = peaks[hi] - peaks[lo]
    close = np.abs(gaps[:, None] - gaps[None, :]) <= tol
    excited = (peaks[hi][:, None] - peaks[hi][None, :]) > ES_FLOOR
    found: dict[tuple, SiVAssignment] = {}
    for p, q in zip(*np.nonzero(close & excited)):
        quad = (hi[p], lo[p], hi[q], lo[q])
        if len(set(quad)) < 4:
            continue
        key = tuple(int(i) for i in quad)
        a, b, c, d = (float(peaks[i]) for i in quad)
        found.setdefault(key, SiVAssignment(a, b, c, d, frozenset(key)))
    return sorted(found.values(), key=lambda s: (s.a, s.b, s.c, s.d))


def maximal_configurations(candidates: Sequence[SiVAssignment]) -> list[tuple[int, ...]]:
    """Maximal sets of pairwise peak-disjoint candidates, as index tuples."""
    n = len(candidates)
    result: list[tuple[int, ...]] = []

    def extend(chosen: tuple[int, ...], used: frozenset, start: int) -> None:
        if len(result) > MAX_CONFIGURATIONS:
            raise InvalidStateError("Too many candidate configurations to enumerate")
        free = [i for i in range(n) if not candidates[i].indices & used]
        if not free:
            result.append(chosen)
            return
        for i in free:
            if i >= start:
                extend(chosen + (i,), used | candidates[i].indices, i + 1)

    extend((), frozenset(), 0)
    return result


@dataclass(frozen=True)
class _CavityChoices:
    by_size: dict
    smallest: int
    largest: int


def _cavity_choices(candidates: Sequence[SiVAssignment]) -> Optional[_CavityChoices]:
    configs = maximal_configurations(candidates) if candidates else []
    configs = [c for c in configs if c]
    if not configs:
        return None
    by_size: dict[int, list] = {}
    for c in configs:
        by_size.setdefault(len(c), []).append(tuple(candidates[i].delta_gs for i in c))
    return _CavityChoices(by_size, min(by_size), max(by_size))


@dataclass(frozen=True)
class DistributionResult:
    values: np.ndarray
    repeats: int
    skipped: int

    @property
    def mean_per_repeat(self) -> float:
        return self.values.size / self.repeats


def sample_distribution(
    spectra: Sequence[PeakSpectrum],
    mu: float,
    sigma: float = 2.0,
    repeats: int = 10_000,
    seed: Optional[int] = None,
    tol: float = DEFAULT_TOL,
) -> DistributionResult:
    """
    Per repeat and cavity: draw n ~ N(μ, σ) clipped to the cavity's feasible
    range, pick a maximal peak-disjoint assignment of size n uniformly, and
    collect its splittings.
    """
    if repeats <= 0:
        raise ShotsError("repeats must be positive")
    choices = [_cavity_choices(match_quadruples(s, tol)) for s in spectra]
    usable = [c for c in choices if c is not None]
    if len(usable) < len(choices):
        logger.warning("%d cavities have no consistent quadruple", len(choices) - len(usable))

    def run(rng: np.random.Generator, size: int) -> tuple[list, int]:
        values: list[float] = []
        skipped = 0
        for _ in range(size):
            for cav in usable:
                n = int(np.clip(round(rng.normal(mu, sigma)), cav.smallest, cav.largest))
                options = cav.by_size.get(n)
                if not options:
                    skipped += 1
                    continue
                values.extend(options[int(rng.integers(len(options)))])
        return values, skipped

    parts = map_chunks(run, seed, "survey", chunk_sizes(repeats, REPEAT_CHUNK))
    values = np.array([v for part, _ in parts for v in part], dtype=float)
    skipped = sum(s for _, s in parts)
    if skipped:
        logger.info("Skipped %d cavity draws with no assignment of the drawn size", skipped)
    return DistributionResult(values, repeats, skipped)


@dataclass(frozen=True)
class Fraction:
    value: float
    error: float


def fraction_above(values: Sequence[float], threshold: float = HIGH_STRAIN) -> Fraction:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InvalidStateError("Histogram is empty")
    p = float(np.mean(values > threshold))
    return Fraction(p, math.sqrt(p * (1 - p) / values.size))


def histogram(values: Sequence[float], bin_width: float = 10e9) -> list[tuple[float, int]]:
    """Rows (bin centre, count) over the occupied range."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return []
    lo = math.floor(values.min() / bin_width) * bin_width
    hi = math.ceil(values.max() / bin_width) * bin_width + bin_width
    counts, edges = np.histogram(values, bins=np.arange(lo, hi + bin_width / 2, bin_width))
    return [(float(0.5 * (a + b)), int(c)) for a, b, c in zip(edges[:-1], edges[1:], counts) if c]


# --- synthetic spectra -------------------------------------------------------


def excited_splitting(delta_gs: float) -> float:
    """Strain-tuned excited-state splitting that grows with the ground-state one."""
    return math.sqrt(ES_FLOOR**2 + 2.25 * max(delta_gs**2 - GS_FLOOR**2, 0.0)) + 1e9


def siv_lines(center: float, delta_gs: float) -> tuple[float, float, float, float]:
    es = excited_splitting(delta_gs)
    return (
        center + (es + delta_gs) / 2,
        center + (es - delta_gs) / 2,
        center - (es - delta_gs) / 2,
        center - (es + delta_gs) / 2,
    )


def synthetic_spectrum(
    cavity_id: str,
    splittings: Sequence[float],
    rng: np.random.Generator,
    jitter: float = 1e9,
    center: float = 406.7e12,
    spacing: float = 4e12,
) -> PeakSpectrum:
    """Spectrum of SiVs with the given splittings; each line moves by up to ±jitter/2."""
    peaks = []
    for k, delta in enumerate(splittings):
        c = center + k * spacing + rng.uniform(-0.2, 0.2) * spacing
        peaks.extend(f + rng.uniform(-jitter / 2, jitter / 2) for f in siv_lines(c, delta))
    return PeakSpectrum.from_unsorted(cavity_id, peaks, [1.0] * len(peaks))


def _clean(spectrum: PeakSpectrum, n_sivs: int, tol: float) -> bool:
    """True when every candidate uses the lines of a single planted SiV."""
    # SiVs sit in separate frequency slots, so sorted peaks come in blocks of four
    candidates = match_quadruples(spectrum, tol)
    owners = [{i // 4 for i in c.indices} for c in candidates]
    return all(len(o) == 1 for o in owners) and len(set().union(*owners)) == n_sivs


@dataclass(frozen=True)
class PlantedEnsemble:
    spectra: tuple[PeakSpectrum, ...]
    splittings: tuple[float, ...]

    @property
    def true_fraction(self) -> float:
        return float(np.mean(np.asarray(self.splittings) > HIGH_STRAIN))

    @property
    def mean_count(self) -> float:
        return len(self.splittings) / len(self.spectra)


def planted_ensemble(
    counts: Sequence[int] = (2,) * 11 + (3,),
    high_fraction: float = 0.12,
    seed: Optional[int] = None,
    tol: float = DEFAULT_TOL,
    jitter: float = 1e9,
    max_attempts: int = 200,
) -> PlantedEnsemble:
    """
    Cavities with a known share of high-strain SiVs. Each SiV keeps its
    strain class, but a cavity's splittings and centres are redrawn until
    its quadruple candidates never mix lines of different SiVs.
    """
    total = int(sum(counts))
    n_high = int(round(high_fraction * total))
    rng = derive_rng(seed, "survey:planted")
    high = np.zeros(total, dtype=bool)
    high[:n_high] = True
    rng.shuffle(high)
    spectra = []
    splittings: list[float] = []
    start = 0
    for index, count in enumerate(counts):
        mine_high = high[start : start + count]
        start += count
        for _ in range(max_attempts):
            mine = np.where(mine_high, rng.uniform(*HIGH_STRAIN_RANGE, count), rng.uniform(*LOW_STRAIN_RANGE, count))
            spectrum = synthetic_spectrum(f"cav{index:02d}", mine, rng, jitter)
            if _clean(spectrum, count, tol):
                break
        else:
            raise InvalidStateError(f"Could not draw a clean spectrum for cavity {index}")
        spectra.append(spectrum)
        splittings.extend(float(s) for s in mine)
    return PlantedEnsemble(tuple(spectra), tuple(splittings))
