"""
Phase-based electron readout.

Two sidebands at carrier ± offset reflect off the cavity with spin-dependent
phases; on a single detector they beat at twice the offset and the phase of
the beat carries the electron state. Each detected arrival time updates the
posterior via the normalised arrival-time densities, the total count updates
it once more via the Poisson likelihood.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit
from scipy.stats import poisson

from sivnode.core.errors import InvalidStateError, UnreachableTargetError
from sivnode.core.seeding import chunk_sizes, derive_rng, map_chunks
from sivnode.services.backaction import mean_decoherence_per_photon
from sivnode.services.cavity import CavitySystem, reflection, resonant_readout_frequency

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
CDF_POINTS = 2**14
CHUNK = 20000
NBAR_CAP = 1.0e4
DIVERGED = math.inf
TRADEOFF_HEADER = ("method", "target_fid", "n_readouts")
ERROR_CURVE_HEADER = ("nbar", "err_raw", "err_post", "discard_frac")

Decision = Literal["down", "up", "discarded"]


@dataclass(frozen=True)
class ArrivalModel:
    """
    Arrival-time statistics of the two-tone readout for each electron state.

    nbar_* are mean detected photons per window; the window spans an integer
    number of beat periods so each density integrates to exactly one.
    detected_per_probe_photon is the electron-averaged detected photon number
    per probe photon sent in, counting any reference tone the detector sees.
    """

    beat_freq: float = 6.0e8
    phase_down: float = 0.0
    phase_up: float = 0.0
    visibility_down: float = 1.0
    visibility_up: float = 1.0
    nbar_down: float = 10.0
    nbar_up: float = 10.0
    background_frac: float = 0.05
    window: float = 1.0e-6
    jitter: float = 70e-12
    sidebands: tuple = field(default=(), compare=False)
    detected_per_probe_photon: float = field(default=1.0, compare=False)

    def __post_init__(self) -> None:
        if self.beat_freq <= 0 or self.window <= 0:
            raise InvalidStateError("beat_freq and window must be positive")
        periods = self.window * self.beat_freq
        if abs(periods - round(periods)) > 1e-6:
            raise InvalidStateError("Readout window must hold an integer number of beat periods")
        if not 0 <= self.background_frac <= 1:
            raise InvalidStateError("background_frac must be in [0, 1]")
        if self.nbar_down < 0 or self.nbar_up < 0:
            raise InvalidStateError("Mean photon numbers must be >= 0")
        for v in (self.visibility_down, self.visibility_up):
            if not 0 <= v <= 1:
                raise InvalidStateError("Beat visibility must be in [0, 1]")

    @classmethod
    def from_cavity(
        cls,
        sys: CavitySystem,
        carrier: float,
        nbar: float = 10.0,
        nuclear: str = "down",
        sideband_offset: float = 3.0e8,
        background_frac: float = 0.05,
        jitter: float = 70e-12,
        beat_periods: int = 600,
    ) -> "ArrivalModel":
        """
        Phases, visibilities and relative brightness from r(ω) at carrier ±
        offset; nbar is the electron-averaged detected photon number.
        """
        omega_b, omega_r = carrier + sideband_offset, carrier - sideband_offset
        values = {}
        for e in ("down", "up"):
            rb = complex(reflection(sys, (e, nuclear), omega_b))
            rr = complex(reflection(sys, (e, nuclear), omega_r))
            intensity = 0.5 * (abs(rb) ** 2 + abs(rr) ** 2)
            vis = 2 * abs(rb) * abs(rr) / (abs(rb) ** 2 + abs(rr) ** 2) if intensity > 0 else 0.0
            values[e] = (float(np.angle(rb) - np.angle(rr)), vis, intensity)
        mean_intensity = 0.5 * (values["down"][2] + values["up"][2])
        if mean_intensity <= 0:
            raise InvalidStateError("Sidebands are not reflected")
        beat = 2 * sideband_offset
        model = cls(
            beat_freq=beat,
            phase_down=values["down"][0],
            phase_up=values["up"][0],
            visibility_down=values["down"][1],
            visibility_up=values["up"][1],
            nbar_down=nbar * values["down"][2] / mean_intensity,
            nbar_up=nbar * values["up"][2] / mean_intensity,
            background_frac=background_frac,
            window=beat_periods / beat,
            jitter=jitter,
            sidebands=(omega_b, omega_r),
            detected_per_probe_photon=mean_intensity,
        )
        logger.debug(
            "Arrival model: dphi_down=%.4f dphi_up=%.4f I_down=%.4f I_up=%.4f",
            model.phase_down, model.phase_up, values["down"][2], values["up"][2],
        )
        return model

    @property
    def damping(self) -> float:
        """Beat amplitude left after Gaussian timing jitter."""
        return math.exp(-0.5 * (TWO_PI * self.beat_freq * self.jitter) ** 2)

    @property
    def mean_nbar(self) -> float:
        return 0.5 * (self.nbar_down + self.nbar_up)

    def with_nbar(self, nbar: float) -> "ArrivalModel":
        """Same model rescaled to an electron-averaged detected photon number."""
        mean = self.mean_nbar
        if mean <= 0:
            return replace(self, nbar_down=nbar, nbar_up=nbar)
        return replace(self, nbar_down=self.nbar_down * nbar / mean, nbar_up=self.nbar_up * nbar / mean)

    def _shape(self, spin: str) -> tuple[float, float]:
        if spin == "down":
            return self.phase_down, self.visibility_down
        if spin == "up":
            return self.phase_up, self.visibility_up
        raise InvalidStateError(f"Unknown spin {spin!r}")

    def nbar(self, spin: str) -> float:
        return self.nbar_down if spin == "down" else self.nbar_up


@dataclass(frozen=True)
class ReadoutRecord:
    n_detected: int
    arrival_times: tuple
    posterior_down: float
    decision: str
    epsilon: float
    flagged: int = 0


def arrival_pdf(model: ArrivalModel, spin: str, t):
    """Normalised arrival-time density (1/s): raised beat plus flat background."""
    phase, vis = model._shape(spin)
    t = np.asarray(t, dtype=float)
    amp = (1 - model.background_frac) * vis * model.damping
    density = (1 + amp * np.cos(TWO_PI * model.beat_freq * t - phase)) / model.window
    return density


def _period_cdf_table(model: ArrivalModel, spin: str) -> tuple[np.ndarray, np.ndarray]:
    """Monotone inverse-CDF table over one beat period (the density is periodic)."""
    phase, vis = model._shape(spin)
    amp = (1 - model.background_frac) * vis * model.damping
    period = 1.0 / model.beat_freq
    grid = np.linspace(0.0, period, CDF_POINTS + 1)
    w = TWO_PI * model.beat_freq
    cdf = grid / period + amp / (w * period) * (np.sin(w * grid - phase) + math.sin(phase))
    cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))
    cdf[-1] = 1.0
    return grid, cdf


def _sample_times(model: ArrivalModel, spin: str, rng: np.random.Generator, n: int) -> np.ndarray:
    grid, cdf = _period_cdf_table(model, spin)
    periods = int(round(model.window * model.beat_freq))
    start = rng.integers(0, periods, n) / model.beat_freq
    return start + np.interp(rng.random(n), cdf, grid)


def _log_ratio(model: ArrivalModel, times: np.ndarray) -> tuple[np.ndarray, int]:
    """ln P↓(t) − ln P↑(t) per arrival; arrivals where both densities vanish contribute 0."""
    pd = arrival_pdf(model, "down", times)
    pu = arrival_pdf(model, "up", times)
    both_zero = (pd <= 0) & (pu <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.log(pd) - np.log(pu)
    ratio = np.where(both_zero, 0.0, ratio)
    return ratio, int(both_zero.sum())


def _poisson_log_ratio(n: np.ndarray, nbar_down: float, nbar_up: float) -> np.ndarray:
    return poisson.logpmf(n, nbar_down) - poisson.logpmf(n, nbar_up)


def _posterior(prior: float, log_odds) -> np.ndarray:
    if prior <= 0.0 or prior >= 1.0:
        return np.full(np.shape(log_odds), float(prior))
    with np.errstate(invalid="ignore"):
        return expit(logit(prior) + np.asarray(log_odds, dtype=float))


def bayes_update(prior_down: float, model: ArrivalModel, t: float) -> float:
    """One arrival-time update of p↓; unchanged if neither state can produce t."""
    if not 0 <= prior_down <= 1:
        raise InvalidStateError("Prior must be a probability")
    ratio, flagged = _log_ratio(model, np.array([t]))
    if flagged:
        logger.debug("Arrival at %.3e s has zero density in both states; prior kept", t)
    return float(_posterior(prior_down, ratio[0]))


def batch_bayes_update(prior_down: float, model: ArrivalModel, times: Sequence[float]) -> float:
    ratio, _ = _log_ratio(model, np.asarray(times, dtype=float))
    return float(_posterior(prior_down, ratio.sum()))


def poisson_update(p_down: float, n: int, nbar_down: float, nbar_up: float) -> float:
    if n < 0:
        raise InvalidStateError("Photon count must be >= 0")
    return float(_posterior(p_down, _poisson_log_ratio(np.array(n), nbar_down, nbar_up)))


def classify(posterior: float, epsilon: float) -> Decision:
    if not 0 <= epsilon <= 0.5:
        raise InvalidStateError("epsilon must be in [0, 0.5]")
    if epsilon == 0.5:
        return "down" if posterior > 0.5 else "up"
    if posterior > 1 - epsilon:
        return "down"
    if posterior < epsilon:
        return "up"
    return "discarded"


def _sample_posteriors(model: ArrivalModel, spin: str, rng: np.random.Generator, shots: int) -> np.ndarray:
    counts = rng.poisson(model.nbar(spin), shots)
    times = _sample_times(model, spin, rng, int(counts.sum()))
    ratio, _ = _log_ratio(model, times)
    owner = np.repeat(np.arange(shots), counts)
    log_odds = np.bincount(owner, weights=ratio, minlength=shots)
    log_odds = log_odds + _poisson_log_ratio(counts, model.nbar_down, model.nbar_up)
    return _posterior(0.5, np.nan_to_num(log_odds, nan=0.0))


def simulate_readout(true_spin: str, model: ArrivalModel, seed: Optional[int] = None, epsilon: float = 0.2) -> ReadoutRecord:
    rng = derive_rng(seed, f"readout:{true_spin}")
    n = int(rng.poisson(model.nbar(true_spin)))
    times = _sample_times(model, true_spin, rng, n)
    ratio, flagged = _log_ratio(model, times)
    p = float(_posterior(0.5, ratio.sum()))
    p = poisson_update(p, n, model.nbar_down, model.nbar_up)
    return ReadoutRecord(n, tuple(float(t) for t in times), p, classify(p, epsilon), epsilon, flagged)


def simulate_posteriors(model: ArrivalModel, spin: str, shots: int, seed: Optional[int] = None) -> np.ndarray:
    """Posterior p↓ for `shots` readouts of a known spin, chunked with derived streams."""
    tag = f"posteriors:{spin}:{model.mean_nbar:.6g}"
    parts = map_chunks(lambda rng, size: _sample_posteriors(model, spin, rng, size), seed, tag, chunk_sizes(shots, CHUNK))
    return np.concatenate(parts)


@dataclass(frozen=True)
class ErrorPoint:
    nbar: float
    err_raw: float
    err_post: float
    discard_frac: float

    def as_row(self) -> tuple:
        return (self.nbar, self.err_raw, self.err_post, self.discard_frac)


def error_point(model: ArrivalModel, shots: int, epsilon: float = 0.2, seed: Optional[int] = None) -> ErrorPoint:
    """Spin-averaged raw and postselected error rates at the model's photon number."""
    raw_err = post_err = kept = 0.0
    for spin in ("down", "up"):
        p = simulate_posteriors(model, spin, shots, seed)
        raw_down = p > 0.5
        raw_wrong = ~raw_down if spin == "down" else raw_down
        keep_down = p > 1 - epsilon
        keep_up = p < epsilon
        kept_mask = keep_down | keep_up
        post_wrong = keep_up if spin == "down" else keep_down
        raw_err += raw_wrong.mean() / 2
        post_err += post_wrong.sum()
        kept += kept_mask.sum()
    err_post = post_err / kept if kept else 0.5
    discard = 1 - kept / (2 * shots)
    return ErrorPoint(model.mean_nbar, float(raw_err), float(err_post), float(discard))


def error_curve(
    model: ArrivalModel,
    nbar_grid: Sequence[float],
    shots: int = 10000,
    epsilon: float = 0.2,
    seed: Optional[int] = None,
) -> list[ErrorPoint]:
    if shots < 1000:
        raise InvalidStateError("error_curve needs at least 1000 shots per point")
    return [error_point(model.with_nbar(float(n)), shots, epsilon, seed) for n in nbar_grid]


# --- resonant readout ------------------------------------------------------


def resonant_readout_fidelity(nbar_bright: float, nbar_dark: float) -> float:
    """Spin-averaged fidelity of a photon-count threshold, threshold chosen optimally."""
    top = int(math.ceil(nbar_bright + 10 * math.sqrt(nbar_bright + 1) + 10))
    thresholds = np.arange(1, top + 1)
    fid = 0.5 * (poisson.sf(thresholds - 1, nbar_bright) + poisson.cdf(thresholds - 1, nbar_dark))
    return float(max(fid.max(), 0.5))


def resonant_photons_for_fidelity(target: float, dark_ratio: float, cap: float = NBAR_CAP) -> float:
    """Bright-state detected photons at which the threshold readout reaches target."""

    def gap(mu: float) -> float:
        return resonant_readout_fidelity(mu, mu * dark_ratio) - target

    best = resonant_readout_fidelity(cap, cap * dark_ratio)
    if best < target:
        raise UnreachableTargetError(f"Resonant readout tops out at {best:.4f}", best)
    return float(brentq(gap, 1e-6, cap, xtol=1e-6))


# --- photons to fidelity for the phase method -------------------------------


def phase_photons_for_fidelity(
    model: ArrivalModel,
    target: float,
    epsilon: float = 0.2,
    shots: int = 4000,
    seed: Optional[int] = None,
    cap: float = NBAR_CAP,
    iterations: int = 14,
) -> float:
    """
    Detected photons (electron averaged) giving the target fidelity: doubling
    search then log-space bisection.
    """

    def fidelity(nbar: float) -> float:
        point = error_point(model.with_nbar(nbar), shots, epsilon, seed)
        return 1 - (point.err_post if epsilon < 0.5 else point.err_raw)

    lo, hi = 0.0, 1.0
    best = fidelity(hi)
    while best < target:
        lo, hi = hi, hi * 2
        if hi > cap:
            raise UnreachableTargetError(f"Phase readout tops out at {best:.4f} below {cap:g} photons", best)
        best = fidelity(hi)
    if lo == 0.0:
        lo = hi / 2
    for _ in range(iterations):
        mid = math.sqrt(lo * hi)
        if fidelity(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


# --- readouts per memory lifetime -----------------------------------------


@dataclass(frozen=True)
class ReadoutBudget:
    method: str
    target_fid: float
    detected_photons: float
    incident_photons: float
    loss_per_readout: float

    @property
    def n_readouts(self) -> float:
        if self.loss_per_readout <= 0:
            return DIVERGED
        return 1.0 / self.loss_per_readout

    def as_row(self) -> tuple:
        return (self.method, self.target_fid, self.n_readouts)


def readouts_before_decoherence(
    sys: CavitySystem,
    model: ArrivalModel,
    target_fidelity: float = 0.95,
    method: Literal["phase", "resonant"] = "phase",
    detection_efficiency: float = 0.70,
    epsilon: float = 0.2,
    shots: int = 4000,
    seed: Optional[int] = None,
    cap: float = NBAR_CAP,
) -> ReadoutBudget:
    """
    Readouts at the target fidelity before the nuclear coherence falls to 1/e.

    The per-readout loss exponent is k̄·n_incident, with k̄ the electron-averaged
    decoherence per incident photon at the probe frequencies.
    """
    if not 0 < detection_efficiency <= 1:
        raise InvalidStateError("detection_efficiency must be in (0, 1]")
    if method == "resonant":
        omega = resonant_readout_frequency(sys)
        rs = sorted(abs(complex(reflection(sys, (e, "down"), omega))) ** 2 for e in ("down", "up"))
        dark, bright = rs
        detected = resonant_photons_for_fidelity(target_fidelity, dark / bright, cap)
        incident = detected / (bright * detection_efficiency)
        k = mean_decoherence_per_photon(sys, omega)
    elif method == "phase":
        if not model.sidebands:
            raise InvalidStateError("Phase budget needs a model built from the cavity")
        detected = phase_photons_for_fidelity(model, target_fidelity, epsilon, shots, seed, cap)
        incident = detected / (model.detected_per_probe_photon * detection_efficiency)
        # each sideband carries half of the incident photons
        k = float(np.mean([mean_decoherence_per_photon(sys, w) for w in model.sidebands]))
    else:
        raise InvalidStateError(f"Unknown readout method {method!r}")
    budget = ReadoutBudget(method, target_fidelity, detected, incident, k * incident)
    logger.info(
        "%s readout: %.2f detected photons, %.1f incident, %.3g readouts at F=%.3f",
        method, detected, incident, budget.n_readouts, target_fidelity,
    )
    return budget


def tradeoff_table(
    sys: CavitySystem,
    model: ArrivalModel,
    targets: Sequence[float],
    **kwargs,
) -> list[tuple]:
    rows = []
    for method in ("phase", "resonant"):
        for target in targets:
            try:
                rows.append(readouts_before_decoherence(sys, model, target, method, **kwargs).as_row())
            except UnreachableTargetError as e:
                logger.warning("%s readout cannot reach %.3f (max %.4f)", method, target, e.max_fidelity)
    return rows
