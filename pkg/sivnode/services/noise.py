"""
Ornstein-Uhlenbeck detuning noise for pulse-sequence Monte Carlo.

A stationary OU process with standard deviation sigma (Hz) and correlation
time tau_c is calibrated so that free-induction decay reaches 1/e at T2* and
a Hahn echo reaches 1/e at the echo T2. Sampling is exact: for each element
of a sequence the endpoint and the time integral of the detuning are drawn
jointly from their conditional Gaussian.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from sivnode.core.errors import InvalidStateError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
SERIES_CUTOFF = 1e-3


def _fid_shape(x: float) -> float:
    """x − 1 + e^{−x}, series-expanded for small x."""
    if x < SERIES_CUTOFF:
        return x**2 / 2 - x**3 / 6 + x**4 / 24
    return x + math.expm1(-x)


def _echo_shape(x: float) -> float:
    """x − 3 + 4e^{−x/2} − e^{−x}, series-expanded for small x."""
    if x < SERIES_CUTOFF:
        return x**3 / 12 - x**4 / 32 + 7 * x**5 / 960
    return x - 3 + 4 * math.exp(-x / 2) - math.exp(-x)


def _integral_shape(y: np.ndarray) -> np.ndarray:
    """2y − 3 + 4e^{−y} − e^{−2y}: conditional variance of the integral."""
    y = np.asarray(y, dtype=float)
    small = y < SERIES_CUTOFF
    exact = 2 * y - 3 + 4 * np.exp(-y) - np.exp(-2 * y)
    series = 2 * y**3 / 3 - y**4 / 2
    return np.where(small, series, exact)


@dataclass(frozen=True)
class OUNoise:
    """Detuning noise with stationary std `sigma_hz` and correlation time `tau_c`."""

    sigma_hz: float
    tau_c: float

    def __post_init__(self) -> None:
        if self.sigma_hz < 0 or self.tau_c <= 0:
            raise InvalidStateError("OU noise needs sigma >= 0 and tau_c > 0")

    def phase_variance_fid(self, t: float) -> float:
        s = TWO_PI * self.sigma_hz
        return 2 * s**2 * self.tau_c**2 * _fid_shape(t / self.tau_c)

    def phase_variance_echo(self, t: float) -> float:
        s = TWO_PI * self.sigma_hz
        return 2 * s**2 * self.tau_c**2 * _echo_shape(t / self.tau_c)

    def fid_coherence(self, t: float) -> float:
        return math.exp(-self.phase_variance_fid(t) / 2)

    def echo_coherence(self, t: float) -> float:
        return math.exp(-self.phase_variance_echo(t) / 2)

    def initial(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(0.0, self.sigma_hz, size)

    def step(self, rng: np.random.Generator, delta: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """
        Advance by dt. Returns (new detuning, mean detuning over the step), both in Hz.
        """
        delta = np.asarray(delta, dtype=float)
        if dt <= 0:
            return delta.copy(), delta.copy()
        theta = 1.0 / self.tau_c
        y = theta * dt
        decay = math.exp(-y)
        var_end = self.sigma_hz**2 * -math.expm1(-2 * y)
        var_int = self.sigma_hz**2 / theta**2 * float(_integral_shape(y))
        cov = self.sigma_hz**2 / theta * math.expm1(-y) ** 2
        mean_end = delta * decay
        mean_int = delta * -math.expm1(-y) / theta
        # joint Gaussian via Cholesky of [[var_end, cov], [cov, var_int]]
        z1 = rng.standard_normal(delta.shape)
        z2 = rng.standard_normal(delta.shape)
        a = math.sqrt(max(var_end, 0.0))
        b = cov / a if a > 0 else 0.0
        c = math.sqrt(max(var_int - b**2, 0.0))
        end = mean_end + a * z1
        integral = mean_int + b * z1 + c * z2
        return end, integral / dt


def calibrate_ou(t2_star: float, t2_echo: float) -> OUNoise:
    """OU parameters reproducing 1/e decay at T2* (FID) and at T2 (Hahn echo)."""
    if not 0 < t2_star < t2_echo:
        raise InvalidStateError("Calibration needs 0 < T2* < T2 echo")

    def sigma_for(tau_c: float) -> float:
        # FID variance 2 at T2*
        s_ang = math.sqrt(1.0 / (tau_c**2 * _fid_shape(t2_star / tau_c)))
        return s_ang / TWO_PI

    def mismatch(log_tau: float) -> float:
        tau_c = math.exp(log_tau)
        noise = OUNoise(sigma_for(tau_c), tau_c)
        return math.log(noise.phase_variance_echo(t2_echo) / 2.0)

    lo, hi = math.log(t2_star / 100), math.log(1e3)
    log_tau = brentq(mismatch, lo, hi, xtol=1e-12)
    tau_c = math.exp(log_tau)
    noise = OUNoise(sigma_for(tau_c), tau_c)
    logger.debug("OU calibration: sigma=%.4g Hz tau_c=%.4g s", noise.sigma_hz, noise.tau_c)
    return noise


@dataclass(frozen=True)
class NoiseModel:
    """Electron and nuclear detuning noise plus T1 mixing; None disables a term."""

    electron: Optional[OUNoise] = None
    nuclear: Optional[OUNoise] = None
    t1_e: Optional[float] = None
    t1_n: Optional[float] = None

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls()

    @property
    def is_noiseless(self) -> bool:
        return self.electron is None and self.nuclear is None and self.t1_e is None and self.t1_n is None

    @classmethod
    def from_register(cls, params) -> "NoiseModel":
        return cls(
            electron=calibrate_ou(params.t2_e_star, params.t2_e_echo),
            nuclear=calibrate_ou(params.t2_n_star, params.t2_n_echo),
            t1_e=params.t1_e,
            t1_n=params.t1_n,
        )
