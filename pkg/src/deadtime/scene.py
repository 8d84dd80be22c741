"""Periodic arrival-intensity model: Gaussian pulse on a constant background.

All times are in nanoseconds, rates in photons/ns, and per-period counts
(``S``, ``B``, total flux) are dimensionless.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateModelError, InvalidIntervalError

# Periodic images of the pulse summed when evaluating it on one period.
# Three images (previous, current, next) are exact to double precision
# whenever sigma < t_r / 8.
_IMAGES = (-1, 0, 1)


@dataclass(frozen=True)
class SceneModel:
    """Illumination and background parameters defining the arrival intensity.

    Parameters
    ----------
    t_r : float
        Illumination (repetition) period, ns.
    t_d : float
        Detector dead time, ns.
    sigma : float
        Half pulse width of the Gaussian pulse, ns.
    S : float
        Mean signal photons per period.
    B : float
        Mean background photons per period.
    tau : float
        Round-trip delay ``2 z / c`` in ``[0, t_r)``, ns.
    """

    t_r: float = 100.0
    t_d: float = 75.0
    sigma: float = 0.2
    S: float = 1.0
    B: float = 1.0
    tau: float = 50.0

    def __post_init__(self):
        if not self.t_r > 0:
            raise ValueError(f"t_r must be positive, got {self.t_r}")
        if not self.t_d >= 0:
            raise ValueError(f"t_d must be non-negative, got {self.t_d}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (self.S >= 0 and self.B >= 0):
            raise ValueError("S and B must be non-negative")
        if not 0 <= self.tau < self.t_r:
            raise ValueError(f"tau must lie in [0, t_r), got {self.tau}")

    @property
    def total_flux(self) -> float:
        return self.S + self.B

    @property
    def sbr(self) -> float:
        return self.S / self.B if self.B > 0 else math.inf

    @property
    def background_rate(self) -> float:
        return self.B / self.t_r

    @property
    def x_d(self) -> float:
        """Effective dead time ``t_d mod t_r``."""
        return math.fmod(self.t_d, self.t_r)

    def with_tau(self, tau: float) -> "SceneModel":
        return replace(self, tau=float(tau) % self.t_r)

    def with_flux(self, S: float, B: float) -> "SceneModel":
        return replace(self, S=float(S), B=float(B))


@dataclass(frozen=True)
class BinGrid:
    """Equally spaced TCSPC bins over one period.

    ``n_d`` is the dead time expressed in whole bins, ``round(x_d / t_bin)``.
    """

    n_b: int
    t_bin: float
    n_d: int = 0

    def __post_init__(self):
        if self.n_b < 1:
            raise ValueError("n_b must be at least 1")
        if not self.t_bin > 0:
            raise ValueError("t_bin must be positive")
        if not 0 <= self.n_d < self.n_b:
            raise ValueError(f"n_d must lie in [0, n_b), got {self.n_d}")

    @classmethod
    def for_model(cls, model: SceneModel, t_bin: float) -> "BinGrid":
        n_b = int(round(model.t_r / t_bin))
        if n_b < 1 or not math.isclose(n_b * t_bin, model.t_r, rel_tol=1e-9):
            raise ValueError(
                f"t_bin={t_bin} does not divide t_r={model.t_r} into whole bins")
        t_bin = model.t_r / n_b
        n_d = int(round(model.x_d / t_bin)) % n_b
        return cls(n_b=n_b, t_bin=t_bin, n_d=n_d)

    @property
    def t_r(self) -> float:
        return self.n_b * self.t_bin

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_b) + 0.5) * self.t_bin

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.n_b + 1) * self.t_bin


def _pulse_normalizer(model: SceneModel) -> float:
    # integral over [0, t_r) of the three-image Gaussian sum
    return float(ndtr((2 * model.t_r - model.tau) / model.sigma)
                 - ndtr(-(model.t_r + model.tau) / model.sigma))


def _gauss_mass(a, b):
    """Standard normal mass on [a, b], accurate in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper = a > 0
    return np.where(upper, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


def intensity_at(model: SceneModel, x) -> np.ndarray | float:
    """Arrival intensity at time(s) ``x`` (photons/ns), periodic in ``t_r``."""
    xs = np.mod(np.asarray(x, dtype=float), model.t_r)
    rate = np.full(xs.shape, model.background_rate)
    if model.S > 0:
        scale = model.S / (_pulse_normalizer(model) * model.sigma * math.sqrt(2 * math.pi))
        for k in _IMAGES:
            d = (xs - model.tau - k * model.t_r) / model.sigma
            rate = rate + scale * np.exp(-0.5 * d * d)
    return rate if rate.ndim else float(rate)


def _primitive(model: SceneModel, x):
    """Integral of the intensity over [0, x] for x in [0, t_r]."""
    x = np.asarray(x, dtype=float)
    out = model.background_rate * x
    if model.S > 0:
        scale = model.S / _pulse_normalizer(model)
        for k in _IMAGES:
            c = model.tau + k * model.t_r
            out = out + scale * _gauss_mass((0.0 - c) / model.sigma, (x - c) / model.sigma)
    return out


def _absolute_primitive(model: SceneModel, t):
    t = np.asarray(t, dtype=float)
    periods = np.floor(t / model.t_r)
    frac = t - periods * model.t_r
    # guard against frac == t_r from rounding
    frac = np.clip(frac, 0.0, model.t_r)
    return periods * model.total_flux + _primitive(model, frac)


def cumulative_intensity(model: SceneModel, a, b):
    """Expected number of arrivals in ``[a, b]``; ``a`` and ``b`` may span periods.

    Raises
    ------
    InvalidIntervalError
        If any ``a > b``.
    """
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr > b_arr):
        raise InvalidIntervalError("cumulative_intensity requires a <= b")
    out = _absolute_primitive(model, b_arr) - _absolute_primitive(model, a_arr)
    out = np.where(a_arr == b_arr, 0.0, out)
    return out if out.ndim else float(out)


def bin_masses(model: SceneModel, grid: BinGrid) -> np.ndarray:
    """Expected arrivals per bin per period; sums to the total flux."""
    edges = grid.edges
    lo, hi = edges[:-1], edges[1:]
    masses = model.background_rate * (hi - lo)
    if model.S > 0:
        scale = model.S / _pulse_normalizer(model)
        for k in _IMAGES:
            c = model.tau + k * model.t_r
            masses = masses + scale * _gauss_mass((lo - c) / model.sigma, (hi - c) / model.sigma)
    return masses


def arrival_pdf(model: SceneModel, grid: BinGrid) -> np.ndarray:
    """Arrival-time density per bin (1/ns), normalized so ``sum(pdf) * t_bin == 1``.

    Each entry is the bin average of ``intensity / total_flux``; for bins
    narrow relative to ``sigma`` this equals the center value.
    """
    if model.total_flux <= 0:
        raise DegenerateModelError("arrival pdf undefined for zero total flux")
    masses = bin_masses(model, grid)
    return masses / (masses.sum() * grid.t_bin)
