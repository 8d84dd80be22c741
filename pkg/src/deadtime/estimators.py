"""Flux estimators and log-matched-filter delay estimation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np

from .errors import InsufficientDataError
from .markov import DENSITY_FLOOR, detection_pdf
from .scene import BinGrid, SceneModel, arrival_pdf
from .simulate import BinnedHistogram, EventSequence

S_MIN = 0.01
B_MIN = 0.01
LAMBDA_MAX = 20.0


class Method(str, Enum):
    LF = "LF"
    HF = "HF"
    SC = "SC"
    MCPDF = "MCPDF"
    MCHC = "MCHC"


@dataclass(frozen=True)
class LambdaEstimate:
    value: float
    saturated: bool
    n_used: int


@dataclass(frozen=True)
class BackgroundEstimate:
    rate: float     # photons/ns
    B: float        # photons/period
    n_used: int


@dataclass(frozen=True)
class FluxEstimates:
    lambda_hat: float
    b_hat: float
    s_hat: float
    n_used: int = 0
    saturated: bool = False


@dataclass(frozen=True)
class DelayEstimate:
    tau_hat: float
    method: str
    shift_bins: int = 0
    score_curve: np.ndarray | None = field(default=None, repr=False)


def estimate_lambda_ml(r, lambda_max: float = LAMBDA_MAX) -> LambdaEstimate:
    """Maximum-likelihood total flux from interdetection periods.

    The periods are i.i.d. geometric with success probability
    ``1 - exp(-Lambda)``. When every period is zero the likelihood is
    maximized at infinity; ``lambda_max`` is returned with ``saturated``.
    """
    r = np.asarray(r)
    n = len(r)
    if n == 0:
        raise InsufficientDataError("need at least one interdetection period")
    total = float(r.sum())
    if total == 0:
        return LambdaEstimate(lambda_max, True, n)
    value = -math.log(total / (n + total))
    if value > lambda_max:
        return LambdaEstimate(lambda_max, True, n)
    return LambdaEstimate(value, False, n)


def estimate_background_ml(detections: EventSequence, t_d: float,
                           t_r: float | None = None) -> BackgroundEstimate:
    """Conditional ML background rate from a laser-off detection sequence."""
    t = detections.times
    n = len(t)
    if n < 2:
        raise InsufficientDataError("need at least two detections")
    t_r = detections.t_r if t_r is None else t_r
    live = (t[-1] - t[0]) - (n - 1) * t_d
    if live <= 0:
        raise InsufficientDataError("detections inconsistent with the dead time")
    rate = (n - 1) / live
    return BackgroundEstimate(rate, rate * t_r, n)


def estimate_signal(lambda_hat: float, b_hat: float, s_min: float = S_MIN,
                    b_min: float = B_MIN, n_used: int = 0,
                    saturated: bool = False) -> FluxEstimates:
    """Clamp the ML estimates so that signal and background stay positive."""
    b = max(b_hat, b_min)
    lam = max(lambda_hat, b + s_min)
    return FluxEstimates(lambda_hat=lam, b_hat=b, s_hat=lam - b,
                         n_used=n_used, saturated=saturated)


def _log_reference(ref_pdf, floor):
    return np.log(np.maximum(np.asarray(ref_pdf, dtype=float), floor))


def _argmax_smallest_shift(score: np.ndarray) -> int:
    n = len(score)
    best = score.max()
    tol = 1e-12 * max(1.0, float(np.abs(score).max()))
    cand = np.flatnonzero(score >= best - tol)
    signed = np.where(cand > n // 2, cand - n, cand)
    order = np.lexsort((cand, np.abs(signed)))
    return int(cand[order[0]])


def log_matched_filter(hist, ref_pdf, ref_delay: float, grid: BinGrid | None = None,
                       floor: float = DENSITY_FLOOR, method: str = "",
                       keep_curve: bool = False) -> DelayEstimate:
    """Delay estimate by circular cross-correlation with a log reference density.

    ``ref_pdf`` is the density expected when the delay equals ``ref_delay``.
    The returned delay is ``ref_delay`` plus the best circular shift, where
    shifting by ``s`` bins scores ``sum_k h[k] * log ref[k - s]``.
    Equal scores resolve to the shift of smallest magnitude.
    """
    if isinstance(hist, BinnedHistogram):
        grid = hist.grid if grid is None else grid
        h = np.asarray(hist.counts, dtype=float)
    else:
        h = np.asarray(hist, dtype=float)
    if grid is None:
        raise ValueError("grid is required when hist is a plain array")
    if not h.sum() > 0:
        raise InsufficientDataError("histogram is empty")
    logref = _log_reference(ref_pdf, floor)
    n = len(h)
    score = np.fft.irfft(np.fft.rfft(h) * np.conj(np.fft.rfft(logref)), n)
    s = _argmax_smallest_shift(score)
    signed = s - n if s > n // 2 else s
    tau_hat = (ref_delay + signed * grid.t_bin) % grid.t_r
    return DelayEstimate(tau_hat=float(tau_hat), method=method, shift_bins=signed,
                         score_curve=score if keep_curve else None)


def wrap_delay(d: float, t_r: float) -> float:
    """Wrap a delay difference into ``(-t_r/2, t_r/2]``."""
    w = math.fmod(d, t_r)
    if w > t_r / 2:
        w -= t_r
    elif w <= -t_r / 2:
        w += t_r
    return w


def shift_correction_offset(model: SceneModel, grid: BinGrid,
                            f_detect: np.ndarray | None = None) -> float:
    """Signed delay offset (ns) of the detection-pdf mode relative to the arrival mode."""
    if f_detect is None:
        f_detect = detection_pdf(model, grid)
    f_arrive = arrival_pdf(model, grid)
    diff = (int(np.argmax(f_detect)) - int(np.argmax(f_arrive))) * grid.t_bin
    return wrap_delay(diff, grid.t_r)


@dataclass
class References:
    """Reference densities for one scene, computed at a reference delay."""

    model: SceneModel
    grid: BinGrid
    f_arrival: np.ndarray
    f_detection: np.ndarray | None = None
    offset: float | None = None

    @classmethod
    def build(cls, model: SceneModel, grid: BinGrid, ref_delay: float | None = None,
              detection: bool = True) -> "References":
        if ref_delay is None:
            ref_delay = grid.centers[grid.n_b // 2]
        ref_model = model.with_tau(ref_delay)
        f_a = arrival_pdf(ref_model, grid)
        f_d = offset = None
        if detection:
            f_d = detection_pdf(ref_model, grid)
            offset = shift_correction_offset(ref_model, grid, f_d)
        return cls(ref_model, grid, f_a, f_d, offset)

    @property
    def delay(self) -> float:
        return self.model.tau


def estimate_depth(method, hist: BinnedHistogram, model: SceneModel,
                   references: References | None = None, total_flux: float | None = None,
                   correction_kwargs: dict | None = None) -> DelayEstimate:
    """Estimate the delay from a histogram with one of the five methods.

    ``model`` supplies the timing and flux parameters (true or estimated);
    only the shapes of its densities are used, never its delay. MCHC uses
    ``total_flux`` when given, else ``model.total_flux``.
    """
    method = Method(method)
    grid = hist.grid
    refs = references
    if refs is None:
        refs = References.build(model, grid,
                                detection=method in (Method.SC, Method.MCPDF))
    name = method.value
    if method in (Method.LF, Method.HF):
        return log_matched_filter(hist, refs.f_arrival, refs.delay, method=name)
    if method is Method.SC:
        est = log_matched_filter(hist, refs.f_arrival, refs.delay)
        offset = refs.offset
        if offset is None:
            offset = shift_correction_offset(refs.model, grid)
        tau = (est.tau_hat - offset) % grid.t_r
        return DelayEstimate(tau, name, est.shift_bins - int(round(offset / grid.t_bin)))
    if method is Method.MCPDF:
        f_d = refs.f_detection
        if f_d is None:
            f_d = detection_pdf(refs.model, grid)
        return log_matched_filter(hist, f_d, refs.delay, method=name)
    from .correction import InverseProblem, solve_mchc, corrected_histogram
    lam = model.total_flux if total_flux is None else total_flux
    problem = InverseProblem.from_histogram(hist.normalized, lam, grid)
    result = solve_mchc(problem, **(correction_kwargs or {}))
    h_a = corrected_histogram(result)
    return log_matched_filter(h_a, refs.f_arrival, refs.delay, grid=grid, method=name)
