"""Photon arrival simulation, dead-time culling, thinning and binning."""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .scene import BinGrid, SceneModel


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by an explicit 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class EventSequence:
    """Strictly increasing absolute event times (ns) over ``n_r`` periods."""

    times: np.ndarray
    n_r: int
    t_r: float

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))

    def __len__(self):
        return len(self.times)

    @property
    def detection_times(self) -> np.ndarray:
        """Times modulo the illumination period."""
        return np.mod(self.times, self.t_r)

    def head(self, n: int) -> "EventSequence":
        """First ``n`` events; ``n_r`` is cut back to the period of the last one."""
        times = self.times[:n]
        n_r = self.n_r if len(times) == 0 else int(times[-1] // self.t_r) + 1
        return EventSequence(times, min(n_r, self.n_r), self.t_r)


@dataclass(frozen=True)
class BinnedHistogram:
    counts: np.ndarray
    grid: BinGrid
    normalized: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        object.__setattr__(self, "counts", counts)
        total = counts.sum()
        norm = counts / total if total > 0 else np.zeros(len(counts))
        object.__setattr__(self, "normalized", norm)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_frequencies(cls, freq, grid: BinGrid) -> "BinnedHistogram":
        """Wrap a real-valued frequency vector (e.g. a theoretical pdf * t_bin)."""
        return cls(np.asarray(freq, dtype=float), grid)


def sample_arrivals(model: SceneModel, n_r: int, seed: int) -> EventSequence:
    """Draw one realization of the periodic inhomogeneous Poisson process.

    Signal and background are sampled as independent Poisson components per
    period: background times are uniform on the period, signal times are
    ``tau + sigma * N(0, 1)`` wrapped into the period.
    """
    if n_r < 1:
        raise ValueError("n_r must be >= 1")
    rng = make_rng(seed)
    t_r = model.t_r
    n_sig = rng.poisson(model.S, size=n_r) if model.S > 0 else np.zeros(n_r, dtype=int)
    n_bkg = rng.poisson(model.B, size=n_r) if model.B > 0 else np.zeros(n_r, dtype=int)
    sig_off = np.mod(model.tau + model.sigma * rng.standard_normal(n_sig.sum()), t_r)
    bkg_off = rng.random(n_bkg.sum()) * t_r
    period = np.concatenate([np.repeat(np.arange(n_r), n_sig),
                             np.repeat(np.arange(n_r), n_bkg)])
    offsets = np.concatenate([sig_off, bkg_off])
    times = period * t_r + offsets
    times.sort(kind="stable")
    # coincident draws have probability zero but would break strict ordering
    if len(times) > 1:
        keep = np.concatenate([[True], np.diff(times) > 0])
        times = times[keep]
    return EventSequence(times, n_r, t_r)


def apply_dead_time(arrivals: EventSequence, t_d: float) -> EventSequence:
    """Cull arrivals within ``t_d`` of the last kept (detected) event.

    The first arrival is always detected; an arrival is kept only if it is
    strictly later than the previous detection plus ``t_d``.
    """
    times = arrivals.times
    if t_d <= 0 or len(times) == 0:
        return EventSequence(times.copy(), arrivals.n_r, arrivals.t_r)
    seq = times.tolist()
    kept = []
    i, n = 0, len(seq)
    while i < n:
        t = seq[i]
        kept.append(t)
        i = bisect_right(seq, t + t_d, i + 1)
    return EventSequence(np.asarray(kept), arrivals.n_r, arrivals.t_r)


def thin(arrivals: EventSequence, keep_prob: float, seed: int) -> EventSequence:
    """Keep each event independently with probability ``keep_prob``."""
    if not 0 <= keep_prob <= 1:
        raise ValueError("keep_prob must lie in [0, 1]")
    if keep_prob == 1:
        return EventSequence(arrivals.times.copy(), arrivals.n_r, arrivals.t_r)
    rng = make_rng(seed)
    mask = rng.random(len(arrivals)) < keep_prob
    return EventSequence(arrivals.times[mask], arrivals.n_r, arrivals.t_r)


def low_flux_keep_prob(total_flux: float, occupancy: float = 0.05) -> float:
    """Thinning probability so that a fraction ``occupancy`` of periods see a photon."""
    target = -np.log1p(-occupancy)
    if total_flux <= target:
        return 1.0
    return float(target / total_flux)


def bin_detections(events: EventSequence, grid: BinGrid) -> BinnedHistogram:
    """Histogram of event times modulo ``t_r``; exact bin edges go to the lower bin."""
    x = np.mod(events.times, grid.t_r)
    idx = np.floor(x / grid.t_bin).astype(np.int64)
    # edge ties (measure zero) belong to the lower bin
    on_edge = (idx > 0) & (idx * grid.t_bin == x)
    idx[on_edge] -= 1
    idx = np.clip(idx, 0, grid.n_b - 1)
    counts = np.bincount(idx, minlength=grid.n_b)
    return BinnedHistogram(counts, grid)


def interdetection_periods(detections: EventSequence, model: SceneModel) -> np.ndarray:
    """Whole periods elapsed between each detector reset and the next detection."""
    t = detections.times
    if len(t) < 2:
        return np.zeros(0, dtype=np.int64)
    r = np.floor((t[1:] - (t[:-1] + model.t_d)) / model.t_r).astype(np.int64)
    return np.maximum(r, 0)
