"""Seeded Monte Carlo experiments producing CSV tables.

Every trial ``t`` draws its randomness from ``base_seed + t``; sub-streams
(arrivals, thinning, delay draw, background acquisition) are derived from
that seed, so outputs depend only on the configuration and never on the
number of worker processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError
from .estimators import (Method, References, estimate_background_ml, estimate_depth,
                         estimate_lambda_ml, estimate_signal, log_matched_filter,
                         wrap_delay)
from .markov import detection_pdf, fisher_information
from .scene import BinGrid, SceneModel, arrival_pdf
from .simulate import (apply_dead_time, bin_detections, interdetection_periods,
                       low_flux_keep_prob, sample_arrivals, thin)

log = logging.getLogger(__name__)

_STREAMS = {"arrivals": 1, "thin": 2, "tau": 3, "background": 4}


def stream_seed(seed: int, name: str) -> int:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _STREAMS[name]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class ExperimentConfig:
    S_values: list = field(default_factory=lambda: [3.16])
    B_values: list = field(default_factory=lambda: [0.562])
    t_r: float = 100.0
    t_d: float = 75.0
    sigma: float = 0.2
    t_bin: float = 0.05
    tau: float | None = None
    n_r: list = field(default_factory=lambda: [100, 300, 1000, 3000, 10000])
    detections: list = field(default_factory=lambda: [20, 50, 100, 200, 500])
    trials: int = 100
    base_seed: int = 0
    methods: list = field(default_factory=lambda: [m.value for m in Method])
    out_dir: str = "out"
    t_r_values: list | None = None
    compare_bin: float | None = None
    occupancy: float = 0.05
    threads: int = 1

    def __post_init__(self):
        for name in ("S_values", "B_values", "n_r", "methods", "detections"):
            value = getattr(self, name)
            if not isinstance(value, (list, tuple)) or len(value) == 0:
                raise ConfigError(f"{name} must be a nonempty list")
        if self.t_r_values is not None and len(self.t_r_values) == 0:
            raise ConfigError("t_r_values must be nonempty when given")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        bad = [m for m in self.methods if m not in Method.__members__]
        if bad:
            raise ConfigError(f"unknown methods {bad}; expected {list(Method.__members__)}")
        if any(int(n) < 1 for n in self.n_r):
            raise ConfigError("every n_r must be >= 1")
        if not 0 < self.occupancy < 1:
            raise ConfigError("occupancy must lie in (0, 1)")
        try:
            for t_r in self.timing_periods:
                BinGrid.for_model(self.scene(self.S_values[0], self.B_values[0], t_r=t_r),
                                  self.t_bin)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def timing_periods(self) -> list:
        return list(self.t_r_values) if self.t_r_values else [self.t_r]

    def scene(self, S, B, t_r=None, tau=None) -> SceneModel:
        t_r = self.t_r if t_r is None else t_r
        if tau is None:
            tau = self.tau if self.tau is not None else t_r / 2
        return SceneModel(t_r=float(t_r), t_d=float(self.t_d), sigma=float(self.sigma),
                          S=float(S), B=float(B), tau=float(tau) % float(t_r))

    def scenes(self):
        for S in self.S_values:
            for B in self.B_values:
                yield S, B


def scene_id(S, B, t_r=None) -> str:
    base = f"S{S:g}_B{B:g}"
    return base if t_r is None else f"{base}_tr{t_r:g}"


@dataclass(frozen=True)
class TrialRecord:
    scene: str
    method: str
    n_r: int
    detections: int
    tau_true: float
    tau_hat: float
    sq_error: float
    seed: int

    HEADER = ("scene_id", "method", "n_r", "detections", "tau_true_ns", "tau_hat_ns",
              "sq_error_ns2", "seed")

    def row(self):
        return (self.scene, self.method, self.n_r, self.detections, self.tau_true,
                self.tau_hat, self.sq_error, self.seed)


def squared_delay_error(tau_hat: float, tau_true: float, t_r: float) -> float:
    return wrap_delay(tau_hat - tau_true, t_r) ** 2


def total_variation(p, q, factor: int = 1) -> float:
    """TV distance between two probability vectors after merging ``factor`` bins."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if factor > 1:
        n = len(p) - len(p) % factor
        p = np.add.reduceat(p[:n], np.arange(0, n, factor))
        q = np.add.reduceat(q[:n], np.arange(0, n, factor))
    return 0.5 * float(np.abs(p - q).sum())


def _map(fn, items, threads):
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _draw_tau(config, grid, seed):
    if config.tau is not None:
        idx = int(np.floor(config.tau / grid.t_bin)) % grid.n_b
    else:
        idx = int(np.random.default_rng(stream_seed(seed, "tau")).integers(grid.n_b))
    return float(grid.centers[idx])


def _simulate_pair(model, n_r, seed, occupancy):
    """High-flux and low-flux detection sequences from one arrival realization."""
    arrivals = sample_arrivals(model, n_r, stream_seed(seed, "arrivals"))
    high = apply_dead_time(arrivals, model.t_d)
    keep = low_flux_keep_prob(model.total_flux, occupancy)
    low = apply_dead_time(thin(arrivals, keep, stream_seed(seed, "thin")), model.t_d)
    return high, low


def _simulate_until(model, n_det, seed, keep_prob=1.0):
    """First ``n_det`` detections, growing the acquisition until enough are seen."""
    rate = max(min(model.total_flux * keep_prob, 1.0 / (model.t_d / model.t_r + 1e-9)), 1e-6)
    n_r = int(math.ceil(1.5 * n_det / rate)) + 10
    while True:
        arrivals = sample_arrivals(model, n_r, stream_seed(seed, "arrivals"))
        if keep_prob < 1:
            arrivals = thin(arrivals, keep_prob, stream_seed(seed, "thin"))
        det = apply_dead_time(arrivals, model.t_d)
        if len(det) >= n_det:
            return det.head(n_det)
        n_r *= 2


@dataclass(frozen=True)
class _MseJob:
    config: ExperimentConfig
    S: float
    B: float
    x_axis: str
    trial: int
    refs: References


def _mse_trial(job: _MseJob):
    cfg = job.config
    seed = cfg.base_seed + job.trial
    base = cfg.scene(job.S, job.B)
    grid = job.refs.grid
    tau_true = _draw_tau(cfg, grid, seed)
    model = base.with_tau(tau_true)
    sid = scene_id(job.S, job.B)
    records = []
    xs = cfg.n_r if job.x_axis == "illuminations" else cfg.detections
    keep = low_flux_keep_prob(model.total_flux, cfg.occupancy)
    for x in xs:
        x = int(x)
        if job.x_axis == "illuminations":
            high, low = _simulate_pair(model, x, seed, cfg.occupancy)
        else:
            high = _simulate_until(model, x, seed)
            low = _simulate_until(model, x, seed, keep_prob=keep)
        for name in cfg.methods:
            det = low if name == "LF" else high
            if len(det) == 0:
                tau_hat = job.refs.delay
            else:
                hist = bin_detections(det, grid)
                tau_hat = estimate_depth(name, hist, base, job.refs).tau_hat
            n_r = det.n_r if job.x_axis == "detections" else x
            records.append(TrialRecord(sid, name, n_r, len(det), tau_true, tau_hat,
                                       squared_delay_error(tau_hat, tau_true, model.t_r),
                                       seed))
    return records


def summarize_mse(records, x_key):
    """Group trial records by (scene, method, x) into MSE rows with standard errors."""
    groups = {}
    for r in records:
        groups.setdefault((r.scene, r.method, x_key(r)), []).append(r)
    rows = []
    for (sid, method, x), recs in groups.items():
        se = np.array([r.sq_error for r in recs])
        n = len(se)
        stderr = float(se.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
        rows.append((sid, method, x, n, float(se.mean()), stderr,
                     float(np.mean([r.detections for r in recs]))))
    return rows


MSE_HEADER = ("scene_id", "method", "x", "trials", "mse_ns2", "stderr_ns2",
              "mean_detections")


def run_mse_study(config: ExperimentConfig, x_axis: str = "illuminations",
                  out_dir=None, threads: int | None = None):
    """MSE of each method versus illuminations or versus detection count.

    In ``detections`` mode every trial keeps exactly the first ``N``
    detections of its acquisition for each target ``N`` in
    ``config.detections``, so methods are compared at equal counts.
    Returns ``(summary_rows, trial_records)`` and writes ``mse.csv`` and
    ``trials.csv`` when ``out_dir`` is given.
    """
    if x_axis not in ("illuminations", "detections"):
        raise ConfigError("x_axis must be 'illuminations' or 'detections'")
    threads = config.threads if threads is None else threads
    need_detection = any(m in ("SC", "MCPDF") for m in config.methods)
    jobs = []
    for S, B in config.scenes():
        model = config.scene(S, B)
        grid = BinGrid.for_model(model, config.t_bin)
        refs = References.build(model, grid, detection=need_detection)
        jobs.extend(_MseJob(config, S, B, x_axis, t, refs) for t in range(config.trials))
    records = [r for batch in _map(_mse_trial, jobs, threads) for r in batch]
    if x_axis == "illuminations":
        rows = summarize_mse(records, lambda r: r.n_r)
    else:
        rows = summarize_mse(records, lambda r: r.detections)
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    if out_dir is not None:
        out = io.ensure_dir(out_dir)
        io.write_csv(out / "mse.csv", MSE_HEADER, rows)
        io.write_csv(out / "trials.csv", TrialRecord.HEADER, (r.row() for r in records))
    return rows, records


def run_density_compare(config: ExperimentConfig, out_dir=None):
    """Simulated detection histograms against predicted and arrival densities.

    Uses the largest ``n_r`` in the config. TV distances are computed after
    merging bins to ``compare_bin`` ns (default ``2 * sigma``) so that the
    figure reflects model mismatch rather than per-bin counting noise.
    """
    n_r = int(max(config.n_r))
    summary = []
    tables = {}
    for t_r in config.timing_periods:
        for S, B in config.scenes():
            model = config.scene(S, B, t_r=t_r)
            grid = BinGrid.for_model(model, config.t_bin)
            pred = detection_pdf(model, grid)
            arr = arrival_pdf(model, grid)
            det = apply_dead_time(sample_arrivals(model, n_r, config.base_seed), model.t_d)
            sim = bin_detections(det, grid).normalized
            width = config.compare_bin if config.compare_bin else 2 * model.sigma
            factor = max(1, int(round(width / grid.t_bin)))
            tv_sim = total_variation(sim, pred * grid.t_bin, factor)
            tv_arr = total_variation(pred * grid.t_bin, arr * grid.t_bin, factor)
            ripple = ripple_excess(model, grid, pred, arr)
            sid = scene_id(S, B, t_r)
            summary.append((sid, S, B, t_r, n_r, len(det), tv_sim, tv_arr,
                            factor * grid.t_bin, ripple))
            tables[sid] = (grid.centers, sim, pred, arr)
    if out_dir is not None:
        out = io.ensure_dir(out_dir)
        for sid, (c, sim, pred, arr) in tables.items():
            io.write_columns(out / f"density_{sid}.csv", {
                "bin_center_ns": c, "sim_freq": sim, "pred_pdf": pred, "arrival_pdf": arr})
        io.write_csv(out / "density_summary.csv",
                     ("scene_id", "S", "B", "t_r", "n_r", "detections", "tv_sim_pred",
                      "tv_pred_arrival", "compare_bin_ns", "ripple_ratio"), summary)
    return summary, tables


def ripple_window(model: SceneModel, grid: BinGrid, half_width_sigmas: float = 3.0):
    """Bin indices within ``3 sigma`` of ``(tau + t_d) mod t_r``."""
    center = (model.tau + model.t_d) % model.t_r
    d = np.abs(((grid.centers - center + model.t_r / 2) % model.t_r) - model.t_r / 2)
    return np.flatnonzero(d <= half_width_sigmas * model.sigma)


def ripple_excess(model, grid, pred, arr) -> float:
    """Ratio of predicted to arrival probability mass in the ripple window."""
    idx = ripple_window(model, grid)
    return float(pred[idx].sum() / arr[idx].sum())


def run_fisher_map(config: ExperimentConfig, out_dir=None):
    """Per-detection Fisher information of arrival and detection densities."""
    rows = []
    for t_r in config.timing_periods:
        for S, B in config.scenes():
            model = config.scene(S, B, t_r=t_r)
            grid = BinGrid.for_model(model, config.t_bin)
            model = model.with_tau(grid.centers[grid.n_b // 2])
            fi_a = fisher_information(model, grid, "arrival")
            fi_d = fisher_information(model, grid, "detection")
            rows.append((S, B, t_r, fi_a, fi_d, fi_d / fi_a))
    if out_dir is not None:
        io.write_csv(Path(io.ensure_dir(out_dir)) / "fisher.csv",
                     ("S", "B", "t_r", "FI_A", "FI_D", "ratio"), rows)
    return rows


@dataclass(frozen=True)
class _ParamJob:
    config: ExperimentConfig
    S: float
    B: float
    trial: int
    refs: References


def _param_trial(job: _ParamJob):
    cfg = job.config
    seed = cfg.base_seed + job.trial
    base = cfg.scene(job.S, job.B)
    grid = job.refs.grid
    tau_true = _draw_tau(cfg, grid, seed)
    model = base.with_tau(tau_true)
    out = []
    for n_r in cfg.n_r:
        n_r = int(n_r)
        high, _ = _simulate_pair(model, n_r, seed, cfg.occupancy)
        dark = apply_dead_time(
            sample_arrivals(model.with_flux(0.0, model.B), n_r, stream_seed(seed, "background")),
            model.t_d)
        r = interdetection_periods(high, model)
        lam = estimate_lambda_ml(r) if len(r) else None
        bkg = estimate_background_ml(dark, model.t_d) if len(dark) >= 2 else None
        est = estimate_signal(lam.value if lam else 0.0, bkg.B if bkg else 0.0,
                              n_used=len(r), saturated=bool(lam and lam.saturated))
        hist = bin_detections(high, grid)
        if hist.total == 0:
            tau_true_params = tau_est_params = job.refs.delay
        else:
            tau_true_params = log_matched_filter(hist, job.refs.f_detection,
                                                 job.refs.delay).tau_hat
            est_model = base.with_flux(est.s_hat, est.b_hat).with_tau(job.refs.delay)
            f_est = detection_pdf(est_model, grid)
            tau_est_params = log_matched_filter(hist, f_est, job.refs.delay).tau_hat
        out.append((n_r, est, len(high),
                    squared_delay_error(tau_true_params, tau_true, model.t_r),
                    squared_delay_error(tau_est_params, tau_true, model.t_r)))
    return out


def run_param_estimation(config: ExperimentConfig, out_dir=None, threads=None):
    """Flux estimates and MCPDF ranging error with estimated versus true parameters."""
    threads = config.threads if threads is None else threads
    est_rows, mse_rows = [], []
    for S, B in config.scenes():
        model = config.scene(S, B)
        grid = BinGrid.for_model(model, config.t_bin)
        refs = References.build(model, grid)
        jobs = [_ParamJob(config, S, B, t, refs) for t in range(config.trials)]
        results = _map(_param_trial, jobs, threads)
        sid = scene_id(S, B)
        for i, n_r in enumerate(config.n_r):
            per = [res[i] for res in results]
            for name, vals in (("B_hat", [p[1].b_hat for p in per]),
                               ("Lambda_hat", [p[1].lambda_hat for p in per]),
                               ("S_hat", [p[1].s_hat for p in per])):
                q25, med, q75 = np.percentile(vals, [25, 50, 75])
                truth = {"B_hat": B, "Lambda_hat": S + B, "S_hat": S}[name]
                est_rows.append((sid, int(n_r), name, truth, med, q25, q75,
                                 float(np.median(np.abs(np.array(vals) - truth)))))
            for label, col in (("true_params", 3), ("estimated_params", 4)):
                se = np.array([p[col] for p in per])
                stderr = float(se.std(ddof=1) / math.sqrt(len(se))) if len(se) > 1 else float("nan")
                mse_rows.append((sid, int(n_r), label, len(se), float(se.mean()), stderr))
    if out_dir is not None:
        out = io.ensure_dir(out_dir)
        io.write_csv(out / "param_estimates.csv",
                     ("scene_id", "n_r", "parameter", "truth", "median", "q25", "q75",
                      "median_abs_error"), est_rows)
        io.write_csv(out / "param_mse.csv",
                     ("scene_id", "n_r", "variant", "trials", "mse_ns2", "stderr_ns2"),
                     mse_rows)
    return est_rows, mse_rows
