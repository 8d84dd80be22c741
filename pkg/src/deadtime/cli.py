"""Command-line entry point: ``deadtime <subcommand> [options]``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
failures while running.
"""

from __future__ import annotations

import argparse
from dataclasses import replace
import logging
from pathlib import Path
import sys

import numpy as np

from . import io
from .correction import InverseProblem, solve_mchc
from .errors import ConfigError, DeadTimeError
from .estimators import (Method, References, estimate_background_ml, estimate_depth,
                         estimate_lambda_ml, estimate_signal)
from .experiments import (ExperimentConfig, run_density_compare, run_fisher_map,
                          run_mse_study, run_param_estimation, stream_seed)
from .markov import build_kernel, spectral_gap, stationary_distribution
from .scene import BinGrid, arrival_pdf
from .simulate import apply_dead_time, bin_detections, interdetection_periods, sample_arrivals

log = logging.getLogger("deadtime")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--config", type=Path, help="JSON experiment configuration")
    g.add_argument("--seed", type=int, help="base seed (overrides config)")
    g.add_argument("--out-dir", type=Path, help="output directory (overrides config)")
    g.add_argument("--threads", type=int, help="worker processes for Monte Carlo trials")
    g.add_argument("-v", "--verbose", action="store_true")
    s = p.add_argument_group("scene overrides")
    s.add_argument("--S", type=float, help="signal photons per period")
    s.add_argument("--B", type=float, help="background photons per period")
    s.add_argument("--t-r", type=float, help="repetition period (ns)")
    s.add_argument("--t-d", type=float, help="dead time (ns)")
    s.add_argument("--sigma", type=float, help="pulse width (ns)")
    s.add_argument("--t-bin", type=float, help="bin width (ns)")
    s.add_argument("--tau", type=float, help="delay (ns)")
    s.add_argument("--n-r", type=int, nargs="+", help="numbers of illuminations")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="deadtime",
                     description="Dead-time aware TCSPC modeling and ranging experiments.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", parents=[common], help="simulate detections for one scene")
    p.add_argument("--format", choices=("csv", "bin"), default="csv")

    p = sub.add_parser("stationary", parents=[common], help="stationary detection density")
    p.add_argument("--mode", choices=("matrix-free", "dense"), default="matrix-free")
    p.add_argument("--tol", type=float, default=1e-10)

    sub.add_parser("fisher", parents=[common], help="Fisher information map")

    p = sub.add_parser("estimate", parents=[common], help="delay and flux estimates")
    p.add_argument("--events", type=Path, help="detection events (csv or bin); simulated if omitted")
    p.add_argument("--background", type=Path, help="laser-off detection events for B estimation")
    p.add_argument("--methods", nargs="+", choices=[m.value for m in Method])

    p = sub.add_parser("correct", parents=[common], help="dead-time correction of a histogram")
    p.add_argument("--hist", type=Path, required=True, help="CSV with bin_center_ns,<value>")
    p.add_argument("--lambda", dest="lam", type=float, required=True,
                   help="total flux (photons per period)")
    p.add_argument("--max-iter", type=int, default=50_000)
    p.add_argument("--tol", type=float, default=1e-10)

    p = sub.add_parser("mse-study", parents=[common], help="Monte Carlo ranging MSE")
    p.add_argument("--trials", type=int)
    p.add_argument("--x-axis", choices=("illuminations", "detections"), default="illuminations")
    p.add_argument("--methods", nargs="+", choices=[m.value for m in Method])

    sub.add_parser("density-compare", parents=[common], help="simulated vs predicted densities")

    p = sub.add_parser("param-study", parents=[common], help="flux parameter estimation study")
    p.add_argument("--trials", type=int)
    return parser


def load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {
        "base_seed": args.seed, "out_dir": None if args.out_dir is None else str(args.out_dir),
        "threads": args.threads, "t_r": args.t_r, "t_d": args.t_d, "sigma": args.sigma,
        "t_bin": args.t_bin, "tau": args.tau, "n_r": args.n_r,
        "S_values": None if args.S is None else [args.S],
        "B_values": None if args.B is None else [args.B],
        "trials": getattr(args, "trials", None),
        "methods": getattr(args, "methods", None),
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.t_r is not None and config.t_r_values:
        overrides["t_r_values"] = None
    try:
        return replace(config, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _scene(config):
    model = config.scene(config.S_values[0], config.B_values[0])
    return model, BinGrid.for_model(model, config.t_bin)


def cmd_simulate(config, args):
    model, grid = _scene(config)
    out = io.ensure_dir(config.out_dir)
    n_r = int(config.n_r[-1])
    det = apply_dead_time(sample_arrivals(model, n_r, stream_seed(config.base_seed, "arrivals")),
                          model.t_d)
    path = io.write_events(out / f"events.{args.format}", det, args.format)
    hist = bin_detections(det, grid)
    io.write_histogram(out / "histogram.csv", grid.centers, hist.counts)
    print(f"{len(det)} detections over {n_r} periods -> {path}")


def cmd_stationary(config, args):
    model, grid = _scene(config)
    kernel = build_kernel(model, grid, args.mode)
    res = stationary_distribution(kernel, tol=args.tol)
    out = io.ensure_dir(config.out_dir)
    io.write_columns(out / "stationary.csv", {
        "bin_center_ns": grid.centers, "pred_pdf": res.pdf,
        "arrival_pdf": arrival_pdf(model, grid)})
    info = {"iterations": res.iterations, "residual_l1": res.residual,
            "lambda2_estimate": res.lambda2, "n_b": grid.n_b, "n_d": grid.n_d,
            "mode": kernel.mode}
    if kernel.mode == "dense":
        info["spectral_gap"] = spectral_gap(kernel)
    io.write_json(out / "stationary.json", info)
    print(f"converged in {res.iterations} iterations -> {out / 'stationary.csv'}")


def cmd_fisher(config, args):
    rows = run_fisher_map(config, config.out_dir)
    for S, B, t_r, fa, fd, ratio in rows:
        print(f"S={S:g} B={B:g} t_r={t_r:g}: FI_A={fa:.6g} FI_D={fd:.6g} ratio={ratio:.4g}")


def cmd_estimate(config, args):
    model, grid = _scene(config)
    if args.events:
        det = io.read_events(args.events, model.t_r)
    else:
        n_r = int(config.n_r[-1])
        det = apply_dead_time(
            sample_arrivals(model, n_r, stream_seed(config.base_seed, "arrivals")), model.t_d)
    result = {"detections": len(det), "n_r": det.n_r}
    r = interdetection_periods(det, model)
    lam = estimate_lambda_ml(r) if len(r) else None
    if lam is not None:
        result["lambda_hat"] = lam.value
        result["lambda_saturated"] = lam.saturated
    if args.background:
        bkg = estimate_background_ml(io.read_events(args.background, model.t_r), model.t_d)
        flux = estimate_signal(lam.value if lam else 0.0, bkg.B)
        result.update(b_hat=flux.b_hat, s_hat=flux.s_hat)
    hist = bin_detections(det, grid)
    refs = References.build(model, grid)
    delays = {}
    for name in config.methods:
        delays[name] = estimate_depth(name, hist, model, refs).tau_hat
    result["tau_hat_ns"] = delays
    out = io.ensure_dir(config.out_dir)
    io.write_json(out / "estimate.json", result)
    for name, tau in delays.items():
        print(f"{name:6s} tau_hat = {tau:.6g} ns")


def cmd_correct(config, args):
    centers, values, t_bin = io.read_histogram(args.hist)
    n_b = len(values)
    t_r = n_b * t_bin
    x_d = config.t_d % t_r
    grid = BinGrid(n_b=n_b, t_bin=t_bin, n_d=int(round(x_d / t_bin)) % n_b)
    problem = InverseProblem.from_histogram(values, args.lam, grid)
    res = solve_mchc(problem, max_iter=args.max_iter, tol=args.tol)
    out = io.ensure_dir(config.out_dir)
    io.write_columns(out / "corrected.csv", {
        "bin_center_ns": centers, "lambda_hat": res.lambda_hat,
        "corrected_hist": res.corrected_hist})
    io.write_json(out / "diagnostics.json", {
        "iterations": res.iterations, "terminated": res.terminated,
        "final_objective": res.final_objective, "initial_objective": float(res.objective_trace[0]),
        "box_bound": res.M, "fixed_point_C": res.init_C, "n_b": n_b, "n_d": grid.n_d,
        "lambda": args.lam, "t_d": config.t_d})
    print(f"{res.terminated} after {res.iterations} iterations -> {out / 'corrected.csv'}")


def cmd_mse_study(config, args):
    rows, _ = run_mse_study(config, args.x_axis, config.out_dir)
    for sid, method, x, n, mse, se, _ in rows:
        print(f"{sid} {method:6s} x={x:<8g} mse={mse:.4g} +/- {se:.2g} ns^2 ({n} trials)")


def cmd_density_compare(config, args):
    summary, _ = run_density_compare(config, config.out_dir)
    for sid, *_, tv_sim, tv_arr, width, ripple in summary:
        print(f"{sid}: TV(sim,pred)={tv_sim:.4f} TV(pred,arrival)={tv_arr:.4f} "
              f"at {width:g} ns, ripple ratio={ripple:.3f}")


def cmd_param_study(config, args):
    est_rows, mse_rows = run_param_estimation(config, config.out_dir)
    for sid, n_r, variant, n, mse, se in mse_rows:
        print(f"{sid} n_r={n_r} {variant}: mse={mse:.4g} +/- {se:.2g} ns^2")


COMMANDS = {
    "simulate": cmd_simulate, "stationary": cmd_stationary, "fisher": cmd_fisher,
    "estimate": cmd_estimate, "correct": cmd_correct, "mse-study": cmd_mse_study,
    "density-compare": cmd_density_compare, "param-study": cmd_param_study,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        config = load_config(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"deadtime: config error: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"deadtime: config error: {exc}", file=sys.stderr)
        return 1
    except (DeadTimeError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"deadtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
