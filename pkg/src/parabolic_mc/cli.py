"""Configuration-driven experiment runner.

    parabolic-mc <experiment|run> --config FILE [--seed N] [--workers N] [--out-dir DIR]

Outputs go to ``<out-dir>/<experiment>-<config hash[:12]>/`` together with
``manifest.json``. Exit codes: 0 success, 2 config error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import SamplingGrid, validation_reports
from .config import EXPERIMENTS, ExperimentConfig, load_config
from .coupling import estimate_coupling_exponent, coupling_time_stats
from .errors import ConfigError, ParabolicMCError
from .estimator import DensityEstimate, estimate_fundamental, estimate_holder_exponent, \
    fit_gaussian_envelope
from .io import write_csv, write_json, write_trajectory_dump
from .reference import ConstantCoefficientKernel, Grid1D, crank_nicolson_1d, gaussian_kernel
from .rng import RngStream
from .sde import TimeGrid, run_paths, simulate_paths

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _point(v, d):
    arr = np.atleast_1d(np.asarray(v if v is not None else 0.0, dtype=float))
    if arr.size == 1 and d > 1:
        arr = np.full(d, float(arr[0]))
    if arr.size != d:
        raise ConfigError(f"point {v!r} does not have dimension {d}")
    return arr


def _queries(v, d):
    arr = np.asarray(v, dtype=float)
    return arr.reshape(-1, d)


def _grid(field, t, p):
    if "h" in p:
        return TimeGrid.with_step(0.0, t, p["h"])
    return TimeGrid.default(0.0, t, field.lam)


def _density_csv(path, est: DensityEstimate):
    write_csv(path, est.header(), list(est.rows()))


def run_validate(cfg, field, rng, out):
    p = cfg.params
    grid = SamplingGrid(p.get("lo", -5.0), p.get("hi", 5.0), p.get("n_grid", 101 if field.d == 1 else 21),
                        tuple(p.get("times", [0.0])), field.d)
    reports = validation_reports(field, grid, theta=p.get("theta"), m=p.get("m", 1.0),
                                 radius=p.get("radius", 5.0))
    ok = all(r.passed is not False for r in reports)
    write_json(out / "validation.json", {"pass": ok, "reports": [r.to_dict() for r in reports]})
    return {"pass": ok}


def run_simulate(cfg, field, rng, out):
    p = cfg.params
    t = p["t"]
    x = _point(p.get("x"), field.d)
    grid = _grid(field, t, p)
    n = p.get("n_paths", 1000)
    batch = run_paths(field, x[None, :], grid, n, rng, chunk_size=cfg.chunk_size,
                      workers=cfg.workers)
    ends = batch.endpoints[:, 0, :]
    lw = batch.log_weight[:, 0]
    cols = ["x"] if field.d == 1 else [f"x{i + 1}" for i in range(field.d)]
    write_csv(out / "endpoints.csv", [*cols, "log_weight"],
              [[*e.tolist(), float(w)] for e, w in zip(ends, lw)])
    n_dump = p.get("n_dump", 0)
    if n_dump:
        bundle = simulate_paths(field, x, grid, min(n_dump, n), rng.substream(1),
                                chunk_size=cfg.chunk_size)
        write_trajectory_dump(out / "trajectories.bin", bundle.states, grid.h)
    return {"n_paths": n}


def run_estimate(cfg, field, rng, out):
    p = cfg.params
    t = p["t"]
    x = _point(p.get("x"), field.d)
    est = estimate_fundamental(field, x, t, _queries(p["y"], field.d), p.get("n_paths", 100000),
                               _grid(field, t, p), rng, p.get("bandwidth"),
                               chunk_size=cfg.chunk_size, workers=cfg.workers)
    _density_csv(out / "density.csv", est)
    return {"n_points": len(est.values)}


def run_couple(cfg, field, rng, out):
    p = cfg.params
    t = p["t"]
    x = _point(p.get("x"), field.d)
    deltas = sorted(float(v) for v in p["deltas"])
    n = p.get("n_paths", 10000)
    grid = _grid(field, t, p)
    kw = dict(tol_factor=p.get("tol_factor", 0.01),
              bridge_correction=p.get("bridge_correction", True),
              chunk_size=cfg.chunk_size, workers=cfg.workers)
    direction = p.get("direction")
    if len(deltas) >= 3:
        fit = estimate_coupling_exponent(field, x, deltas, t, n, grid, rng, direction=direction,
                                         **kw)
        table = fit.table
        write_json(out / "exponent.json", {"slope": fit.slope, "intercept": fit.intercept,
                                           "ci_low": fit.ci_low, "ci_high": fit.ci_high})
    else:
        u = np.zeros(field.d)
        u[0] = 1.0
        if direction is not None:
            u = _point(direction, field.d)
            u = u / np.linalg.norm(u)
        table = [coupling_time_stats(field, x, x + dl * u, t, n, grid, rng.substream(j), **kw)
                 for j, dl in enumerate(deltas)]
    write_csv(out / "coupling.csv", ["delta", "t", "e_t_tau", "stderr", "n_pairs"],
              [s.table_row() for s in table])
    for s in table:
        write_csv(out / f"survival_delta{s.delta:.6g}.csv", ["s", "survival", "stderr"],
                  s.survival_rows())
    return {"n_deltas": len(table)}


def run_holder(cfg, field, rng, out):
    p = cfg.params
    t = p["t"]
    x = _point(p.get("x"), field.d)
    direction = _point(p.get("direction", 1.0), field.d)
    rep = estimate_holder_exponent(field, x, direction, p["deltas"], t, _point(p["y"], field.d),
                                   p.get("n_paths", 100000), _grid(field, t, p), rng,
                                   p.get("bandwidth"), chunk_size=cfg.chunk_size,
                                   workers=cfg.workers)
    write_json(out / "holder.json", rep.to_dict())
    return {"exponent": rep.exponent}


def run_envelope(cfg, field, rng, out):
    p = cfg.params
    x = _point(p.get("x"), field.d)
    n_r = p.get("n_r", 13)
    factor = p.get("r_factor", 3.0)
    ests = []
    rows = []
    for j, t in enumerate(sorted(float(v) for v in p["times"])):
        r_max = factor * math.sqrt(field.lam * t)
        offs = np.linspace(-r_max, r_max, n_r)
        qs = x[None, :] + offs[:, None] * np.eye(field.d)[0][None, :]
        est = estimate_fundamental(field, x, t, qs, p.get("n_paths", 100000), _grid(field, t, p),
                                   rng.substream(j), p.get("bandwidth"),
                                   chunk_size=cfg.chunk_size, workers=cfg.workers)
        ests.append(est)
        rows += [[t, *r] for r in est.rows()]
    env, report = fit_gaussian_envelope(ests, field.d)
    d = field.d
    ys = ["y"] if d == 1 else [f"y{i + 1}" for i in range(d)]
    write_csv(out / "densities.csv", ["t", *ys, "value", "stderr", "n", "bandwidth"], rows)
    doc = env.to_dict()
    doc.update({"n_points": report.n_points, "n_violations": report.n_violations,
                "pass": report.passed})
    write_json(out / "envelope.json", doc)
    return {"pass": report.passed}


def run_oracle(cfg, field, rng, out):
    p = cfg.params
    t = p["t"]
    x = _point(p.get("x"), field.d)
    const = field.constant
    if const is not None:
        k = ConstantCoefficientKernel.from_field(const)
        ys = _queries(p.get("y", [0.0]), field.d)
        vals = np.atleast_1d(gaussian_kernel(k, t, x, ys))
        est = DensityEstimate(ys, vals, np.zeros_like(vals), np.zeros(field.d), 0, "oracle", t, x)
        method = "closed-form"
    else:
        if field.d != 1:
            raise ConfigError("oracle for variable coefficients is only available in d = 1")
        half = 6 * math.sqrt(field.lam * t) + 2
        grid = Grid1D(p.get("x_min", x[0] - half), p.get("x_max", x[0] + half),
                      p.get("n_cells", 1200), p.get("dt", 1e-3))
        sol = crank_nicolson_1d(field, float(x[0]), t, grid, form=p.get("form", "forward"))
        ys = _queries(p["y"], 1) if "y" in p else sol.x[:, None]
        vals = sol(ys[:, 0])
        bias = sol.bias_at(ys[:, 0])
        est = DensityEstimate(ys, vals, bias, np.zeros(1), 0, "oracle", t, x)
        method = "crank-nicolson"
    _density_csv(out / "density_oracle.csv", est)
    return {"method": method}


RUNNERS = {"validate": run_validate, "simulate": run_simulate, "estimate": run_estimate,
           "couple": run_couple, "holder": run_holder, "envelope": run_envelope,
           "oracle": run_oracle}


def output_dir(cfg: ExperimentConfig, base) -> Path:
    return Path(base) / f"{cfg.experiment}-{cfg.hash()[:12]}"


def execute(cfg: ExperimentConfig, base_dir) -> tuple[int, Path]:
    """Run one experiment and always write a manifest. Returns (exit code, output dir)."""
    out = output_dir(cfg, base_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    status, message, summary, code = "ok", None, {}, EXIT_OK
    try:
        field = cfg.build_field()
        summary = RUNNERS[cfg.experiment](cfg, field, RngStream(cfg.seed), out)
    except ConfigError as exc:
        status, message, code = "config-error", str(exc), EXIT_CONFIG
    except (ParabolicMCError, FloatingPointError, np.linalg.LinAlgError) as exc:
        status, message, code = "numerical-error", f"{type(exc).__name__}: {exc}", EXIT_NUMERIC
    manifest = {"config_hash": cfg.hash(), "seed": cfg.seed, "version": f"v{__version__}",
                "experiment": cfg.experiment, "workers": cfg.workers,
                "chunk_size": cfg.chunk_size, "wall_time": time.perf_counter() - started,
                "status": status, "summary": summary}
    if message:
        manifest["error"] = message
    write_json(out / "manifest.json", manifest)
    if message:
        print(f"{status}: {message}", file=sys.stderr)
    return code, out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parabolic-mc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", *EXPERIMENTS):
        sp = sub.add_parser(name, help="run the experiment named in the config" if name == "run"
                            else f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="TOML experiment file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--workers", type=int, help="override the worker count")
        sp.add_argument("--out-dir", help="base output directory (default: config output or 'out')")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command != "run" and args.command != cfg.experiment:
            raise ConfigError(f"experiment: config declares {cfg.experiment!r} "
                              f"but subcommand is {args.command!r}")
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed: expected an unsigned 64-bit integer")
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers: must be positive")
            cfg = dataclasses.replace(cfg, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base = args.out_dir or cfg.output or "out"
    code, out = execute(cfg, base)
    if code == EXIT_OK:
        print(str(out))
    else:
        print(f"see {out / 'manifest.json'}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
