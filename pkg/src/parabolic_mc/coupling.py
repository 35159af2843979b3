"""Reflection coupling of two driftless diffusions.

X is driven by dB and Z by H dB with H = I - 2 u u^T / |u|^2 and
u = sigma(t, Z)^{-1} (X - Z). When the pair meets, Z is glued to X.

On a time grid an exact meeting never happens, so a step k -> k+1 is
declared a meeting when any of the following holds:

* |X_{k+1} - Z_{k+1}| <= tol, with tol = tol_factor * sqrt(h * lam);
* the separation changed sign along the previous direction;
* the Brownian-bridge test: with r = |xi_k|, r' the new separation
  projected on xi_k / r, and v the one-step variance of |xi|, a uniform
  draw falls below exp(-2 r r' / v), the probability that a bridge
  between r and r' touched zero.

The last two tests remove the first-order bias of monitoring a
continuous hitting time only at grid points.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .coefficients import CoefficientField, as_points
from .errors import DegenerateDirectionError, ValidationError
from .rng import RngStream
from .sde import DEFAULT_CHUNK, TimeGrid, _apply, _sigma_at, _solve
from .estimator import Z95

DEFAULT_TOL_FACTOR = 0.01
DEGENERATE_U = 1e-12


def reflection_matrix(sigma_z, xi) -> np.ndarray:
    """H = I - 2 u u^T / |u|^2 with u = sigma_z^{-1} xi."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    sig = np.atleast_2d(np.asarray(sigma_z, dtype=float))
    if float(np.linalg.norm(xi)) < 1e-300:
        raise DegenerateDirectionError("separation is zero; declare coupling before reflecting")
    u = np.linalg.solve(sig, xi)
    return np.eye(xi.size) - 2.0 * np.outer(u, u) / float(u @ u)


def coupling_tolerance(field: CoefficientField, h: float, tol_factor: float = DEFAULT_TOL_FACTOR):
    return tol_factor * math.sqrt(h * field.lam)


@dataclass
class CoupledPair:
    """Recorded single pair. ``tau`` is ``inf`` when the pair has not met."""

    grid: TimeGrid
    x_states: np.ndarray  # (n_steps+1, d)
    z_states: np.ndarray
    tau: float
    coupled_step: int | None

    @property
    def coupled(self) -> bool:
        return self.coupled_step is not None

    @property
    def x_state(self) -> np.ndarray:
        return self.x_states[-1]

    @property
    def z_state(self) -> np.ndarray:
        return self.z_states[-1]


def _couple_chunk(field: CoefficientField, x, z, grid: TimeGrid, n: int, stream: RngStream | None,
                  tol: float, bridge: bool, record: bool = False, increments=None,
                  uniforms=None, offset: int = 0):
    """Coupling times of ``n`` independent pairs started at (x, z).

    Uncoupled pairs keep tau = inf. With ``record`` the full paths are
    returned and glued pairs keep evolving together. Supplied
    ``increments`` (n, n_steps, d) and ``uniforms`` (n, n_steps) replace
    the random draws; otherwise only still-active pairs consume draws.
    """
    d = field.d
    h = grid.h
    sqrt_h = math.sqrt(h)
    times = grid.times
    gen = stream.generator() if stream is not None else None
    full_draws = record or increments is not None
    tau = np.full(n, np.inf)
    step = np.full(n, -1, dtype=np.int64)
    xc = np.repeat(x[None, :], n, axis=0)  # all X (record) or active X
    zc = np.repeat(z[None, :], n, axis=0)
    active = np.arange(n)
    if record:
        xs = np.empty((n, grid.n_steps + 1, d))
        zs = np.empty((n, grid.n_steps + 1, d))
    if np.linalg.norm(x - z) <= tol:
        tau[:] = grid.t_start
        step[:] = 0
        zc = xc.copy()
        active = active[:0]
    if record:
        xs[:, 0], zs[:, 0] = xc, zc
    for k in range(grid.n_steps):
        if active.size == 0 and not record:
            break
        t = float(times[k])
        m = n if full_draws else active.size
        if increments is not None:
            db = np.asarray(increments[:, k, :], dtype=float)
        else:
            db = gen.standard_normal((m, d)) * sqrt_h
        unif = None
        if bridge:
            unif = np.asarray(uniforms[:, k], dtype=float) if uniforms is not None else gen.random(m)
        sel = active if full_draws else slice(None)
        xa = xc[active] if record else xc
        za = zc[active] if record else zc
        dba = db[sel]
        if record:
            glued = np.ones(n, dtype=bool)
            glued[active] = False
            if glued.any():
                sig_g = _sigma_at(field, t, xc[glued], k, offset, 1)
                xc[glued] = xc[glued] + _apply(sig_g, db[glued])
                zc[glued] = xc[glued]
        if active.size:
            sx = _sigma_at(field, t, xa, k, offset, 1)
            sz = _sigma_at(field, t, za, k, offset, 1)
            xi = xa - za
            u = _solve(sz, xi)
            un2 = np.einsum("ij,ij->i", u, u)
            degenerate = un2 < DEGENERATE_U ** 2
            safe = np.where(degenerate, 1.0, un2)
            hdb = dba - 2.0 * u * (np.einsum("ij,ij->i", u, dba) / safe)[:, None]
            xn = xa + _apply(sx, dba)
            zn = za + _apply(sz, hdb)
            xin = xn - zn
            hit = degenerate | (np.sqrt(np.einsum("ij,ij->i", xin, xin)) <= tol)
            r = np.sqrt(np.einsum("ij,ij->i", xi, xi))
            e = xi / np.where(r > 0, r, 1.0)[:, None]
            rn = np.einsum("ij,ij->i", xin, e)
            hit |= rn <= 0
            if bridge:
                # alpha^T e with alpha = sigma(X) - sigma(Z) H (H symmetric)
                ax = _apply(np.swapaxes(sx, 1, 2), e)
                az = _apply(np.swapaxes(sz, 1, 2), e)
                az = az - 2.0 * u * (np.einsum("ij,ij->i", u, az) / safe)[:, None]
                v = np.einsum("ij,ij->i", ax - az, ax - az) * h
                with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                    p = np.where(v > 0, np.exp(-2.0 * r * np.maximum(rn, 0.0) / v), 0.0)
                hit |= unif[sel] < p
            zn[hit] = xn[hit]  # gluing
            tau[active[hit]] = times[k + 1]
            step[active[hit]] = k + 1
            if record:
                xc[active] = xn
                zc[active] = zn
                active = active[~hit]
            else:
                keep = ~hit
                active = active[keep]
                xc, zc = xn[keep], zn[keep]
        if record:
            xs[:, k + 1], zs[:, k + 1] = xc, zc
    if record:
        return tau, step, xs, zs
    return tau, step


def simulate_coupled_pair(field: CoefficientField, x, z, grid: TimeGrid, rng: RngStream | None,
                          *, tol_factor: float = DEFAULT_TOL_FACTOR, bridge_correction: bool = True,
                          increments=None, uniforms=None) -> CoupledPair:
    """One recorded coupled pair.

    ``increments`` (n_steps, d) and ``uniforms`` (n_steps,) may be supplied
    to replay a given noise sequence; otherwise they are drawn from ``rng``.
    """
    xp = as_points(x, field.d)[0][0]
    zp = as_points(z, field.d)[0][0]
    tol = coupling_tolerance(field, grid.h, tol_factor)
    incr = None if increments is None else np.asarray(increments, dtype=float).reshape(
        1, grid.n_steps, field.d)
    unif = None if uniforms is None else np.asarray(uniforms, dtype=float).reshape(1, grid.n_steps)
    if incr is not None and bridge_correction and unif is None:
        raise ValidationError("supply uniforms together with increments when replaying noise")
    tau, step, xs, zs = _couple_chunk(field, xp, zp, grid, 1, rng, tol, bridge_correction,
                                      record=True, increments=incr, uniforms=unif)
    k = int(step[0])
    return CoupledPair(grid, xs[0], zs[0], float(tau[0]), k if k >= 0 else None)


def _couple_task(args):
    return _couple_chunk(*args)


def coupling_times(field: CoefficientField, x, z, grid: TimeGrid, n_pairs: int, rng: RngStream, *,
                   tol_factor: float = DEFAULT_TOL_FACTOR, bridge_correction: bool = True,
                   chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> np.ndarray:
    """Coupling times of ``n_pairs`` pairs (inf where the pair has not met by grid end)."""
    if n_pairs < 1:
        raise ValidationError("n_pairs must be at least 1")
    xp = as_points(x, field.d)[0][0]
    zp = as_points(z, field.d)[0][0]
    tol = coupling_tolerance(field, grid.h, tol_factor)
    sizes = [min(chunk_size, n_pairs - s) for s in range(0, n_pairs, chunk_size)]
    tasks = [(field, xp, zp, grid, m, rng.chunk(k), tol, bridge_correction, False, None, None,
              k * chunk_size) for k, m in enumerate(sizes)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_couple_task, tasks))
    else:
        parts = [_couple_task(a) for a in tasks]
    return np.concatenate([p[0] for p in parts])


@dataclass
class CouplingStats:
    delta: float
    t: float
    e_t_tau: float
    stderr: float
    n_pairs: int
    survival_s: np.ndarray
    survival: np.ndarray
    survival_stderr: np.ndarray
    taus: np.ndarray

    def survival_rows(self):
        return [[float(s), float(p), float(e)]
                for s, p, e in zip(self.survival_s, self.survival, self.survival_stderr)]

    def table_row(self):
        return [self.delta, self.t, self.e_t_tau, self.stderr, self.n_pairs]


def coupling_time_stats(field: CoefficientField, x, z, t: float, n_pairs: int,
                        grid: TimeGrid | None, rng: RngStream, *, survival_times=None,
                        tol_factor: float = DEFAULT_TOL_FACTOR, bridge_correction: bool = True,
                        chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> CouplingStats:
    """E[t ^ tau] and the survival curve P(tau > s) with binomial errors."""
    grid = grid or TimeGrid.default(0.0, t, field.lam)
    if abs(grid.t_end - t) > 1e-12 * max(1.0, t):
        raise ValidationError("grid must end at t")
    xp = as_points(x, field.d)[0][0]
    zp = as_points(z, field.d)[0][0]
    taus = coupling_times(field, xp, zp, grid, n_pairs, rng, tol_factor=tol_factor,
                          bridge_correction=bridge_correction, chunk_size=chunk_size,
                          workers=workers)
    capped = np.minimum(taus, t)
    mean = float(capped.mean())
    se = float(capped.std(ddof=1) / math.sqrt(n_pairs)) if n_pairs > 1 else 0.0
    if survival_times is None:
        survival_times = np.linspace(0.0, t, 201)[1:]
    s = np.asarray(survival_times, dtype=float)
    srt = np.sort(taus)
    surv = 1.0 - np.searchsorted(srt, s, side="right") / n_pairs
    surv_se = np.sqrt(surv * (1 - surv) / n_pairs)
    return CouplingStats(float(np.linalg.norm(xp - zp)), float(t), mean, se, n_pairs, s, surv,
                         surv_se, taus)


def ks_distance_to_survival(taus, t: float, survival, grid_step: float | None = None) -> float:
    """Kolmogorov-Smirnov distance between the law of tau ^ t and 1 - survival(s) on [0, t).

    With ``grid_step`` the coupling times are known to live on that grid and
    the model is the law of the continuous time rounded up to the grid, so
    both distribution functions are compared at grid points only.
    """
    x = np.sort(np.asarray(taus, dtype=float))
    n = x.size
    if grid_step is not None:
        s = grid_step * np.arange(1, int(round(t / grid_step)))
        s = s[s < t]
        emp = np.searchsorted(x, s * (1 + 1e-12), side="right") / n
        model = 1.0 - np.asarray(survival(s), dtype=float)
        return float(np.max(np.abs(emp - model))) if s.size else 0.0
    below = x[x < t]
    if below.size == 0:
        return float(abs(1.0 - survival(t)))
    vals, first = np.unique(below, return_index=True)
    counts_after = np.append(first[1:], below.size)
    cdf_model = 1.0 - np.asarray(survival(vals), dtype=float)
    d_hi = np.abs(counts_after / n - cdf_model)
    d_lo = np.abs(first / n - cdf_model)
    d_end = abs(below.size / n - (1.0 - float(survival(t))))
    return float(max(d_hi.max(), d_lo.max(), d_end))


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    table: list  # CouplingStats per delta

    def rows(self):
        return [s.table_row() for s in self.table]


def estimate_coupling_exponent(field: CoefficientField, x0, deltas: Sequence[float], t: float,
                               n_pairs: int, grid: TimeGrid | None, rng: RngStream, *,
                               direction=None, tol_factor: float = DEFAULT_TOL_FACTOR,
                               bridge_correction: bool = True, chunk_size: int = DEFAULT_CHUNK,
                               workers: int = 1) -> ExponentFit:
    """Weighted least-squares slope of log E[t ^ tau] against log delta."""
    deltas = np.asarray(sorted(deltas), dtype=float)
    if deltas.size < 3:
        raise ValidationError("need at least 3 separations for the exponent fit")
    if np.any(deltas <= 0):
        raise ValidationError("separations must be positive")
    d = field.d
    x0p = as_points(x0, d)[0][0]
    u = np.zeros(d) if direction is None else np.asarray(direction, dtype=float).reshape(d)
    if direction is None:
        u[0] = 1.0
    u = u / np.linalg.norm(u)
    table = []
    for j, delta in enumerate(deltas):
        table.append(coupling_time_stats(field, x0p, x0p + delta * u, t, n_pairs, grid,
                                         rng.substream(j), tol_factor=tol_factor,
                                         bridge_correction=bridge_correction,
                                         chunk_size=chunk_size, workers=workers))
    means = np.array([s.e_t_tau for s in table])
    ses = np.array([s.stderr for s in table])
    if np.any(means <= 0):
        raise ValidationError("E[t ^ tau] is zero at some separation; cannot take logs")
    xs = np.log(deltas)
    ys = np.log(means)
    sl = np.maximum(ses / means, 1e-15)
    w = 1.0 / sl ** 2
    design = np.column_stack([np.ones_like(xs), xs])
    cov = np.linalg.inv(design.T @ (design * w[:, None]))
    coef = cov @ design.T @ (w * ys)
    slope_se = math.sqrt(cov[1, 1])
    return ExponentFit(float(coef[1]), float(coef[0]), float(coef[1] - Z95 * slope_se),
                       float(coef[1] + Z95 * slope_se), table)
