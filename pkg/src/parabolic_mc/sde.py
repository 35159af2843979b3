"""Euler-Maruyama simulation of dX = sigma(t, X) dB with on-the-fly
accumulation of the Feynman-Kac/Girsanov log-weight

    log E(s, t) = sum <b_sigma, dB> - 1/2 sum |b_sigma|^2 h + sum c h,

all terms evaluated at the left end point of each step. Also simulates
pinned (bridge) diffusions for constant-coefficient fields.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Iterator, Sequence

import numpy as np

from .coefficients import CoefficientField, as_points
from .errors import (EllipticityError, UnsupportedFieldError, ValidationError,
                     WeightOverflowError)
from .rng import RngStream

DEFAULT_CHUNK = 65536


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > self.t_start or self.t_start < 0:
            raise ValidationError(f"need 0 <= t_start < t_end, got [{self.t_start}, {self.t_end}]")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValidationError(f"n_steps must be a positive integer, got {self.n_steps}")

    @classmethod
    def with_step(cls, t_start: float, t_end: float, h: float) -> "TimeGrid":
        """Grid whose step is the largest t/n not exceeding ``h``."""
        n = max(1, math.ceil((t_end - t_start) / h - 1e-9))
        return cls(t_start, t_end, n)

    @classmethod
    def default(cls, t_start: float, t_end: float, lam: float = 1.0) -> "TimeGrid":
        """lam * h <= 1e-3 * (t_end - t_start)."""
        return cls(t_start, t_end, max(1, math.ceil(1000 * lam)))

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.h * np.arange(self.n_steps + 1)

    def step_of(self, t: float) -> int:
        """Index of grid time ``t`` (must lie on the grid)."""
        k = (t - self.t_start) / self.h
        kr = int(round(k))
        if abs(k - kr) > 1e-8 or not 0 <= kr <= self.n_steps:
            raise ValidationError(f"time {t} is not a grid point of {self}")
        return kr


@dataclass
class Trajectory:
    grid: TimeGrid
    states: np.ndarray  # (n_steps + 1, d)
    brownian_increments: np.ndarray  # (n_steps, d)

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]


@dataclass
class TrajectoryBundle:
    """``n`` trajectories stored as arrays; indexing yields :class:`Trajectory`."""

    grid: TimeGrid
    states: np.ndarray  # (n, n_steps + 1, d)
    increments: np.ndarray  # (n, n_steps, d)

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(self.grid, self.states[i], self.increments[i])

    def __iter__(self) -> Iterator[Trajectory]:
        for i in range(len(self)):
            yield self[i]

    @property
    def endpoints(self) -> np.ndarray:
        return self.states[:, -1, :]


@dataclass
class WeightAccumulator:
    """The three pieces of log E; scalars for one path or arrays for many."""

    log_stoch: np.ndarray | float = 0.0
    log_quad: np.ndarray | float = 0.0
    log_pot: np.ndarray | float = 0.0

    @property
    def log_weight(self):
        return self.log_stoch + self.log_quad + self.log_pot

    @property
    def weight(self):
        return np.exp(self.log_weight)


@dataclass
class PathBatch:
    """Endpoint samples of a bulk run.

    ``endpoints`` has shape ``(n_paths, m, d)`` where ``m`` is the number of
    start points; ``log_*`` have shape ``(n_paths, m)``. With common random
    numbers, row ``i`` used the same Brownian increments for every start.
    ``checkpoints`` maps a step index to ``(states, log_weight)`` snapshots.
    """

    grid: TimeGrid
    starts: np.ndarray
    endpoints: np.ndarray
    log_stoch: np.ndarray
    log_quad: np.ndarray
    log_pot: np.ndarray
    checkpoints: dict = dc_field(default_factory=dict)

    @property
    def log_weight(self) -> np.ndarray:
        return self.log_stoch + self.log_quad + self.log_pot

    @property
    def n_paths(self) -> int:
        return self.endpoints.shape[0]


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


def _apply(sig: np.ndarray, v: np.ndarray) -> np.ndarray:
    if sig.shape[-1] == 1:
        return sig[:, :, 0] * v
    return np.einsum("nij,nj->ni", sig, v)


def _solve(sig: np.ndarray, v: np.ndarray) -> np.ndarray:
    if sig.shape[-1] == 1:
        return v / sig[:, :, 0]
    return np.linalg.solve(sig, v[..., None])[..., 0]


def _sigma_at(field: CoefficientField, t: float, x: np.ndarray, step: int, offset: int, m: int):
    try:
        return field.sigma(t, x)
    except EllipticityError as exc:
        a = np.asarray(field.a(t, x))
        w = a[:, 0, 0][:, None] if field.d == 1 else np.linalg.eigvalsh(a)
        bad = np.flatnonzero((w.min(axis=1) < field.bounds.lower * (1 - 1e-12))
                             | (w.max(axis=1) > field.bounds.upper * (1 + 1e-12)))
        row = int(bad[0]) if bad.size else 0
        loc = x[row].tolist()
        raise EllipticityError(
            f"ellipticity violated at step {step} (t={t:.6g}), x={loc}: {exc}",
            location=loc, step=step, path=offset + row // m) from None


def _simulate_chunk(field: CoefficientField, starts: np.ndarray, grid: TimeGrid, n: int,
                    stream: RngStream | None, crn: bool, weights: bool,
                    checkpoints: Sequence[int], record: bool, offset: int,
                    increments: np.ndarray | None = None):
    m, d = starts.shape
    rows = n * m
    x = np.repeat(starts[None, :, :], n, axis=0).reshape(rows, d)
    ls = np.zeros(rows)
    lq = np.zeros(rows)
    lp = np.zeros(rows)
    h = grid.h
    sqrt_h = math.sqrt(h)
    gen = stream.generator() if stream is not None else None
    use_b = weights and not field.has_zero_drift
    use_c = weights and not field.has_zero_potential
    snaps = {}
    cps = set(checkpoints)
    if 0 in cps:
        snaps[0] = (x.reshape(n, m, d).copy(), np.zeros((n, m)))
    if record:
        path_states = np.empty((rows, grid.n_steps + 1, d))
        path_states[:, 0] = x
        path_incr = np.empty((rows, grid.n_steps, d))
    times = grid.times
    for k in range(grid.n_steps):
        t = float(times[k])
        if increments is not None:
            db = np.asarray(increments[:, k, :], dtype=float)
            if m > 1:
                db = np.repeat(db, m, axis=0)
        elif crn:
            db = gen.standard_normal((n, d))
            db *= sqrt_h
            if m > 1:
                db = np.repeat(db, m, axis=0)
        else:
            db = gen.standard_normal((rows, d))
            db *= sqrt_h
        sig = _sigma_at(field, t, x, k, offset, m)
        if use_b:
            bs = _solve(sig, np.asarray(field.b(t, x), dtype=float))
            ls += np.einsum("ij,ij->i", bs, db)
            lq -= 0.5 * h * np.einsum("ij,ij->i", bs, bs)
        if use_c:
            with np.errstate(over="ignore", invalid="ignore"):  # caught by the finiteness check
                lp += h * np.asarray(field.c(t, x), dtype=float)
        if record:
            path_incr[:, k] = db
        x = x + _apply(sig, db)
        if record:
            path_states[:, k + 1] = x
        if k + 1 in cps:
            snaps[k + 1] = (x.reshape(n, m, d).copy(), (ls + lq + lp).reshape(n, m))
    if weights:
        bad = ~np.isfinite(ls + lq + lp)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise WeightOverflowError(
                f"non-finite log-weight on path {offset + row // m}; "
                "use a shorter horizon or rescale the coefficients", path=offset + row // m)
    out = {
        "endpoints": x.reshape(n, m, d),
        "log_stoch": ls.reshape(n, m),
        "log_quad": lq.reshape(n, m),
        "log_pot": lp.reshape(n, m),
        "snaps": snaps,
    }
    if record:
        out["states"] = path_states
        out["increments"] = path_incr
    return out


def _chunk_task(args):
    return _simulate_chunk(*args)


def run_paths(field: CoefficientField, starts, grid: TimeGrid, n_paths: int, rng: RngStream, *,
              crn: bool = True, weights: bool = True, checkpoints: Sequence[int] = (),
              chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> PathBatch:
    """Bulk simulation from one or several start points.

    Paths are split into chunks of ``chunk_size``; chunk ``k`` draws from
    ``rng.chunk(k)`` and results are concatenated in chunk order, so the
    output depends on (seed, chunk_size) but not on ``workers``.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    starts = np.asarray(starts, dtype=float)
    if starts.ndim == 1:
        starts = starts.reshape(1, -1) if field.d > 1 or starts.size == 1 else starts.reshape(-1, 1)
    if starts.shape[1] != field.d:
        raise ValidationError(f"start points must have dimension {field.d}")
    chunk_size = max(1, int(chunk_size))
    bounds = [(lo, min(lo + chunk_size, n_paths)) for lo in range(0, n_paths, chunk_size)]
    tasks = [(field, starts, grid, hi - lo, rng.chunk(k), crn, weights, tuple(checkpoints),
              False, lo) for k, (lo, hi) in enumerate(bounds)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_task, tasks))
    else:
        parts = [_chunk_task(tk) for tk in tasks]
    cat = {key: np.concatenate([p[key] for p in parts], axis=0)
           for key in ("endpoints", "log_stoch", "log_quad", "log_pot")}
    snaps = {}
    for step in checkpoints:
        snaps[step] = (np.concatenate([p["snaps"][step][0] for p in parts], axis=0),
                       np.concatenate([p["snaps"][step][1] for p in parts], axis=0))
    return PathBatch(grid, starts, cat["endpoints"], cat["log_stoch"], cat["log_quad"],
                     cat["log_pot"], snaps)


def simulate_paths(field: CoefficientField, x0, grid: TimeGrid, n_paths: int, rng: RngStream,
                   *, increments: np.ndarray | None = None,
                   chunk_size: int = DEFAULT_CHUNK) -> TrajectoryBundle:
    """Full trajectories with their Brownian increments.

    ``increments`` of shape ``(n_paths, n_steps, d)`` replaces the random
    draws (useful for deterministic checks).
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    pts, _ = as_points(x0, field.d)
    if pts.shape[0] != 1:
        raise ValidationError("simulate_paths takes a single start point")
    if increments is not None:
        increments = np.asarray(increments, dtype=float).reshape(n_paths, grid.n_steps, field.d)
    states, incs = [], []
    for k, lo in enumerate(range(0, n_paths, chunk_size)):
        hi = min(lo + chunk_size, n_paths)
        inc = increments[lo:hi] if increments is not None else None
        stream = rng.chunk(k) if rng is not None else None
        res = _simulate_chunk(field, pts, grid, hi - lo, stream, True, False, (), True,
                              lo, inc)
        states.append(res["states"])
        incs.append(res["increments"])
    return TrajectoryBundle(grid, np.concatenate(states), np.concatenate(incs))


# --------------------------------------------------------------------------
# weights on stored trajectories
# --------------------------------------------------------------------------


def step_log_weights(traj: Trajectory | TrajectoryBundle, field: CoefficientField):
    """Per-step contributions (stoch, quad, pot), each of shape (..., n_steps)."""
    states = np.asarray(traj.states)
    incs = np.asarray(traj.increments if isinstance(traj, TrajectoryBundle)
                      else traj.brownian_increments)
    single = states.ndim == 2
    if single:
        states, incs = states[None], incs[None]
    n, steps, d = incs.shape
    grid = traj.grid
    h = grid.h
    times = grid.times
    stoch = np.zeros((n, steps))
    quad = np.zeros((n, steps))
    pot = np.zeros((n, steps))
    for k in range(steps):
        x = states[:, k, :]
        t = float(times[k])
        sig = field.sigma(t, x)
        bs = _solve(sig, np.asarray(field.b(t, x), dtype=float))
        stoch[:, k] = np.einsum("ij,ij->i", bs, incs[:, k, :])
        quad[:, k] = -0.5 * h * np.einsum("ij,ij->i", bs, bs)
        pot[:, k] = h * np.asarray(field.c(t, x), dtype=float)
    if single:
        return stoch[0], quad[0], pot[0]
    return stoch, quad, pot


def accumulate_weight(traj: Trajectory | TrajectoryBundle,
                      field: CoefficientField) -> WeightAccumulator:
    """Left-point sums along a stored trajectory (arrays for a bundle)."""
    stoch, quad, pot = step_log_weights(traj, field)
    acc = WeightAccumulator(stoch.sum(axis=-1), quad.sum(axis=-1), pot.sum(axis=-1))
    if not np.all(np.isfinite(acc.log_weight)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(acc.log_weight)))
        raise WeightOverflowError(f"non-finite log-weight on path {int(bad[0])}",
                                  path=int(bad[0]))
    return acc


def weight_split(traj: Trajectory, field: CoefficientField, tau_step: int):
    """(log E(0, tau), log E(tau, t)) for the grid index ``tau_step``."""
    n_steps = traj.grid.n_steps
    if int(tau_step) != tau_step or not 0 <= tau_step <= n_steps:
        raise ValidationError(f"split index {tau_step} outside [0, {n_steps}]")
    stoch, quad, pot = step_log_weights(traj, field)
    per_step = stoch + quad + pot
    return float(per_step[:tau_step].sum()), float(per_step[tau_step:].sum())


# --------------------------------------------------------------------------
# aggregation and Feynman-Kac
# --------------------------------------------------------------------------


def weighted_mean(values: np.ndarray, log_w: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of values * exp(log_w), computed with a
    max shift so large log-weights do not overflow."""
    values = np.asarray(values, dtype=float).ravel()
    log_w = np.asarray(log_w, dtype=float).ravel()
    n = values.size
    if n == 0:
        raise ValidationError("empty sample")
    shift = float(log_w.max())
    if not math.isfinite(shift):
        raise WeightOverflowError("non-finite log-weight in sample")
    prod = values * np.exp(log_w - shift)
    mean = prod.mean()
    se = prod.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    scale = math.exp(shift)
    if not math.isfinite(scale * max(abs(mean), se)):
        raise WeightOverflowError("weighted mean overflows; use a smaller t or rescale c")
    return float(scale * mean), float(scale * se)


def feynman_kac_solve(field: CoefficientField, f: Callable[[np.ndarray], np.ndarray], x0,
                      t: float, grid: TimeGrid | None, n_paths: int, rng: RngStream, *,
                      chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> tuple[float, float]:
    """u(t, x0) = E[f(X_t) E(0, t)] as (estimate, standard error)."""
    grid = grid or TimeGrid.default(0.0, t, field.lam)
    if abs(grid.t_end - t) > 1e-12 * max(1.0, t) or grid.t_start != 0.0:
        raise ValidationError("grid must run from 0 to t")
    pts, _ = as_points(x0, field.d)
    batch = run_paths(field, pts, grid, n_paths, rng, chunk_size=chunk_size, workers=workers)
    ends = batch.endpoints[:, 0, :]
    vals = np.broadcast_to(np.asarray(f(ends), dtype=float), (ends.shape[0],))
    return weighted_mean(vals, batch.log_weight[:, 0])


# --------------------------------------------------------------------------
# bridges
# --------------------------------------------------------------------------


def pinned_drift(a0: np.ndarray, x: np.ndarray, y: np.ndarray, remaining: float) -> np.ndarray:
    """a grad_x log p^X(s, x; t, y) for the Gaussian kernel with covariance
    a0 * remaining; equals (y - x) / remaining."""
    grad_log = np.linalg.solve(a0, (y - x).T).T / remaining
    return grad_log @ a0.T


def simulate_bridge(field: CoefficientField, x, y, grid: TimeGrid, rng: RngStream,
                    n_paths: int = 1) -> TrajectoryBundle:
    """Euler scheme for the diffusion pinned at ``y`` at ``grid.t_end``.

    The final step is a deterministic move onto ``y``.
    """
    const = field.constant
    if const is None:
        raise UnsupportedFieldError(
            f"field {field.name!r} has no analytic kernel; bridges need constant coefficients")
    d = field.d
    x_pt = as_points(x, d)[0][0]
    y_pt = as_points(y, d)[0][0]
    sig = const.sigma0
    h = grid.h
    times = grid.times
    gen = rng.generator()
    states = np.empty((n_paths, grid.n_steps + 1, d))
    incs = np.empty((n_paths, grid.n_steps, d))
    cur = np.repeat(x_pt[None], n_paths, axis=0)
    states[:, 0] = cur
    for k in range(grid.n_steps):
        incs[:, k] = gen.standard_normal((n_paths, d)) * math.sqrt(h)
        if k == grid.n_steps - 1:
            cur = np.repeat(y_pt[None], n_paths, axis=0)
        else:
            remaining = grid.t_end - float(times[k])
            cur = cur + pinned_drift(const.a0, cur, y_pt, remaining) * h + incs[:, k] @ sig.T
        states[:, k + 1] = cur
    return TrajectoryBundle(grid, states, incs)
