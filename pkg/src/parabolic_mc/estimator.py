"""Monte Carlo estimators built on weighted endpoint samples.

p(0, x; t, y) is estimated by the weighted kernel density
(1/n) sum_i E_i K_h(X_t^i - y), which tends to p^X(0,x;t,y) E^{X_t=y}[E]
as the bandwidth shrinks. The module also fits two-sided Gaussian
envelopes, regresses the Hoelder exponent in the initial point using
common random numbers, and runs Chapman-Kolmogorov and moment checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .coefficients import CoefficientField, as_points
from .errors import (InfeasibleFitError, InsufficientSampleError, UnderpoweredError,
                     ValidationError)
from .rng import RngStream
from .sde import DEFAULT_CHUNK, TimeGrid, run_paths

Z95 = 1.959963984540054


@dataclass
class DensityEstimate:
    queries: np.ndarray  # (q, d)
    values: np.ndarray
    stderrs: np.ndarray
    bandwidth: np.ndarray  # per dimension
    n_paths: int
    kind: str  # "unweighted" | "weighted" | "oracle"
    t: float | None = None
    x0: np.ndarray | None = None

    def rows(self):
        h = float(np.max(self.bandwidth)) if np.size(self.bandwidth) else 0.0
        for q, v, s in zip(self.queries, self.values, self.stderrs):
            yield [*q.tolist(), float(v), float(s), self.n_paths, h]

    def header(self):
        d = self.queries.shape[1]
        ys = ["y"] if d == 1 else [f"y{i + 1}" for i in range(d)]
        return [*ys, "value", "stderr", "n", "bandwidth"]


def bandwidth_rule(endpoints: np.ndarray) -> np.ndarray:
    """Per-dimension 1.06 * sd * n^(-1/(d+4))."""
    pts = np.asarray(endpoints, dtype=float)
    n, d = pts.shape
    sd = pts.std(axis=0, ddof=1) if n > 1 else np.ones(d)
    sd = np.where(sd > 0, sd, 1.0)
    return 1.06 * sd * n ** (-1.0 / (d + 4))


def _bandwidth(bandwidth, endpoints, d):
    if bandwidth is None:
        return bandwidth_rule(endpoints)
    bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,)).copy()
    if np.any(bw <= 0):
        raise ValidationError("bandwidth must be positive")
    return bw


def kernel_values(endpoints: np.ndarray, y: np.ndarray, bw: np.ndarray) -> np.ndarray:
    """Product Gaussian kernel K_h(X_i - y) for every sample."""
    z = (endpoints - y) / bw
    norm = (2 * math.pi) ** (-len(bw) / 2) / float(np.prod(bw))
    return norm * np.exp(-0.5 * np.einsum("ij,ij->i", z, z))


def _weighted_kde(endpoints, log_w, queries, bw):
    n = endpoints.shape[0]
    if n == 0:
        raise ValidationError("empty sample")
    if log_w is None:
        scale, w = 1.0, None
    else:
        shift = float(np.max(log_w))
        scale, w = math.exp(shift), np.exp(log_w - shift)
    vals = np.empty(len(queries))
    ses = np.empty(len(queries))
    for k, y in enumerate(queries):
        kv = kernel_values(endpoints, y, bw)
        if w is not None:
            kv = kv * w
        vals[k] = scale * kv.mean()
        ses[k] = scale * kv.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return vals, ses


def estimate_px_density(endpoints, queries, bandwidth=None) -> DensityEstimate:
    """Unweighted Gaussian-kernel density of the endpoints (estimates p^X)."""
    pts = np.asarray(endpoints, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise ValidationError("empty sample")
    d = pts.shape[1]
    qs, _ = as_points(queries, d)
    bw = _bandwidth(bandwidth, pts, d)
    vals, ses = _weighted_kde(pts, None, qs, bw)
    return DensityEstimate(qs, vals, ses, bw, pts.shape[0], "unweighted")


def weighted_density(endpoints, log_weights, queries, bandwidth=None) -> DensityEstimate:
    pts = np.asarray(endpoints, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    d = pts.shape[1]
    qs, _ = as_points(queries, d)
    bw = _bandwidth(bandwidth, pts, d)
    vals, ses = _weighted_kde(pts, np.asarray(log_weights, dtype=float), qs, bw)
    return DensityEstimate(qs, vals, ses, bw, pts.shape[0], "weighted")


def estimate_fundamental(field: CoefficientField, x, t: float, queries, n_paths: int,
                         grid: TimeGrid | None, rng: RngStream, bandwidth=None, *,
                         chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> DensityEstimate:
    """p(0, x; t, y) at each query y from weighted endpoints."""
    grid = grid or TimeGrid.default(0.0, t, field.lam)
    if abs(grid.t_end - t) > 1e-12 * max(1.0, t):
        raise ValidationError("grid must end at t")
    start, _ = as_points(x, field.d)
    batch = run_paths(field, start, grid, n_paths, rng, chunk_size=chunk_size, workers=workers)
    est = weighted_density(batch.endpoints[:, 0, :], batch.log_weight[:, 0], queries, bandwidth)
    est.t = t
    est.x0 = start[0]
    return est


def pinned_expectation(endpoints, log_weights, y, bandwidth) -> tuple[float, float]:
    """Kernel ratio estimate of E[E(0,t) | X_t = y] with a delta-method error."""
    pts = np.asarray(endpoints, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    d = pts.shape[1]
    yq = as_points(y, d)[0][0]
    bw = _bandwidth(bandwidth, pts, d)
    lw = np.asarray(log_weights, dtype=float).ravel()
    kv = kernel_values(pts, yq, bw)
    den = kv.sum()
    if den <= 0:
        raise InsufficientSampleError(f"no samples near y={yq.tolist()}")
    ess = den ** 2 / float(np.sum(kv ** 2))
    if ess < 10:
        raise InsufficientSampleError(
            f"only {ess:.1f} effective samples near y={yq.tolist()}; need 10")
    shift = float(lw.max())
    w = np.exp(lw - shift)
    num = float(np.sum(w * kv))
    ratio = num / den
    n = pts.shape[0]
    resid = kv * (w - ratio)
    se = math.sqrt(float(np.mean(resid ** 2)) / n) / (den / n)
    scale = math.exp(shift)
    return scale * ratio, scale * se


def kde_bias_budget(bandwidth, hessian_diag) -> np.ndarray:
    """Leading smoothing bias 1/2 sum_i h_i^2 |d^2 p / dy_i^2|."""
    bw = np.atleast_1d(np.asarray(bandwidth, dtype=float))
    hd = np.atleast_2d(np.asarray(hessian_diag, dtype=float))
    if hd.shape[1] != bw.size:
        hd = hd.reshape(-1, bw.size)
    return 0.5 * np.abs(hd * bw ** 2).sum(axis=1)


def kde_expectation(nodes, density, queries, bandwidth) -> np.ndarray:
    """Mean of a 1-D Gaussian-kernel estimate when the true density is the
    tabulated ``density`` on ``nodes``: (p * K_h)(y) by the trapezoid rule."""
    z = np.asarray(nodes, dtype=float).ravel()
    p = np.asarray(density, dtype=float).ravel()
    y = np.asarray(queries, dtype=float).ravel()
    bw = float(np.atleast_1d(bandwidth)[0])
    k = np.exp(-0.5 * ((y[:, None] - z[None, :]) / bw) ** 2) / (math.sqrt(2 * math.pi) * bw)
    return integrate.trapezoid(k * p[None, :], z, axis=1)


def histogram_density(endpoints, log_weights=None, bin_width: float = 0.1,
                      lo: float | None = None, hi: float | None = None):
    """1-D weighted histogram: (centres, values, stderrs)."""
    x = np.asarray(endpoints, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise ValidationError("empty sample")
    w = np.ones(n) if log_weights is None else np.exp(np.asarray(log_weights, dtype=float).ravel())
    lo = float(x.min()) if lo is None else lo
    hi = float(x.max()) if hi is None else hi
    nb = max(1, int(math.ceil((hi - lo) / bin_width)))
    edges = lo + bin_width * np.arange(nb + 1)
    idx = np.floor((x - lo) / bin_width).astype(np.int64)
    inside = (idx >= 0) & (idx < nb)
    s1 = np.bincount(idx[inside], weights=w[inside], minlength=nb)
    s2 = np.bincount(idx[inside], weights=w[inside] ** 2, minlength=nb)
    mean = s1 / n
    var = np.maximum(s2 / n - mean ** 2, 0.0)
    centres = 0.5 * (edges[:-1] + edges[1:])
    return centres, mean / bin_width, np.sqrt(var / n) / bin_width


# --------------------------------------------------------------------------
# Gaussian envelopes
# --------------------------------------------------------------------------


@dataclass
class GaussianEnvelope:
    """lower(t, r) = c_lower e^{-rate_lower t} t^{-d/2} exp(-gamma_lower r^2 / t);
    upper(t, r) = c_upper e^{+rate_upper t} t^{-d/2} exp(-gamma_upper r^2 / t)."""

    c_lower: float
    gamma_lower: float
    c_upper: float
    gamma_upper: float
    rate_lower: float = 0.0
    rate_upper: float = 0.0
    d: int = 1
    max_violation_sigma: float = 0.0

    def lower(self, t, r):
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        return (self.c_lower * np.exp(-self.rate_lower * t) * t ** (-self.d / 2)
                * np.exp(-self.gamma_lower * r ** 2 / t))

    def upper(self, t, r):
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        return (self.c_upper * np.exp(self.rate_upper * t) * t ** (-self.d / 2)
                * np.exp(-self.gamma_upper * r ** 2 / t))

    def to_dict(self) -> dict:
        return {"c_lower": self.c_lower, "gamma_lower": self.gamma_lower,
                "rate_lower": self.rate_lower, "c_upper": self.c_upper,
                "gamma_upper": self.gamma_upper, "rate_upper": self.rate_upper,
                "max_violation_sigma": self.max_violation_sigma}


@dataclass
class EnvelopeCompliance:
    n_points: int
    n_violations: int
    max_violation_sigma: float
    passed: bool
    violations: list = dc_field(default_factory=list)


def _sig3(v: float, direction: str) -> float:
    """Round to 3 significant digits, outward in ``direction``."""
    if v <= 0 or not math.isfinite(v):
        return v
    e = math.floor(math.log10(v)) - 2
    q = v / 10 ** e
    q = math.ceil(q - 1e-9) if direction == "up" else math.floor(q + 1e-9)
    return q * 10 ** e


def _flatten_grid(estimates: Sequence[DensityEstimate]):
    ts, rs, ps, ses = [], [], [], []
    for est in estimates:
        if est.t is None or est.x0 is None:
            raise ValidationError("envelope fitting needs estimates tagged with t and x0")
        r = np.linalg.norm(est.queries - est.x0, axis=1)
        ts.append(np.full(r.size, est.t))
        rs.append(r)
        ps.append(np.asarray(est.values, dtype=float))
        ses.append(np.asarray(est.stderrs, dtype=float))
    return map(np.concatenate, (ts, rs, ps, ses))


def _best_side(logq, t, r2t, side, gammas, rates):
    """Grid search over (gamma, rate); for each pair the tightest C is closed-form.

    ``logq = log p + (d/2) log t``; the envelope in log form is
    log C -/+ rate t - gamma r^2/t.
    """
    g = gammas[:, None, None]
    k = rates[None, :, None]
    if side == "upper":
        shifted = logq[None, None, :] + g * r2t[None, None, :] - k * t[None, None, :]
        log_c = shifted.max(axis=2)
        gap = (log_c[:, :, None] - shifted).mean(axis=2)
    else:
        shifted = logq[None, None, :] + g * r2t[None, None, :] + k * t[None, None, :]
        log_c = shifted.min(axis=2)
        gap = (shifted - log_c[:, :, None]).mean(axis=2)
    i, j = np.unravel_index(np.argmin(gap), gap.shape)
    return gammas[i], rates[j], gap[i, j]


def _search(logq, t, r2t, side):
    gammas = np.geomspace(1e-3, 1e2, 241)
    rates = np.concatenate([[0.0], np.geomspace(1e-3, 10.0, 81)])
    gam, rate, _ = _best_side(logq, t, r2t, side, gammas, rates)
    # refine on 3-significant-digit values
    for _ in range(2):
        e = math.floor(math.log10(gam)) - 2
        gammas = np.unique(np.round(np.arange(gam * 0.9, gam * 1.1, 10.0 ** e) / 10.0 ** e)
                           * 10.0 ** e)
        gammas = gammas[gammas > 0]
        if rate > 0:
            er = math.floor(math.log10(rate)) - 2
            rates = np.unique(np.concatenate([[0.0], np.round(
                np.arange(rate * 0.9, rate * 1.1, 10.0 ** er) / 10.0 ** er) * 10.0 ** er]))
        else:
            rates = np.array([0.0])
        gam, rate, _ = _best_side(logq, t, r2t, side, gammas, rates)
    return float(gam), float(rate)


def fit_gaussian_envelope(estimates: Sequence[DensityEstimate], d: int,
                          n_sigma: float = 3.0) -> tuple[GaussianEnvelope, EnvelopeCompliance]:
    """Tightest two-sided Gaussian envelope (in mean log-gap) through the
    estimated densities, then compliance of every point within ``n_sigma``
    standard errors."""
    t, r, p, se = _flatten_grid(estimates)
    if np.unique(t).size < 2:
        raise ValidationError("envelope grid must span at least two t values")
    pos = p > 0
    if pos.sum() < max(2, 0.5 * p.size):
        raise InfeasibleFitError(
            f"{(~pos).sum()} of {p.size} densities are non-positive; cannot fit an envelope")
    tp, rp, pp = t[pos], r[pos], p[pos]
    logq = np.log(pp) + 0.5 * d * np.log(tp)
    r2t = rp ** 2 / tp
    out = {}
    for side in ("lower", "upper"):
        gam, rate = _search(logq, tp, r2t, side)
        if side == "upper":
            log_c = float(np.max(logq + gam * r2t - rate * tp))
            c = _sig3(math.exp(log_c), "up")
        else:
            log_c = float(np.min(logq + gam * r2t + rate * tp))
            c = _sig3(math.exp(log_c), "down")
        out[side] = (c, gam, rate)
    env = GaussianEnvelope(out["lower"][0], out["lower"][1], out["upper"][0], out["upper"][1],
                           out["lower"][2], out["upper"][2], d)
    lo = env.lower(t, r)
    hi = env.upper(t, r)
    safe = np.where(se > 0, se, np.inf)
    over = np.maximum((p - hi) / safe, 0.0)
    under = np.maximum((lo - p) / safe, 0.0)
    # zero stderr and a real violation counts as infinitely many sigmas
    over = np.where((se == 0) & (p > hi * (1 + 1e-12)), np.inf, over)
    under = np.where((se == 0) & (lo > p * (1 + 1e-12) + 1e-300), np.inf, under)
    viol = np.maximum(over, under)
    env.max_violation_sigma = float(viol.max()) if viol.size else 0.0
    bad = np.flatnonzero(viol > n_sigma)
    report = EnvelopeCompliance(
        int(p.size), int(bad.size), env.max_violation_sigma, bool(bad.size == 0),
        [{"t": float(t[i]), "r": float(r[i]), "value": float(p[i]), "stderr": float(se[i]),
          "lower": float(lo[i]), "upper": float(hi[i])} for i in bad])
    return env, report


# --------------------------------------------------------------------------
# Hoelder exponent
# --------------------------------------------------------------------------


@dataclass
class HolderReport:
    x0: np.ndarray
    direction: np.ndarray
    separations: np.ndarray
    differences: np.ndarray
    stderrs: np.ndarray
    exponent: float
    intercept: float
    ci_low: float
    ci_high: float
    epsilon_margin: float
    powered: bool
    bandwidth: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"x0": np.asarray(self.x0).tolist(), "direction": np.asarray(self.direction).tolist(),
                "deltas": self.separations.tolist(), "diffs": self.differences.tolist(),
                "stderrs": self.stderrs.tolist(), "exponent": self.exponent,
                "intercept": self.intercept, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "epsilon_margin": self.epsilon_margin, "powered": self.powered}


def probe_differences(field: CoefficientField, base, probes, t: float, y, n_paths: int,
                      grid: TimeGrid | None, rng: RngStream, bandwidth=None, *,
                      chunk_size: int = DEFAULT_CHUNK, workers: int = 1):
    """p(0, base; t, y) - p(0, probe_k; t, y) for every probe, sharing the
    Brownian increments across all start points.

    Returns (differences, covariance matrix of the differences, bandwidth).
    """
    d = field.d
    base_pt = as_points(base, d)[0]
    probe_pts = np.asarray(probes, dtype=float).reshape(-1, d)
    starts = np.vstack([base_pt, probe_pts])
    grid = grid or TimeGrid.default(0.0, t, field.lam)
    batch = run_paths(field, starts, grid, n_paths, rng, crn=True, chunk_size=chunk_size,
                      workers=workers)
    yq = as_points(y, d)[0][0]
    bw = _bandwidth(bandwidth, batch.endpoints[:, 0, :], d)
    lw = batch.log_weight
    shift = float(lw.max())
    contrib = np.empty((n_paths, starts.shape[0]))
    for j in range(starts.shape[0]):
        contrib[:, j] = kernel_values(batch.endpoints[:, j, :], yq, bw) * np.exp(lw[:, j] - shift)
    per_path = contrib[:, :1] - contrib[:, 1:]
    scale = math.exp(shift)
    diffs = scale * per_path.mean(axis=0)
    cov = scale ** 2 * np.atleast_2d(np.cov(per_path, rowvar=False)) / n_paths
    return diffs, cov, bw


def estimate_holder_exponent(field: CoefficientField, x0, direction, deltas: Sequence[float],
                             t: float, y, n_paths: int, grid: TimeGrid | None, rng: RngStream,
                             bandwidth=None, *, chunk_size: int = DEFAULT_CHUNK,
                             workers: int = 1) -> HolderReport:
    """Slope of log |p(0,x0;t,y) - p(0,x0+delta*dir;t,y)| against log delta."""
    d = field.d
    deltas = np.asarray(sorted(deltas), dtype=float)
    if deltas.size < 2 or np.any(deltas <= 0):
        raise ValidationError("need at least two positive separations")
    x0p = as_points(x0, d)[0][0]
    u = np.broadcast_to(np.asarray(direction, dtype=float), (d,))
    norm = float(np.linalg.norm(u))
    if norm == 0:
        raise ValidationError("direction must be nonzero")
    u = u / norm
    probes = x0p[None, :] + deltas[:, None] * u[None, :]
    diffs, cov, bw = probe_differences(field, x0p, probes, t, y, n_paths, grid, rng, bandwidth,
                                       chunk_size=chunk_size, workers=workers)
    se = np.sqrt(np.diag(cov))
    mag = np.abs(diffs)
    significant = mag > 2 * se
    if not significant.any():
        worst = float(np.max(3 * se / np.maximum(mag, 1e-300)))
        rec = int(min(n_paths * worst ** 2, n_paths * 1e4))
        raise UnderpoweredError(
            f"differences are indistinguishable from zero at every separation; "
            f"try n_paths >= {rec}", recommended_n_paths=rec)
    xs = np.log(deltas)
    ys = np.log(np.maximum(mag, 1e-300))
    design = np.column_stack([np.ones_like(xs), xs])
    xtx_inv = np.linalg.inv(design.T @ design)
    coef = xtx_inv @ design.T @ ys
    jac = np.diag(1.0 / np.maximum(mag, 1e-300))
    cov_log = jac @ cov @ jac
    cov_coef = xtx_inv @ design.T @ cov_log @ design @ xtx_inv
    slope_se = math.sqrt(max(cov_coef[1, 1], 0.0))
    slope = float(coef[1])
    return HolderReport(x0p, u, deltas, diffs, se, slope, float(coef[0]),
                        slope - Z95 * slope_se, slope + Z95 * slope_se,
                        max(0.0, 1.0 - slope), bool(np.all(se < 0.5 * mag)), bw)


# --------------------------------------------------------------------------
# Chapman-Kolmogorov and moment checks
# --------------------------------------------------------------------------


@dataclass
class ChapmanKolmogorovResult:
    queries: np.ndarray
    direct: np.ndarray
    direct_se: np.ndarray
    composed: np.ndarray
    composed_se: np.ndarray
    residual_sigma: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(self.residual_sigma.max())


def chapman_kolmogorov_check(field: CoefficientField, x, s: float, t: float, queries,
                             n_paths: int, grid: TimeGrid | float | None, rng: RngStream, *,
                             bandwidth=None, n_inner: int | None = None, n_nodes: int = 61,
                             chunk_size: int = DEFAULT_CHUNK,
                             workers: int = 1) -> ChapmanKolmogorovResult:
    """Compare p(0,x;t,y) with the composition int p(0,x;s,xi) p(s,xi;t,y) dxi (d = 1).

    The composition is E[E(0,s) g_y(X_s)] where g_y is a cubic spline through
    second-leg estimates p(s, xi_j; t, y) on a node grid covering the
    first-leg endpoints. ``grid`` is a step size (or a TimeGrid whose step is
    reused). The composed variance combines the first-leg sample variance
    and the independent node errors; residuals are in units of the combined
    standard error.
    """
    if not 0 < s < t:
        raise ValidationError("need 0 < s < t")
    if field.d != 1:
        raise ValidationError("Chapman-Kolmogorov check is implemented for d = 1")
    if isinstance(grid, TimeGrid):
        h = grid.h
    elif grid is None:
        h = 1e-3 * t / field.lam
    else:
        h = float(grid)
    qs, _ = as_points(queries, 1)
    start, _ = as_points(x, 1)
    n_inner = n_inner or max(1000, n_paths // 10)

    direct_batch = run_paths(field, start, TimeGrid.with_step(0.0, t, h), n_paths,
                             rng.substream(0), chunk_size=chunk_size, workers=workers)
    ends = direct_batch.endpoints[:, 0, :]
    bw_y = _bandwidth(bandwidth, ends, 1)
    direct = weighted_density(ends, direct_batch.log_weight[:, 0], qs, bw_y)

    first = run_paths(field, start, TimeGrid.with_step(0.0, s, h), n_paths, rng.substream(1),
                      chunk_size=chunk_size, workers=workers)
    mid = first.endpoints[:, 0, :]
    lw1 = first.log_weight[:, 0]
    lo, hi = float(mid.min()), float(mid.max())
    pad = 0.05 * (hi - lo)
    nodes = np.linspace(lo - pad, hi + pad, n_nodes)

    second = run_paths(field.shifted(s), nodes[:, None], TimeGrid.with_step(0.0, t - s, h),
                       n_inner, rng.substream(2), crn=False, chunk_size=chunk_size,
                       workers=workers)
    p2 = np.empty((n_nodes, len(qs)))
    p2_se = np.empty((n_nodes, len(qs)))
    for j in range(n_nodes):
        est = weighted_density(second.endpoints[:, j, :], second.log_weight[:, j], qs, bw_y)
        p2[j], p2_se[j] = est.values, est.stderrs

    # cardinal spline basis: row i holds the weights of node values at X_s^i
    basis = CubicSpline(nodes, np.eye(n_nodes))(mid[:, 0])
    shift = float(lw1.max())
    w1 = np.exp(lw1 - shift)
    scale = math.exp(shift)
    n = mid.shape[0]
    coef = scale * (w1 @ basis) / n
    composed = coef @ p2
    composed_var = np.empty(len(qs))
    for k in range(len(qs)):
        g = w1 * (basis @ p2[:, k])
        composed_var[k] = scale ** 2 * g.var(ddof=1) / n + float(np.sum((coef * p2_se[:, k]) ** 2))
    composed_se = np.sqrt(composed_var)
    resid = np.abs(direct.values - composed) / np.sqrt(direct.stderrs ** 2 + composed_var)
    return ChapmanKolmogorovResult(qs, direct.values, direct.stderrs, composed, composed_se, resid)


@dataclass
class MomentBoundResult:
    c_hat: float
    rows: list  # dicts with q, t, log_moment, stderr, bound, residual

    def is_feasible(self, c: float, n_sigma: float = 2.0) -> bool:
        return all(r["log_moment"] <= c * (1 + r["q"] ** 2) * r["t"] + n_sigma * r["stderr"] + 1e-12
                   for r in self.rows)


def log_moment(log_w: np.ndarray, q: float) -> tuple[float, float]:
    """log of the sample mean of exp(q log_w) and its delta-method error."""
    v = q * np.asarray(log_w, dtype=float)
    shift = float(v.max())
    e = np.exp(v - shift)
    m = e.mean()
    n = e.size
    se = e.std(ddof=1) / math.sqrt(n) / m if n > 1 else 0.0
    return shift + math.log(m), float(se)


def moment_bound_check(field: CoefficientField, q_list: Sequence[float], t_list: Sequence[float],
                       n_paths: int, grid: TimeGrid | float | None, rng: RngStream, *,
                       n_sigma: float = 2.0, chunk_size: int = DEFAULT_CHUNK,
                       workers: int = 1) -> MomentBoundResult:
    """Smallest C >= 0 with log E[E^q] <= C (1 + q^2) t + n_sigma * stderr on the grid."""
    if any(abs(q) > 4 for q in q_list):
        raise ValidationError("q values must lie in [-4, 4]")
    if not t_list or min(t_list) <= 0:
        raise ValidationError("t values must be positive")
    t_max = max(t_list)
    if isinstance(grid, TimeGrid):
        g = grid
    else:
        h = float(grid) if grid is not None else 1e-3 * min(t_list) / field.lam
        g = TimeGrid.with_step(0.0, t_max, h)
    steps = [g.step_of(t) for t in t_list]
    start = np.zeros((1, field.d))
    batch = run_paths(field, start, g, n_paths, rng, checkpoints=steps, chunk_size=chunk_size,
                      workers=workers)
    rows = []
    for t, k in zip(t_list, steps):
        lw = batch.checkpoints[k][1][:, 0]
        for q in q_list:
            lm, se = log_moment(lw, q)
            if not math.isfinite(lm):
                raise ValidationError(f"E^q not finite in sample for q={q}, t={t}")
            rows.append({"q": float(q), "t": float(t), "log_moment": lm, "stderr": se})
    c_hat = max([0.0] + [(r["log_moment"] - n_sigma * r["stderr"]) / ((1 + r["q"] ** 2) * r["t"])
                         for r in rows])
    for r in rows:
        r["bound"] = c_hat * (1 + r["q"] ** 2) * r["t"]
        r["residual"] = r["log_moment"] - r["bound"]
    return MomentBoundResult(c_hat, rows)
