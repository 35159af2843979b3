"""Independent reference solutions used as oracles.

Closed-form Gaussian kernels for constant coefficients, Brownian-bridge
marginals, a 1-D Crank-Nicolson solver for variable coefficients and the
hitting-time law of a reflected pair of 1-D Brownian motions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, linalg, special

from .coefficients import CoefficientField, ConstantField
from .errors import GridTooNarrowError, UnsupportedFieldError, ValidationError

# --------------------------------------------------------------------------
# constant coefficients
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantCoefficientKernel:
    a0: np.ndarray
    b0: np.ndarray
    c0: float = 0.0

    def __post_init__(self):
        a0 = np.atleast_2d(np.asarray(self.a0, dtype=float))
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "b0", np.broadcast_to(
            np.asarray(self.b0, dtype=float), (a0.shape[0],)).copy())
        if np.linalg.cond(a0) > 1e14 or np.linalg.eigvalsh(a0).min() <= 0:
            raise ValidationError("a0 must be symmetric positive definite")

    @property
    def d(self) -> int:
        return self.a0.shape[0]

    @classmethod
    def from_field(cls, field: CoefficientField) -> "ConstantCoefficientKernel":
        const = field.constant
        if const is None:
            raise UnsupportedFieldError(f"field {field.name!r} has no closed-form kernel")
        return cls(const.a0, const.b0, const.c0)

    @classmethod
    def of(cls, a=1.0, b=0.0, c=0.0, d: int = 1) -> "ConstantCoefficientKernel":
        f = ConstantField(a, b, c, d=d)
        return cls(f.a0, f.b0, f.c0)


def _pts(v, d):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if d == 1 else arr.reshape(1, d)
    return arr


def gaussian_kernel(k: ConstantCoefficientKernel, t: float, x, y) -> np.ndarray | float:
    """Fundamental solution of the constant-coefficient equation:
    N(y; x + b0 t, a0 t) * exp(c0 t). Broadcasts over points in x and y."""
    if t <= 0:
        raise ValidationError("t must be positive")
    d = k.d
    xs, ys = _pts(x, d), _pts(y, d)
    m = ys - xs - k.b0 * t
    inv = np.linalg.inv(k.a0)
    quad = np.einsum("ni,ij,nj->n", m, inv, m)
    norm = (2 * math.pi * t) ** (-d / 2) / math.sqrt(np.linalg.det(k.a0))
    val = norm * np.exp(-quad / (2 * t)) * math.exp(k.c0 * t)
    scalar = np.ndim(x) <= (0 if d == 1 else 1) and np.ndim(y) <= (0 if d == 1 else 1)
    return float(val[0]) if scalar else val


def gaussian_kernel_hessian_diag(k: ConstantCoefficientKernel, t: float, x, y) -> np.ndarray:
    """d^2 p / dy_i^2 for each query point, shape (n, d)."""
    d = k.d
    xs, ys = _pts(x, d), _pts(y, d)
    p = np.atleast_1d(gaussian_kernel(k, t, xs, ys))
    inv = np.linalg.inv(k.a0 * t)
    g = (ys - xs - k.b0 * t) @ inv.T
    return p[:, None] * (g ** 2 - np.diag(inv)[None, :])


def gaussian_kernel_grad_x(k: ConstantCoefficientKernel, t: float, x, y) -> np.ndarray:
    """Gradient in the initial point, shape (n, d)."""
    d = k.d
    xs, ys = _pts(x, d), _pts(y, d)
    p = np.atleast_1d(gaussian_kernel(k, t, xs, ys))
    inv = np.linalg.inv(k.a0 * t)
    return p[:, None] * ((ys - xs - k.b0 * t) @ inv.T)


def chapman_kolmogorov_residual(k: ConstantCoefficientKernel, x: float, s: float, t: float,
                                y: float, n_nodes: int = 4001, width: float = 12.0) -> float:
    """|p(0,x;t,y) - int p(0,x;s,xi) p(s,xi;t,y) dxi| by the trapezoid rule (d = 1)."""
    if k.d != 1:
        raise ValidationError("quadrature check implemented for d = 1")
    if not 0 < s < t:
        raise ValidationError("need 0 < s < t")
    sd = math.sqrt(float(k.a0[0, 0]) * t)
    centre = x + float(k.b0[0]) * s
    xi = np.linspace(centre - width * sd, centre + width * sd, n_nodes)
    first = gaussian_kernel(k, s, x, xi)
    second = np.array([gaussian_kernel(k, t - s, v, y) for v in xi])
    composed = integrate.trapezoid(first * second, xi)
    return abs(composed - gaussian_kernel(k, t, x, y))


def brownian_bridge_marginal(t: float, s: float, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance at time s of Brownian motion from x pinned at y at time t."""
    if not 0 < s < t:
        raise ValidationError(f"interior time must lie in (0, {t}), got {s}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mean = x + (s / t) * (y - x)
    cov = s * (t - s) / t * np.eye(x.size)
    return mean, cov


def backward_residual_check(k: ConstantCoefficientKernel, t: float, x, y, fd_step: float,
                            s: float = 0.0) -> float:
    """Finite-difference value of d_s p + 1/2 sum a_ij d_xi d_xj p at (s, x; t, y)
    for the driftless kernel; zero up to O(fd_step^2) truncation."""
    if np.any(k.b0) or k.c0 != 0:
        raise ValidationError("backward residual check needs b0 = 0 and c0 = 0")
    if t - s <= 2 * fd_step:
        raise ValidationError("t - s must stay away from 0")
    d = k.d
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(d)
    y = np.atleast_1d(np.asarray(y, dtype=float)).reshape(d)
    h = fd_step

    def p(s_, x_):
        return float(gaussian_kernel(k, t - s_, x_.reshape(1, d), y.reshape(1, d))[0])

    dt = (p(s + h, x) - p(s - h, x)) / (2 * h)
    lap = 0.0
    eye = np.eye(d) * h
    for i in range(d):
        for j in range(d):
            if i == j:
                dij = (p(s, x + eye[i]) - 2 * p(s, x) + p(s, x - eye[i])) / h ** 2
            else:
                dij = (p(s, x + eye[i] + eye[j]) - p(s, x + eye[i] - eye[j])
                       - p(s, x - eye[i] + eye[j]) + p(s, x - eye[i] - eye[j])) / (4 * h ** 2)
            lap += k.a0[i, j] * dij
    return abs(dt + 0.5 * lap)


# --------------------------------------------------------------------------
# reflected Brownian pair
# --------------------------------------------------------------------------


def coupling_survival_1d_bm(delta, s):
    """P(tau > s) for X - Z = 2B started at delta: erf(delta / (2 sqrt(2 s)))."""
    delta = np.asarray(delta, dtype=float)
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        arg = np.where(s > 0, delta / (2 * np.sqrt(2 * np.where(s > 0, s, 1.0))), np.inf)
    out = np.where(delta > 0, special.erf(arg), 0.0)
    return float(out) if out.ndim == 0 else out


def expected_coupling_time_1d_bm(delta: float, t: float) -> float:
    """E[t ^ tau] = int_0^t P(tau > s) ds, by adaptive quadrature."""
    if delta <= 0:
        return 0.0
    val, _ = integrate.quad(lambda s: coupling_survival_1d_bm(delta, s), 0.0, t,
                            limit=200, epsabs=1e-12, epsrel=1e-10)
    return val


# --------------------------------------------------------------------------
# Crank-Nicolson
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_cells: int
    dt: float

    def __post_init__(self):
        if not self.x_max > self.x_min or self.n_cells < 4:
            raise ValidationError("need x_max > x_min and at least 4 cells")
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.dt > self.dx * (1 + 1e-12):
            raise ValidationError(f"dt={self.dt} exceeds dx={self.dx}; accuracy requires dt <= dx")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_cells + 1)

    @classmethod
    def around(cls, centre: float, half_width: float, dx: float, dt: float | None = None):
        n = int(round(2 * half_width / dx))
        return cls(centre - half_width, centre + half_width, n, dt if dt is not None else dx)


@dataclass
class CNSolution:
    x: np.ndarray
    values: np.ndarray
    t: float
    smoothing_bias: np.ndarray | None = None

    def __call__(self, pts) -> np.ndarray:
        return np.interp(pts, self.x, self.values)

    def bias_at(self, pts) -> np.ndarray:
        if self.smoothing_bias is None:
            return np.zeros(np.shape(pts))
        return np.interp(pts, self.x, self.smoothing_bias)

    def second_derivative(self, pts) -> np.ndarray:
        dx = self.x[1] - self.x[0]
        d2 = np.zeros_like(self.values)
        d2[1:-1] = (self.values[2:] - 2 * self.values[1:-1] + self.values[:-2]) / dx ** 2
        return np.interp(pts, self.x, d2)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * (self.x[1] - self.x[0]))


def _operator_bands(field, t, xs, dx, form):
    pts = xs[:, None]
    a = np.asarray(field.a(t, pts), dtype=float)[:, 0, 0]
    b = np.asarray(field.b(t, pts), dtype=float)[:, 0]
    if form == "forward":
        # 1/2 (a q)'' - (b q)'
        lower = 0.5 * a[:-2] / dx ** 2 + b[:-2] / (2 * dx)
        upper = 0.5 * a[2:] / dx ** 2 - b[2:] / (2 * dx)
    else:
        # 1/2 a u'' + b u'
        lower = 0.5 * a[1:-1] / dx ** 2 - b[1:-1] / (2 * dx)
        upper = 0.5 * a[1:-1] / dx ** 2 + b[1:-1] / (2 * dx)
    diag = -a[1:-1] / dx ** 2
    return lower, diag, upper


def _step(u, bands, dt, theta):
    """(I - theta dt A) u_new = (I + (1-theta) dt A) u on interior nodes."""
    lower, diag, upper = bands
    rhs = u.copy()
    if theta < 1:
        w = (1 - theta) * dt
        rhs += w * diag * u
        rhs[1:] += w * lower[1:] * u[:-1]
        rhs[:-1] += w * upper[:-1] * u[1:]
    n = u.size
    ab = np.zeros((3, n))
    ab[0, 1:] = -theta * dt * upper[:-1]
    ab[1] = 1 - theta * dt * diag
    ab[2, :-1] = -theta * dt * lower[1:]
    return linalg.solve_banded((1, 1), ab, rhs)


def _cn_run(field, u0, t, grid, form):
    xs = grid.nodes
    dx = grid.dx
    n_t = max(1, math.ceil(t / grid.dt - 1e-9))
    dt = t / n_t
    u = u0[1:-1].copy()
    inner = xs[1:-1, None]
    use_c = not field.has_zero_potential
    time = 0.0
    # Rannacher start-up: two CN steps replaced by four half implicit steps
    schedule = []
    if n_t >= 2:
        schedule += [(dt / 2, 1.0)] * 4
        schedule += [(dt, 0.5)] * (n_t - 2)
    else:
        schedule += [(dt, 0.5)]
    for tau, theta in schedule:
        tm = time + 0.5 * tau
        if use_c:
            half = np.exp(0.5 * tau * np.asarray(field.c(tm, inner), dtype=float))
            u *= half
        u = _step(u, _operator_bands(field, tm, xs, dx, form), tau, theta)
        if use_c:
            u *= half
        time += tau
    out = np.zeros_like(xs)
    out[1:-1] = u
    return out


def _narrow_gaussian(xs, centre, width):
    g = np.exp(-0.5 * ((xs - centre) / width) ** 2)
    g /= g.sum() * (xs[1] - xs[0])
    return g


def crank_nicolson_1d(field: CoefficientField, initial: float | Callable[[np.ndarray], np.ndarray],
                      t: float, grid: Grid1D, *, form: str = "forward",
                      estimate_smoothing_bias: bool = True) -> CNSolution:
    """Crank-Nicolson (Rannacher start-up, Strang-split potential) for d = 1.

    ``form="forward"`` evolves the density y -> p(0, x; t, y) from
    ``initial`` (a point x gives a delta, realised as a Gaussian of width
    2 dx); ``form="backward"`` solves du/dt = L u for the terminal function,
    so a point y gives x -> p(0, x; t, y) for time-homogeneous fields.
    With a point initial condition the bias of the 2 dx smoothing is
    estimated from a second solve at width 4 dx.
    """
    if field.d != 1:
        raise ValidationError("Crank-Nicolson oracle is one-dimensional")
    if form not in ("forward", "backward"):
        raise ValidationError(f"unknown form {form!r}")
    if t <= 0:
        raise ValidationError("t must be positive")
    xs = grid.nodes
    dx = grid.dx
    if callable(initial):
        u0 = np.asarray(initial(xs), dtype=float)
        sol = _cn_run(field, u0, t, grid, form)
        edge = max(3, grid.n_cells // 50)
        leak = (np.abs(sol[:edge]).sum() + np.abs(sol[-edge:]).sum()) * dx
        total = max(np.abs(sol).sum() * dx, 1e-300)
        if leak / total > 1e-8:
            raise GridTooNarrowError(f"solution mass near the boundary is {leak / total:.2e}; widen the grid")
        return CNSolution(xs, sol, t)
    centre = float(initial)
    reach = min(centre - grid.x_min, grid.x_max - centre)
    spread = math.sqrt(field.lam * t + (4 * dx) ** 2)
    z = (reach - field.b_sup * t) / spread
    tail = 2 * 0.5 * special.erfc(z / math.sqrt(2)) * math.exp(field.c_sup * t) if z > 0 else 1.0
    if tail >= 1e-8:
        raise GridTooNarrowError(
            f"boundary mass bound {tail:.2e} >= 1e-8; widen the grid around {centre}")
    sol = _cn_run(field, _narrow_gaussian(xs, centre, 2 * dx), t, grid, form)
    bias = None
    if estimate_smoothing_bias:
        wide = _cn_run(field, _narrow_gaussian(xs, centre, 4 * dx), t, grid, form)
        # smoothing error scales with the added variance: (4dx)^2 / (2dx)^2 = 4
        bias = np.abs(sol - wide) / 3.0
    return CNSolution(xs, sol, t, bias)
