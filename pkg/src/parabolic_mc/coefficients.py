"""Coefficient fields a(t,x), b(t,x), c(t,x) and sampling-based checks of
the standing assumptions (uniform ellipticity, bounded drift/potential,
spatial continuity of a, weighted integrability of the divergence of a).

All field methods are vectorised: ``x`` has shape ``(n, d)`` and the
returned arrays have a leading axis of length ``n``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceWarning, EllipticityError, ValidationError

EIGEN_FLOOR = 1e-14
SYMMETRY_RTOL = 1e-12
FD_STEP = 1e-4


@dataclass(frozen=True)
class EllipticityBounds:
    """Eigenvalues of ``a`` must lie in ``[1/lam, lam]``."""

    lam: float

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 1.0:
            raise ValidationError(f"ellipticity constant must be >= 1, got {self.lam}")

    @property
    def lower(self) -> float:
        return 1.0 / self.lam

    @property
    def upper(self) -> float:
        return self.lam

    def contains(self, eigs, rtol: float = 1e-12) -> bool:
        eigs = np.asarray(eigs)
        return bool(
            eigs.min() >= self.lower * (1 - rtol) and eigs.max() <= self.upper * (1 + rtol)
        )


def as_points(x, d: int) -> tuple[np.ndarray, bool]:
    """Return ``x`` as an ``(n, d)`` float array and whether it was a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
        single = True
    elif arr.ndim == 1:
        if d == 1 and arr.shape[0] != 1:
            arr = arr.reshape(-1, 1)
            single = False
        else:
            arr = arr.reshape(1, -1)
            single = True
    else:
        single = False
    if arr.shape[1] != d:
        raise ValidationError(f"expected points of dimension {d}, got shape {np.shape(x)}")
    return arr, single


# --------------------------------------------------------------------------
# matrix square root
# --------------------------------------------------------------------------


def _check_symmetric(a: np.ndarray) -> None:
    asym = np.abs(a - np.swapaxes(a, -1, -2)).max() if a.size else 0.0
    scale = max(1.0, float(np.abs(a).max())) if a.size else 1.0
    if asym > SYMMETRY_RTOL * scale:
        raise ValidationError(f"matrix is not symmetric (max asymmetry {asym:.3e})")


def sqrt_spd(a_matrix, lam: float | None = None, floor: float = EIGEN_FLOOR) -> np.ndarray:
    """Symmetric square root of a symmetric positive-definite matrix.

    Accepts a single ``(d, d)`` matrix or a batch ``(n, d, d)``. Eigenvalues
    below ``floor`` raise :class:`EllipticityError`; if ``lam`` is given,
    eigenvalues outside ``[1/lam, lam]`` raise as well.
    """
    a = np.asarray(a_matrix, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValidationError(f"expected square matrix, got shape {a.shape}")
    _check_symmetric(a)
    if a.shape[-1] == 1:
        w = a[..., 0, 0]
        _check_eigs(w, lam, floor)
        return np.sqrt(np.maximum(a, floor))
    w, v = np.linalg.eigh(a)
    _check_eigs(w, lam, floor)
    root = np.sqrt(np.maximum(w, floor))
    return (v * root[..., None, :]) @ np.swapaxes(v, -1, -2)


def _check_eigs(w: np.ndarray, lam: float | None, floor: float) -> None:
    wmin = float(np.min(w))
    if wmin < floor:
        raise EllipticityError(f"eigenvalue {wmin:.3e} below positive floor {floor:.1e}")
    if lam is not None:
        wmax = float(np.max(w))
        if wmin < (1 - 1e-12) / lam or wmax > lam * (1 + 1e-12):
            raise EllipticityError(
                f"eigenvalues [{wmin:.6g}, {wmax:.6g}] outside [{1 / lam:.6g}, {lam:.6g}]"
            )


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------


class CoefficientField:
    """Base class for evaluable coefficient fields.

    Subclasses implement :meth:`a` and, if non-zero, :meth:`b` and :meth:`c`.
    Instances are immutable after construction and picklable, so they can be
    shipped to worker processes.
    """

    name = "custom"
    a_smooth = True
    symmetric_even = False  # a even, b odd, c even in x (used by symmetry checks)

    def __init__(self, d: int, lam: float, b_sup: float = 0.0, c_sup: float = 0.0):
        if int(d) != d or d < 1:
            raise ValidationError(f"dimension must be a positive integer, got {d}")
        self.d = int(d)
        self.bounds = EllipticityBounds(float(lam))
        self.b_sup = float(b_sup)
        self.c_sup = float(c_sup)

    # -- to be overridden -------------------------------------------------
    def a(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def b(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros((x.shape[0], self.d))

    def c(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros(x.shape[0])

    # -- derived ----------------------------------------------------------
    @property
    def lam(self) -> float:
        return self.bounds.lam

    @property
    def constant(self) -> "ConstantField | None":
        """The field itself when its coefficients are constant, else None."""
        return None

    @property
    def has_zero_drift(self) -> bool:
        return False

    @property
    def has_zero_potential(self) -> bool:
        return False

    def sigma(self, t: float, x: np.ndarray, check: bool = True) -> np.ndarray:
        return sqrt_spd(self.a(t, x), lam=self.lam if check else None)

    def shifted(self, s: float) -> "CoefficientField":
        """Field with time origin moved to ``s``: coefficients at (t, x) are those at (t+s, x)."""
        if s == 0:
            return self
        return TimeShiftedField(self, s)

    def describe(self) -> dict:
        return {"name": self.name, "d": self.d, "lambda": self.lam,
                "b_sup": self.b_sup, "c_sup": self.c_sup}

    def __repr__(self):
        return f"{type(self).__name__}({self.describe()})"


class ConstantField(CoefficientField):
    """Constant coefficients; carries the analytic Gaussian kernel."""

    name = "const"
    symmetric_even = True

    def __init__(self, a=1.0, b=0.0, c=0.0, d: int | None = None, lam: float | None = None):
        a0 = np.atleast_2d(np.asarray(a, dtype=float))
        if a0.shape == (1, 1) and d is not None and d > 1:
            a0 = a0[0, 0] * np.eye(d)
        dim = a0.shape[0]
        b0 = np.broadcast_to(np.asarray(b, dtype=float), (dim,)).copy()
        if a0.shape != (dim, dim):
            raise ValidationError(f"a must be square, got {a0.shape}")
        _check_symmetric(a0)
        if lam is None:
            w = np.linalg.eigvalsh(a0)
            if w.min() <= 0:
                raise EllipticityError("constant a is not positive definite")
            lam = max(1.0, float(w.max()), 1.0 / float(w.min()))
        super().__init__(dim, lam, float(np.linalg.norm(b0)), abs(float(c)))
        self.a0 = a0
        self.b0 = b0
        self.c0 = float(c)
        self.symmetric_even = not np.any(b0)

    @property
    def constant(self):
        return self

    @property
    def has_zero_drift(self):
        return not np.any(self.b0)

    @property
    def has_zero_potential(self):
        return self.c0 == 0.0

    def a(self, t, x):
        return np.broadcast_to(self.a0, (x.shape[0], self.d, self.d))

    def b(self, t, x):
        return np.broadcast_to(self.b0, (x.shape[0], self.d))

    def c(self, t, x):
        return np.full(x.shape[0], self.c0)

    def sigma(self, t, x, check=True):
        return np.broadcast_to(self.sigma0, (x.shape[0], self.d, self.d))

    @property
    def sigma0(self) -> np.ndarray:
        s = self.__dict__.get("_sigma0")
        if s is None:
            s = sqrt_spd(self.a0)
            self.__dict__["_sigma0"] = s
        return s

    def describe(self):
        out = super().describe()
        out.update(a=self.a0.tolist(), b=self.b0.tolist(), c=self.c0)
        return out


class SinField(CoefficientField):
    """a(x) = diag(1 + amp*sin(x_i)) with optional constant b, c."""

    name = "sin_a"
    symmetric_even = False

    def __init__(self, d: int = 1, amp: float = 0.5, b=0.0, c: float = 0.0):
        if not 0 <= amp < 1:
            raise ValidationError("amp must lie in [0, 1)")
        lam = max(1.0 + amp, 1.0 / (1.0 - amp))
        b0 = np.broadcast_to(np.asarray(b, dtype=float), (d,)).copy()
        super().__init__(d, lam, float(np.linalg.norm(b0)), abs(float(c)))
        self.amp = float(amp)
        self.b0 = b0
        self.c0 = float(c)

    @property
    def has_zero_drift(self):
        return not np.any(self.b0)

    @property
    def has_zero_potential(self):
        return self.c0 == 0.0

    def _diag(self, x):
        return 1.0 + self.amp * np.sin(x)

    def a(self, t, x):
        diag = self._diag(x)
        if self.d == 1:
            return diag[:, :, None]
        out = np.zeros((x.shape[0], self.d, self.d))
        idx = np.arange(self.d)
        out[:, idx, idx] = diag
        return out

    def sigma(self, t, x, check=True):
        diag = self._diag(x)
        if check:
            _check_eigs(diag, self.lam, EIGEN_FLOOR)
        root = np.sqrt(diag)
        if self.d == 1:
            return root[:, :, None]
        out = np.zeros((x.shape[0], self.d, self.d))
        idx = np.arange(self.d)
        out[:, idx, idx] = root
        return out

    def b(self, t, x):
        return np.broadcast_to(self.b0, (x.shape[0], self.d))

    def c(self, t, x):
        return np.full(x.shape[0], self.c0)

    def describe(self):
        out = super().describe()
        out.update(amp=self.amp, b=self.b0.tolist(), c=self.c0)
        return out


class DiscontinuousField(CoefficientField):
    """a = I, b_i(x) = b_amp*sign(x_i), c(x) = c_amp * 1{x_1 > 0}."""

    name = "disc_bc"
    a_smooth = False  # jump preset: the weak-derivative check is reported as not applicable

    def __init__(self, d: int = 1, b_amp: float = 0.5, c_amp: float = -0.1):
        super().__init__(d, 1.0, abs(b_amp) * math.sqrt(d), abs(c_amp))
        self.b_amp = float(b_amp)
        self.c_amp = float(c_amp)
        self._eye = np.eye(d)

    @property
    def has_zero_drift(self):
        return self.b_amp == 0.0

    @property
    def has_zero_potential(self):
        return self.c_amp == 0.0

    def a(self, t, x):
        return np.broadcast_to(self._eye, (x.shape[0], self.d, self.d))

    def sigma(self, t, x, check=True):
        return self.a(t, x)

    def b(self, t, x):
        return self.b_amp * np.sign(x)

    def c(self, t, x):
        return np.where(x[:, 0] > 0, self.c_amp, 0.0)

    def describe(self):
        out = super().describe()
        out.update(b_amp=self.b_amp, c_amp=self.c_amp)
        return out


_EXPR_NAMESPACE = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "sign": np.sign, "where": np.where,
    "tanh": np.tanh, "arctan": np.arctan, "minimum": np.minimum,
    "maximum": np.maximum, "heaviside": np.heaviside, "floor": np.floor,
    "pi": np.pi, "e": np.e,
}


class ExpressionField(CoefficientField):
    """Field given by numpy expressions in ``t`` and ``x`` (d = 1) or
    ``x1 .. xd`` (any d).

    ``a`` is a single expression (d = 1, or a scalar multiple of I) or a
    nested list of expressions; ``b`` a single expression or a list; ``c`` a
    single expression. Bounds for b and c are estimated on ``box`` when not
    given.
    """

    name = "expr"

    def __init__(self, d: int, a, b="0", c="0", lam: float = 1.0,
                 b_sup: float | None = None, c_sup: float | None = None,
                 a_smooth: bool = True, box: float = 10.0):
        super().__init__(d, lam)
        self.exprs = {"a": a, "b": b, "c": c}
        self.a_smooth = bool(a_smooth)
        self._compile()
        pts = SamplingGrid(-box, box, n=201 if d == 1 else 21).points(d)
        if b_sup is None:
            b_sup = float(np.linalg.norm(self.b(0.0, pts), axis=1).max())
        if c_sup is None:
            c_sup = float(np.abs(self.c(0.0, pts)).max())
        self.b_sup = float(b_sup)
        self.c_sup = float(c_sup)

    def _compile(self):
        def comp(e):
            if isinstance(e, (list, tuple)):
                return [comp(v) for v in e]
            try:
                return compile(str(e), "<coefficient>", "eval")
            except SyntaxError as exc:
                raise ValidationError(f"cannot parse expression {e!r}: {exc.msg}") from None
        self._code = {k: comp(v) for k, v in self.exprs.items()}

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_code", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._compile()

    def _eval(self, code, t, x):
        env = dict(_EXPR_NAMESPACE)
        env["t"] = t
        if self.d == 1:
            env["x"] = x[:, 0]
        for i in range(self.d):
            env[f"x{i + 1}"] = x[:, i]
        val = eval(code, {"__builtins__": {}}, env)  # noqa: S307 - restricted namespace
        return np.broadcast_to(np.asarray(val, dtype=float), (x.shape[0],))

    def a(self, t, x):
        code = self._code["a"]
        n = x.shape[0]
        if not isinstance(code, list):
            return self._eval(code, t, x)[:, None, None] * np.eye(self.d)
        out = np.empty((n, self.d, self.d))
        for i, row in enumerate(code):
            for j, e in enumerate(row):
                out[:, i, j] = self._eval(e, t, x)
        return out

    def b(self, t, x):
        code = self._code["b"]
        if not isinstance(code, list):
            return np.repeat(self._eval(code, t, x)[:, None], self.d, axis=1)
        return np.stack([self._eval(e, t, x) for e in code], axis=1)

    def c(self, t, x):
        return self._eval(self._code["c"], t, x).copy()

    def describe(self):
        out = super().describe()
        out.update(expressions=self.exprs)
        return out


class CallableField(CoefficientField):
    """Wraps plain Python callables ``a(t, x)``, ``b(t, x)``, ``c(t, x)``
    operating on ``(n, d)`` arrays. Not picklable if the callables are
    lambdas; use with ``workers=1``."""

    def __init__(self, d, a: Callable, b: Callable | None = None, c: Callable | None = None,
                 lam: float = 1.0, b_sup: float = 0.0, c_sup: float = 0.0,
                 name: str = "callable", a_smooth: bool = True):
        super().__init__(d, lam, b_sup, c_sup)
        self._a, self._b, self._c = a, b, c
        self.name = name
        self.a_smooth = a_smooth

    @property
    def has_zero_drift(self):
        return self._b is None

    @property
    def has_zero_potential(self):
        return self._c is None

    def a(self, t, x):
        return np.asarray(self._a(t, x), dtype=float).reshape(x.shape[0], self.d, self.d)

    def b(self, t, x):
        if self._b is None:
            return super().b(t, x)
        return np.asarray(self._b(t, x), dtype=float).reshape(x.shape[0], self.d)

    def c(self, t, x):
        if self._c is None:
            return super().c(t, x)
        return np.broadcast_to(np.asarray(self._c(t, x), dtype=float), (x.shape[0],))


class TimeShiftedField(CoefficientField):
    def __init__(self, base: CoefficientField, s: float):
        super().__init__(base.d, base.lam, base.b_sup, base.c_sup)
        self.base = base
        self.s = float(s)
        self.name = base.name
        self.a_smooth = base.a_smooth

    @property
    def has_zero_drift(self):
        return self.base.has_zero_drift

    @property
    def has_zero_potential(self):
        return self.base.has_zero_potential

    @property
    def constant(self):
        return self.base.constant

    def a(self, t, x):
        return self.base.a(t + self.s, x)

    def b(self, t, x):
        return self.base.b(t + self.s, x)

    def c(self, t, x):
        return self.base.c(t + self.s, x)

    def sigma(self, t, x, check=True):
        return self.base.sigma(t + self.s, x, check)


PRESETS = {
    "const": ConstantField,
    "sin_a": SinField,
    "disc_bc": DiscontinuousField,
}


def make_preset(name: str, **params) -> CoefficientField:
    try:
        cls = PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for preset {name!r}: {exc}") from None


def b_sigma(field: CoefficientField, t: float, x) -> np.ndarray:
    """sigma(t,x)^{-1} b(t,x); single point in, single vector out."""
    pts, single = as_points(x, field.d)
    sig = field.sigma(t, pts)
    b = field.b(t, pts)
    if field.d == 1:
        out = b / sig[:, :, 0]
    else:
        out = np.linalg.solve(sig, b[..., None])[..., 0]
    return out[0] if single else out


# --------------------------------------------------------------------------
# sampling-based assumption checks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingGrid:
    """Tensor grid over the box [lo, hi]^d with ``n`` nodes per axis, at the listed times."""

    lo: float | Sequence[float]
    hi: float | Sequence[float]
    n: int = 101
    times: tuple[float, ...] = (0.0,)
    d: int | None = None

    def points(self, d: int | None = None) -> np.ndarray:
        d = d or self.d or (len(self.lo) if np.ndim(self.lo) else 1)
        lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (d,))
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (d,))
        axes = [np.linspace(lo[i], hi[i], self.n) for i in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def describe(self) -> dict:
        lo = np.atleast_1d(self.lo).tolist()
        hi = np.atleast_1d(self.hi).tolist()
        return {"lo": lo, "hi": hi, "n": self.n, "times": list(self.times)}


@dataclass
class ValidationReport:
    check: str
    grid: dict
    min_eig: float | None
    max_eig: float | None
    passed: bool | None
    detail: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"check": self.check, "grid": self.grid, "min_eig": self.min_eig,
               "max_eig": self.max_eig, "pass": self.passed}
        out.update(self.detail)
        return out


def _eig_range(field, grid):
    lo, hi = np.inf, -np.inf
    pts = grid.points(field.d)
    for t in grid.times:
        a = np.asarray(field.a(t, pts), dtype=float)
        w = a[:, 0, 0] if field.d == 1 else np.linalg.eigvalsh(a)
        lo = min(lo, float(w.min()))
        hi = max(hi, float(w.max()))
    return lo, hi


def check_ellipticity(field: CoefficientField, grid: SamplingGrid) -> ValidationReport:
    """Min/max eigenvalue of ``a`` over the grid; passes iff inside [1/lam, lam]."""
    lo, hi = _eig_range(field, grid)
    ok = field.bounds.contains([lo, hi])
    return ValidationReport("ellipticity", grid.describe(), lo, hi, ok,
                            {"lambda": field.lam})


def check_symmetry(field: CoefficientField, grid: SamplingGrid) -> ValidationReport:
    pts = grid.points(field.d)
    worst = 0.0
    for t in grid.times:
        a = np.asarray(field.a(t, pts), dtype=float)
        worst = max(worst, float(np.abs(a - np.swapaxes(a, 1, 2)).max()))
    return ValidationReport("symmetry", grid.describe(), None, None,
                            worst <= SYMMETRY_RTOL * max(1.0, field.lam),
                            {"max_asymmetry": worst})


def check_bounds(field: CoefficientField, grid: SamplingGrid) -> list[ValidationReport]:
    pts = grid.points(field.d)
    bmax = cmax = 0.0
    for t in grid.times:
        bmax = max(bmax, float(np.linalg.norm(field.b(t, pts), axis=1).max()))
        cmax = max(cmax, float(np.abs(field.c(t, pts)).max()))
    tol = 1e-12
    return [
        ValidationReport("b_bound", grid.describe(), None, None,
                         bmax <= field.b_sup * (1 + tol) + tol,
                         {"observed_sup": bmax, "declared_sup": field.b_sup}),
        ValidationReport("c_bound", grid.describe(), None, None,
                         cmax <= field.c_sup * (1 + tol) + tol,
                         {"observed_sup": cmax, "declared_sup": field.c_sup}),
    ]


@dataclass
class ContinuityReport:
    """Empirical modulus of continuity on B(0, radius).

    ``distances`` is sorted ascending; ``envelope[k]`` is the largest
    observed oscillation among pairs at distance <= ``distances[k]``.
    """

    radius: float
    distances: np.ndarray
    diffs: np.ndarray
    envelope: np.ndarray

    @property
    def pairs(self):
        return list(zip(self.distances.tolist(), self.diffs.tolist()))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        k = np.searchsorted(self.distances, r, side="right")
        env = np.concatenate([[0.0], self.envelope])
        return env[k]


def _uniform_ball(rng, n, d, radius):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * radius * rng.random((n, 1)) ** (1.0 / d)


def estimate_modulus(field: CoefficientField, R: float, n_pairs: int = 2000,
                     t_samples: int = 5, *, t_range=(0.0, 1.0), which: str = "a",
                     seed: int = 0) -> ContinuityReport:
    """Sample pairs in the ball of radius R and build a nondecreasing
    envelope of sup_{i,j,t} |m_ij(t,x) - m_ij(t,y)| where m is ``a`` or
    (``which="sigma"``) its square root."""
    if R <= 0:
        raise ValidationError("radius must be positive")
    rng = np.random.default_rng(seed)
    d = field.d
    x = _uniform_ball(rng, n_pairs, d, R)
    # half the pairs are local perturbations, to resolve small distances
    half = n_pairs // 2
    y = _uniform_ball(rng, n_pairs, d, R)
    dirs = rng.standard_normal((half, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r_local = R * 10 ** rng.uniform(-4, 0, size=(half, 1))
    y[:half] = x[:half] + dirs * r_local
    norms = np.linalg.norm(y, axis=1, keepdims=True)
    y = np.where(norms > R, y * (R / np.maximum(norms, 1e-300)), y)
    times = np.linspace(t_range[0], t_range[1], t_samples) if t_samples > 1 else [t_range[0]]
    fn = field.a if which == "a" else (lambda t, p: field.sigma(t, p, check=False))
    diffs = np.zeros(n_pairs)
    for t in times:
        delta = np.abs(np.asarray(fn(t, x)) - np.asarray(fn(t, y)))
        diffs = np.maximum(diffs, delta.reshape(n_pairs, -1).max(axis=1))
    dist = np.linalg.norm(x - y, axis=1)
    order = np.argsort(dist, kind="stable")
    dist, diffs = dist[order], diffs[order]
    return ContinuityReport(float(R), dist, diffs, np.maximum.accumulate(diffs))


@dataclass(frozen=True)
class A3Quadrature:
    """Trapezoid rule on [-half_width, half_width]^d with ``n_nodes`` per axis."""

    half_width: float = 40.0
    n_nodes: int = 8001
    times: tuple[float, ...] = (0.0,)
    fd_step: float = FD_STEP

    def refined(self) -> "A3Quadrature":
        return A3Quadrature(self.half_width, 2 * self.n_nodes - 1, self.times, self.fd_step)


def estimate_a3_integral(field: CoefficientField, theta: float, m: float,
                         quadrature: A3Quadrature | None = None) -> float:
    """sup_t sum_{i,j} int |d_{x_j} a_ij(t,x)|^theta exp(-m|x|) dx by
    central differences on a tensor trapezoid rule."""
    d = field.d
    if not (theta >= d and theta > 2):
        raise ValidationError(f"theta must lie in [d, inf) and exceed 2, got {theta}")
    if m < 0:
        raise ValidationError("decay rate m must be nonnegative")
    q = quadrature or A3Quadrature()
    axis = np.linspace(-q.half_width, q.half_width, q.n_nodes)
    wts = np.full(q.n_nodes, axis[1] - axis[0])
    wts[[0, -1]] *= 0.5
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([mm.ravel() for mm in mesh], axis=1)
    w = wts
    for _ in range(d - 1):
        w = np.multiply.outer(w, wts)
    w = w.ravel()
    decay = np.exp(-m * np.linalg.norm(pts, axis=1))
    h = q.fd_step
    best = 0.0
    for t in q.times:
        integrand = np.zeros(pts.shape[0])
        for j in range(d):
            step = np.zeros(d)
            step[j] = h
            da = (np.asarray(field.a(t, pts + step)) - np.asarray(field.a(t, pts - step))) / (2 * h)
            integrand += (np.abs(da[:, :, j]) ** theta).sum(axis=1)
        best = max(best, float(np.sum(w * integrand * decay)))
    if not math.isfinite(best):
        warnings.warn("weighted derivative integral is not finite", DivergenceWarning, stacklevel=2)
    return best


def validation_reports(field: CoefficientField, grid: SamplingGrid, *, theta: float | None = None,
                       m: float = 1.0, radius: float = 5.0) -> list[ValidationReport]:
    """Every sampling-based assumption check, in a fixed order."""
    reports = [check_symmetry(field, grid), check_ellipticity(field, grid)]
    reports += check_bounds(field, grid)
    theta = theta if theta is not None else max(float(field.d), 3.0)
    if field.a_smooth:
        quad = A3Quadrature(times=tuple(grid.times),
                            n_nodes=8001 if field.d == 1 else 161,
                            half_width=40.0 / max(m, 1.0) if field.d == 1 else 20.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DivergenceWarning)
            val = estimate_a3_integral(field, theta, m, quad)
        reports.append(ValidationReport("a3_integral", grid.describe(), None, None,
                                        bool(np.isfinite(val)),
                                        {"theta": theta, "m": m, "M": val}))
    else:
        reports.append(ValidationReport("a3_integral", grid.describe(), None, None, None,
                                        {"status": "not-applicable", "theta": theta, "m": m}))
    mod = estimate_modulus(field, radius, n_pairs=2000, t_samples=max(1, len(grid.times)),
                           t_range=(min(grid.times), max(grid.times)))
    small = float(mod(1e-3 * radius))
    reports.append(ValidationReport("continuity", grid.describe(), None, None,
                                    small <= 1e-2 * max(1.0, float(mod.envelope[-1])),
                                    {"radius": radius, "envelope_at_1e-3R": small,
                                     "envelope_max": float(mod.envelope[-1])}))
    return reports
