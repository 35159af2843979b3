import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from parabolic_mc.coefficients import ConstantField, SinField
from parabolic_mc.errors import GridTooNarrowError, UnsupportedFieldError, ValidationError
from parabolic_mc.reference import (ConstantCoefficientKernel, Grid1D, backward_residual_check,
                                    brownian_bridge_marginal, chapman_kolmogorov_residual,
                                    coupling_survival_1d_bm, crank_nicolson_1d,
                                    expected_coupling_time_1d_bm, gaussian_kernel,
                                    gaussian_kernel_grad_x, gaussian_kernel_hessian_diag)


# -- closed-form kernels -----------------------------------------------------

def test_standard_heat_kernel_at_origin():
    k = ConstantCoefficientKernel.of(1.0)
    assert gaussian_kernel(k, 1.0, 0.0, 0.0) == pytest.approx(0.3989422804, abs=1e-10)


def test_potential_scales_kernel():
    gamma, t = 0.7, 1.3
    ys = np.linspace(-2, 2, 9)
    base = gaussian_kernel(ConstantCoefficientKernel.of(1.5, 0.2), t, 0.1, ys)
    withc = gaussian_kernel(ConstantCoefficientKernel.of(1.5, 0.2, gamma), t, 0.1, ys)
    np.testing.assert_allclose(withc, math.exp(gamma * t) * base, rtol=1e-14)


def test_two_dimensional_determinant_factor():
    k = ConstantCoefficientKernel(np.diag([1.0, 4.0]), np.zeros(2))
    t = 0.7
    assert gaussian_kernel(k, t, [0.3, 0.1], [0.3, 0.1]) == pytest.approx(
        1 / (2 * math.pi * t) * 0.5, rel=1e-14)


def test_drifted_kernel_matches_normal_density():
    from scipy.stats import norm
    k = ConstantCoefficientKernel.of(2.0, 0.3, 0.0)
    ys = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(gaussian_kernel(k, 1.5, 0.2, ys),
                               norm.pdf(ys, 0.2 + 0.45, math.sqrt(3.0)), rtol=1e-13)


def test_kernel_integrates_to_potential_factor():
    k1 = ConstantCoefficientKernel.of(1.7, -0.4, 0.25)
    val, _ = integrate.quad(lambda y: gaussian_kernel(k1, 0.8, 0.1, y), -np.inf, np.inf,
                            epsabs=1e-13)
    assert abs(val - math.exp(0.25 * 0.8)) <= 1e-8
    a2 = np.array([[1.5, 0.4], [0.4, 0.8]])
    k2 = ConstantCoefficientKernel(a2, np.array([0.2, -0.1]), -0.3)
    f = lambda y2, y1: float(gaussian_kernel(k2, 1.0, [0.0, 0.0], [y1, y2]))
    val2, _ = integrate.dblquad(f, -12, 12, -12, 12, epsabs=1e-11)
    assert abs(val2 - math.exp(-0.3)) <= 1e-8


def test_singular_matrix_rejected():
    with pytest.raises(ValidationError):
        ConstantCoefficientKernel(np.array([[1.0, 1.0], [1.0, 1.0]]), np.zeros(2))


def test_kernel_needs_positive_time():
    with pytest.raises(ValidationError):
        gaussian_kernel(ConstantCoefficientKernel.of(1.0), 0.0, 0.0, 0.0)


def test_kernel_from_variable_field_is_unsupported():
    with pytest.raises(UnsupportedFieldError):
        ConstantCoefficientKernel.from_field(SinField())


def test_hessian_matches_finite_differences():
    k = ConstantCoefficientKernel.of(1.3, 0.2)
    y = np.array([-0.7, 0.1, 0.9])
    e = 1e-4
    fd = (gaussian_kernel(k, 1.0, 0.0, y + e) - 2 * gaussian_kernel(k, 1.0, 0.0, y)
          + gaussian_kernel(k, 1.0, 0.0, y - e)) / e ** 2
    np.testing.assert_allclose(gaussian_kernel_hessian_diag(k, 1.0, 0.0, y)[:, 0], fd, rtol=1e-5)


def test_chapman_kolmogorov_identity():
    k = ConstantCoefficientKernel.of(1.4, 0.3, -0.2)
    for y in (-1.0, 0.0, 0.8):
        assert chapman_kolmogorov_residual(k, 0.1, 0.5, 1.0, y) <= 1e-6


def test_chapman_kolmogorov_residual_shrinks_with_resolution_near_zero():
    k = ConstantCoefficientKernel.of(1.0)
    # small s: the first factor is sharply peaked, coarse rules resolve it badly
    res = [chapman_kolmogorov_residual(k, 0.0, 0.01, 1.0, 0.3, n_nodes=n, width=8.0)
           for n in (21, 41, 81, 161)]
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-1] < 1e-6


# -- bridge marginals --------------------------------------------------------

def test_bridge_marginal_examples():
    m, c = brownian_bridge_marginal(2.0, 1.0, 0.0, 0.0)
    assert m[0] == 0.0 and c[0, 0] == pytest.approx(0.5)
    m, c = brownian_bridge_marginal(1.0, 0.25, 0.0, 1.0)
    assert m[0] == pytest.approx(0.25) and c[0, 0] == pytest.approx(0.1875)
    m, c = brownian_bridge_marginal(1.0, 1e-9, 0.4, 1.0)
    assert m[0] == pytest.approx(0.4, abs=1e-8) and c[0, 0] < 1e-8
    with pytest.raises(ValidationError):
        brownian_bridge_marginal(1.0, 1.0, 0.0, 0.0)


# -- backward equation -------------------------------------------------------

def test_backward_residual_small_step():
    k = ConstantCoefficientKernel.of(1.0)
    assert backward_residual_check(k, 1.0, 0.0, 1.0, 1e-4) <= 1e-6


def test_backward_residual_second_order():
    k = ConstantCoefficientKernel.of(1.0)
    r = [backward_residual_check(k, 1.0, 0.0, 1.0, h) for h in (0.04, 0.02, 0.01)]
    for a, b in zip(r, r[1:]):
        assert a / b == pytest.approx(4.0, rel=0.1)


def test_backward_residual_two_dimensional():
    k = ConstantCoefficientKernel(np.array([[1.5, 0.4], [0.4, 0.8]]), np.zeros(2))
    r = [backward_residual_check(k, 1.0, [0.0, 0.0], [0.5, -0.3], h) for h in (0.04, 0.02)]
    assert math.log2(r[0] / r[1]) == pytest.approx(2.0, abs=0.3)


def test_gradient_vanishes_at_symmetry_point():
    k = ConstantCoefficientKernel.of(2.0)
    assert gaussian_kernel_grad_x(k, 0.7, 0.4, 0.4)[0, 0] == 0.0


def test_backward_residual_rejects_drift():
    with pytest.raises(ValidationError):
        backward_residual_check(ConstantCoefficientKernel.of(1.0, 0.1), 1.0, 0.0, 0.0, 1e-3)


# -- coupling survival -------------------------------------------------------

def test_survival_limits_and_value():
    assert coupling_survival_1d_bm(0.1, 1e-12) == pytest.approx(1.0)
    assert coupling_survival_1d_bm(1e-12, 1.0) == pytest.approx(0.0, abs=1e-11)
    assert coupling_survival_1d_bm(0.1, 1.0) == pytest.approx(math.erf(0.1 / (2 * math.sqrt(2))),
                                                              rel=1e-14)
    assert coupling_survival_1d_bm(0.1, 1.0) == pytest.approx(0.03988, abs=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 2), st.floats(1e-4, 5), st.floats(1e-4, 5))
def test_survival_monotone(delta, s1, s2):
    lo, hi = sorted((s1, s2))
    assert coupling_survival_1d_bm(delta, hi) <= coupling_survival_1d_bm(delta, lo)
    assert coupling_survival_1d_bm(delta, lo) <= coupling_survival_1d_bm(delta * 1.5, lo)


def test_survival_against_direct_walk():
    # 2B started at delta on a fine grid; discrete monitoring is corrected by
    # shifting the barrier by 0.5826 * (2 sqrt h)
    rng = np.random.default_rng(0)
    n, steps, s, delta = 20000, 400, 0.01, 0.1
    h = s / steps
    paths = delta + np.cumsum(2 * math.sqrt(h) * rng.standard_normal((n, steps)), axis=1)
    alive = (paths.min(axis=1) > 0).mean()
    shifted = math.erf((delta + 0.5826 * 2 * math.sqrt(h)) / (2 * math.sqrt(2 * s)))
    assert abs(alive - shifted) <= 4 * math.sqrt(alive * (1 - alive) / n) + 0.005


def test_expected_coupling_time_quadrature():
    assert expected_coupling_time_1d_bm(0.0, 1.0) == 0.0
    val = expected_coupling_time_1d_bm(0.1, 1.0)
    # independent: E[1 ^ tau] by the trapezoid rule in sqrt-time
    u = np.linspace(0, 1, 200001)
    f = 2 * u * np.array([math.erf(0.1 / (2 * math.sqrt(2) * v)) if v > 0 else 1.0 for v in u])
    assert val == pytest.approx(integrate.trapezoid(f, u), rel=1e-8)
    assert val == pytest.approx(0.0773217, abs=1e-7)


# -- Crank-Nicolson ----------------------------------------------------------

def test_grid_requires_dt_at_most_dx():
    with pytest.raises(ValidationError):
        Grid1D(-1, 1, 100, 0.05)


def test_cn_heat_kernel_accuracy():
    g = Grid1D(-10, 10, 2000, 1e-2)
    sol = crank_nicolson_1d(ConstantField(1.0), 0.0, 1.0, g)
    k = ConstantCoefficientKernel.of(1.0)
    err = np.abs(sol.values - gaussian_kernel(k, 1.0, 0.0, g.nodes)).max()
    assert err <= 1e-3
    assert abs(sol.mass - 1.0) <= 1e-6


def test_cn_drift_and_potential_match_closed_form():
    f = ConstantField(1.0, 0.3, 0.2)
    g = Grid1D(-10, 10, 2000, 1e-2)
    sol = crank_nicolson_1d(f, 0.0, 1.0, g)
    ys = np.linspace(-3, 3, 25)
    want = gaussian_kernel(ConstantCoefficientKernel.from_field(f), 1.0, 0.0, ys)
    assert np.abs(sol(ys) - want).max() <= 1e-3
    assert sol.mass == pytest.approx(math.exp(0.2), rel=1e-6)


def test_cn_constant_potential_factorises():
    g = Grid1D(-10, 10, 2000, 1e-2)
    base = crank_nicolson_1d(SinField(), 0.0, 1.0, g).values
    withc = crank_nicolson_1d(SinField(c=-0.4), 0.0, 1.0, g).values
    assert np.abs(withc - math.exp(-0.4) * base).max() <= 1e-10


def test_cn_self_convergence_order_sin():
    f = SinField()
    sols = {dx: crank_nicolson_1d(f, 0.0, 1.0, Grid1D(-12, 12, int(round(24 / dx)), dx))
            for dx in (0.04, 0.02, 0.01)}
    ys = np.linspace(-4, 4, 81)
    e1 = np.abs(sols[0.04](ys) - sols[0.02](ys)).max()
    e2 = np.abs(sols[0.02](ys) - sols[0.01](ys)).max()
    assert 1.7 <= math.log2(e1 / e2) <= 2.3


def test_cn_mass_conservation_variable():
    sol = crank_nicolson_1d(SinField(b=0.2), 0.5, 1.0, Grid1D(-12, 12, 2400, 1e-2))
    assert abs(sol.mass - 1.0) <= 1e-6


def test_cn_backward_form_gives_kernel_in_initial_point():
    f = ConstantField(1.0, 0.3)
    g = Grid1D(-10, 10, 2000, 1e-2)
    sol = crank_nicolson_1d(f, 0.5, 1.0, g, form="backward")
    xs = np.linspace(-2, 2, 9)
    want = gaussian_kernel(ConstantCoefficientKernel.from_field(f), 1.0, xs, 0.5)
    assert np.abs(sol(xs) - want).max() <= 1e-3


def test_cn_smoothing_bias_reported():
    sol = crank_nicolson_1d(SinField(), 0.0, 1.0, Grid1D(-10, 10, 1000, 2e-2))
    assert sol.smoothing_bias is not None
    assert np.all(sol.bias_at(np.linspace(-2, 2, 5)) >= 0)


def test_cn_narrow_grid_is_rejected():
    with pytest.raises(GridTooNarrowError):
        crank_nicolson_1d(ConstantField(1.0), 0.0, 1.0, Grid1D(-2, 2, 400, 1e-2))
