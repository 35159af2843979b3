import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parabolic_mc.coefficients import ConstantField, DiscontinuousField, ExpressionField, SinField
from parabolic_mc.errors import (EllipticityError, UnsupportedFieldError, ValidationError,
                                 WeightOverflowError)
from parabolic_mc.reference import brownian_bridge_marginal
from parabolic_mc.rng import RngStream
from parabolic_mc.sde import (TimeGrid, Trajectory, accumulate_weight, feynman_kac_solve,
                              pinned_drift, run_paths, simulate_bridge, simulate_paths,
                              step_log_weights, weight_split, weighted_mean)


# -- grids and streams -------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(1e-3, 10), st.integers(1, 10000))
def test_time_grid_reconstructs_span(t0, span, n):
    g = TimeGrid(t0, t0 + span, n)
    assert g.h > 0
    assert np.all(np.diff(g.times) > 0)
    assert abs(g.n_steps * g.h - span) <= 1e-12 * span


def test_time_grid_rejects_bad_input():
    with pytest.raises(ValidationError):
        TimeGrid(1.0, 1.0, 10)
    with pytest.raises(ValidationError):
        TimeGrid(0.0, 1.0, 0)


def test_default_grid_step_rule():
    for lam in (1.0, 2.0, 3.7):
        g = TimeGrid.default(0.0, 2.0, lam)
        assert lam * g.h <= 1e-3 * 2.0 * (1 + 1e-12)


def test_stream_reproducible_and_distinct():
    a = RngStream(42, 3).generator().standard_normal(1000)
    b = RngStream(42, 3).generator().standard_normal(1000)
    c = RngStream(42, 4).generator().standard_normal(1000)
    np.testing.assert_array_equal(a, b)
    assert abs(np.corrcoef(a, c)[0, 1]) < 4 / math.sqrt(1000)
    d = RngStream(42, 3).chunk(1).generator().standard_normal(1000)
    assert not np.array_equal(a, d)


def test_stream_rejects_negative_seed():
    with pytest.raises(ValueError):
        RngStream(-1)


# -- path simulation ---------------------------------------------------------

def test_brownian_statistics():
    n = 100_000
    b = run_paths(ConstantField(1.0), [0.0], TimeGrid(0, 1, 20), n, RngStream(1), weights=False)
    x = b.endpoints[:, 0, 0]
    assert abs(x.mean()) <= 4 / math.sqrt(n)
    assert x.var(ddof=1) == pytest.approx(1.0, rel=0.05)


def test_single_forced_step():
    f = ConstantField(4.0)  # sigma = 2
    bundle = simulate_paths(f, 0.0, TimeGrid(0, 0.01, 1), 1, None, increments=[[[0.1]]])
    assert bundle.states[0, 1, 0] == pytest.approx(0.2, abs=1e-15)
    assert bundle.states[0, 0, 0] == 0.0


def test_short_time_variance_sin_field():
    n = 100_000
    b = run_paths(SinField(), [0.0], TimeGrid(0, 0.01, 10), n, RngStream(2), weights=False)
    assert b.endpoints[:, 0, 0].var(ddof=1) == pytest.approx(0.01, rel=0.05)


def test_increments_have_normal_statistics():
    g = TimeGrid(0, 1, 50)
    bundle = simulate_paths(ConstantField(1.0), 0.0, g, 4000, RngStream(3))
    inc = bundle.increments.ravel()
    assert abs(inc.mean()) <= 4 * math.sqrt(g.h / inc.size)
    assert inc.var() == pytest.approx(g.h, rel=0.02)
    np.testing.assert_array_equal(bundle.states[:, 0, 0], 0.0)
    traj = bundle[5]
    assert isinstance(traj, Trajectory) and traj.states.shape == (51, 1)


def test_ellipticity_violation_reports_location():
    f = ExpressionField(1, "1 + x", lam=2.0)  # leaves [1/2, 2] once |x| > 1/2
    with pytest.raises(EllipticityError) as exc:
        run_paths(f, [0.0], TimeGrid(0, 5, 500), 50, RngStream(4))
    err = exc.value
    assert err.step is not None and err.path is not None
    v = 1 + err.location[0]
    assert v < 0.5 or v > 2


def test_results_do_not_depend_on_workers():
    f = SinField(b=0.3, c=0.1)
    g = TimeGrid(0, 0.5, 20)
    a = run_paths(f, [0.0], g, 3000, RngStream(5), chunk_size=1000, workers=1)
    b = run_paths(f, [0.0], g, 3000, RngStream(5), chunk_size=1000, workers=2)
    np.testing.assert_array_equal(a.endpoints, b.endpoints)
    np.testing.assert_array_equal(a.log_weight, b.log_weight)


def test_crn_rows_share_increments():
    f = ConstantField(1.0)
    b = run_paths(f, [[0.0], [1.0]], TimeGrid(0, 1, 10), 100, RngStream(6), crn=True)
    np.testing.assert_allclose(b.endpoints[:, 1, 0] - b.endpoints[:, 0, 0], 1.0, atol=1e-13)


# -- weights -----------------------------------------------------------------

def test_zero_coefficients_give_unit_weight():
    bundle = simulate_paths(ConstantField(1.0), 0.0, TimeGrid(0, 1, 30), 50, RngStream(7))
    acc = accumulate_weight(bundle, ConstantField(1.0))
    assert np.all(acc.log_stoch == 0) and np.all(acc.log_quad == 0) and np.all(acc.log_pot == 0)
    assert np.all(acc.weight == 1.0)


def test_constant_potential_gives_deterministic_weight():
    gamma = 0.37
    f = ConstantField(1.0, c=gamma)
    g = TimeGrid(0.5, 2.0, 40)
    bundle = simulate_paths(f, 0.0, g, 20, RngStream(8))
    acc = accumulate_weight(bundle, f)
    np.testing.assert_allclose(acc.log_weight, gamma * 1.5, rtol=1e-12)


def test_log_weight_is_sum_of_components():
    f = DiscontinuousField()
    bundle = simulate_paths(f, 0.1, TimeGrid(0, 1, 40), 30, RngStream(9))
    acc = accumulate_weight(bundle, f)
    np.testing.assert_array_equal(acc.log_weight, acc.log_stoch + acc.log_quad + acc.log_pot)


def test_engine_weights_match_stored_path_weights():
    f = SinField(b=0.4, c=-0.2)
    g = TimeGrid(0, 1, 25)
    bundle = simulate_paths(f, 0.2, g, 10, RngStream(10))
    acc = accumulate_weight(bundle, f)
    # recompute independently with explicit left-point formulas
    x = bundle.states[:, :-1, 0]
    db = bundle.increments[:, :, 0]
    a = 1 + 0.5 * np.sin(x)
    bs = 0.4 / np.sqrt(a)
    want = (bs * db).sum(1) - 0.5 * g.h * (bs ** 2).sum(1) - 0.2 * g.h * g.n_steps
    np.testing.assert_allclose(acc.log_weight, want, rtol=1e-12, atol=1e-13)


def test_girsanov_mean_constant_drift():
    n = 100_000
    b = run_paths(ConstantField(1.0, b=0.3), [0.0], TimeGrid(0, 1, 10), n, RngStream(11))
    m, se = weighted_mean(np.ones(n), b.log_weight[:, 0])
    assert abs(m - 1) <= 3 * se


def test_weight_overflow_is_reported():
    f = ConstantField(1.0, c=1e308)
    with pytest.raises(WeightOverflowError):
        run_paths(f, [0.0], TimeGrid(0, 10, 5), 10, RngStream(12))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.data())
def test_weight_split_is_additive(seed, data):
    f = DiscontinuousField()
    g = TimeGrid(0, 1, 60)
    traj = simulate_paths(f, 0.05, g, 1, RngStream(seed))[0]
    k = data.draw(st.integers(0, g.n_steps))
    left, right = weight_split(traj, f, k)
    whole = float(accumulate_weight(traj, f).log_weight)
    assert abs(left + right - whole) <= 1e-10


def test_weight_split_endpoints_and_range():
    f = SinField(b=0.5)
    g = TimeGrid(0, 1, 20)
    traj = simulate_paths(f, 0.0, g, 1, RngStream(13))[0]
    whole = float(accumulate_weight(traj, f).log_weight)
    assert weight_split(traj, f, 0) == (0.0, pytest.approx(whole, abs=1e-14))
    assert weight_split(traj, f, 20) == (pytest.approx(whole, abs=1e-14), 0.0)
    with pytest.raises(ValidationError):
        weight_split(traj, f, 21)


def test_step_weights_match_accumulator():
    f = SinField(b=0.5, c=0.1)
    bundle = simulate_paths(f, 0.0, TimeGrid(0, 1, 20), 5, RngStream(14))
    s, q, p = step_log_weights(bundle, f)
    acc = accumulate_weight(bundle, f)
    np.testing.assert_allclose(s.sum(1) + q.sum(1) + p.sum(1), acc.log_weight, rtol=1e-14)


# -- Feynman-Kac -------------------------------------------------------------

def test_feynman_kac_trivial_cases():
    f = ConstantField(1.0)
    est, se = feynman_kac_solve(f, lambda x: np.ones(len(x)), 0.0, 1.0, TimeGrid(0, 1, 10), 500,
                                RngStream(15))
    assert est == 1.0 and se == 0.0
    gamma = -0.3
    est, se = feynman_kac_solve(ConstantField(1.0, c=gamma), lambda x: np.ones(len(x)), 0.0, 2.0,
                                TimeGrid(0, 2, 10), 500, RngStream(15))
    assert est == pytest.approx(math.exp(gamma * 2.0), rel=1e-12)


def test_feynman_kac_drifted_mean():
    n = 100_000
    est, se = feynman_kac_solve(ConstantField(1.0, b=0.3), lambda x: x[:, 0], 0.0, 1.0,
                                TimeGrid(0, 1, 10), n, RngStream(16))
    assert abs(est - 0.3) <= 3 * se


def test_feynman_kac_grid_must_start_at_zero():
    with pytest.raises(ValidationError):
        feynman_kac_solve(ConstantField(1.0), lambda x: x[:, 0], 0.0, 1.0, TimeGrid(0.5, 1, 10),
                          10, RngStream(0))


# -- bridges -----------------------------------------------------------------

def test_pinned_drift_is_bridge_drift_for_identity():
    x = np.array([[0.2, -1.0]])
    y = np.array([1.0, 0.5])
    np.testing.assert_allclose(pinned_drift(np.eye(2), x, y, 0.4), (y - x) / 0.4, atol=1e-14)
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(pinned_drift(a, x, y, 0.4), (y - x) / 0.4, atol=1e-13)


def test_bridge_midpoint_variance():
    g = TimeGrid(0, 1, 200)
    b = simulate_bridge(ConstantField(1.0), 0.0, 0.0, g, RngStream(17), n_paths=100_000)
    mid = b.states[:, 100, 0]
    mean, cov = brownian_bridge_marginal(1.0, 0.5, 0.0, 0.0)
    assert mid.var(ddof=1) == pytest.approx(cov[0, 0], rel=0.05)
    assert abs(mid.mean() - mean[0]) <= 4 * math.sqrt(0.25 / 100_000)


def test_bridge_terminal_and_short_time_spread():
    t = 0.01
    g = TimeGrid(0, t, 50)
    f = ConstantField(1.0)
    b = simulate_bridge(f, 0.3, 0.3, g, RngStream(18), n_paths=5000)
    assert np.all(np.abs(b.states[:, -1, 0] - 0.3) <= math.sqrt(g.h) * f.lam)
    dev = np.abs(b.states[:, :, 0] - 0.3).max(axis=1)
    assert np.mean(dev <= 6 * math.sqrt(f.lam * t)) >= 0.999


def test_bridge_needs_analytic_kernel():
    with pytest.raises(UnsupportedFieldError):
        simulate_bridge(SinField(), 0.0, 0.0, TimeGrid(0, 1, 10), RngStream(0))
