import json

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from contractbid.curves import MonotoneCurve
from contractbid.errors import ConfigurationError, ParameterError, SupplyExceededError
from contractbid.supply import (MarketParticipant, RawWinCurve, SteadyStateMarket,
                                TimeVaryingSupplyCurve, fixed_market_win_prob, smooth_curve,
                                steady_state_win_prob)

from conftest import exp_curve, exp_win


# -- market models ----------------------------------------------------------


def test_fixed_market_empty_is_one():
    assert fixed_market_win_prob([], 0.0) == 1.0


def test_fixed_market_single_participant_matches_monte_carlo(rng):
    p = [MarketParticipant(5.0, 0.5)]
    assert fixed_market_win_prob(p, 4.0) == pytest.approx(0.5)
    present = rng.random(200_000) < 0.5
    assert abs(np.mean(~present) - 0.5) < 4 * np.sqrt(0.25 / 200_000)


def test_fixed_market_tie_goes_to_bidder():
    assert fixed_market_win_prob([MarketParticipant(5.0, 0.5)], 5.0) == 1.0


def test_fixed_market_negative_bid_and_monotone():
    ps = [MarketParticipant(b, r) for b, r in [(1, 0.3), (2, 0.6), (4, 0.9)]]
    x = np.linspace(-1, 5, 200)
    w = fixed_market_win_prob(ps, x)
    assert np.all(w[x < 0] == 0)
    assert np.all(np.diff(w) >= 0) and w[-1] == 1.0
    assert np.all((w >= 0) & (w <= 1))


@pytest.mark.parametrize("bid,rate", [(-1.0, 0.5), (1.0, 0.0), (1.0, 1.0)])
def test_participant_validation(bid, rate):
    with pytest.raises(ParameterError):
        MarketParticipant(bid, rate)


def test_steady_state_examples():
    cdf = lambda x: np.clip(np.asarray(x) / 10.0, 0, 1)
    assert steady_state_win_prob(SteadyStateMarket(0.0, cdf, 0.5), 3.0) == 1.0
    assert steady_state_win_prob(SteadyStateMarket(5.0, cdf, 0.5), 12.0) == 1.0
    m = SteadyStateMarket(2.0, lambda x: np.zeros_like(np.asarray(x, dtype=float)), 0.5)
    assert steady_state_win_prob(m, 0.0) == pytest.approx(np.exp(-1.0), abs=1e-12)
    x = np.linspace(0, 20, 50)
    w = SteadyStateMarket(3.0, cdf, 0.4).win_prob(x)
    assert np.all(np.diff(w) >= 0) and w[-1] == pytest.approx(1.0)


def test_steady_state_validation():
    with pytest.raises(ParameterError):
        SteadyStateMarket(-1.0, lambda x: x, 0.5)
    with pytest.raises(ParameterError):
        SteadyStateMarket(1.0, lambda x: x, 1.0)


# -- smoothing --------------------------------------------------------------


def test_smoothed_step_at_jump_is_half():
    raw = RawWinCurve([1.0, 2.0], [1.0, 1.0], kind="step")
    c = smooth_curve(raw, 0.1, x_max=3.0, nx=2001)
    assert c.value(1.0) == pytest.approx(0.5, abs=1e-6)
    # oracle: numerical quadrature of the convolution
    val, _ = quad(lambda u: float(u >= 0) * norm.pdf(u, scale=0.1), -1, 1, points=[0.0])
    assert c.value(1.0) == pytest.approx(val, abs=1e-6)


def test_smoothing_zero_curve_stays_zero():
    raw = RawWinCurve([0.0, 5.0], [0.0, 0.0])
    c = smooth_curve(raw, 0.5)
    assert np.all(c.w == 0)


def test_smoothing_exponential_uniform_bound():
    g = np.linspace(0, 10, 5001)
    raw = RawWinCurve(g, -np.expm1(-g))
    c = smooth_curve(raw, 0.01, x_max=10.0, nx=20001)
    x = np.linspace(0.5, 5, 400)
    assert np.max(np.abs(c.value(x) - (1 - np.exp(-x)))) < 0.01


def test_smoothing_rejects_bad_sigma():
    raw = RawWinCurve([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(ParameterError):
        smooth_curve(raw, 0.0)
    with pytest.raises(ParameterError):
        smooth_curve(raw, -1.0)


def test_smoothing_grid_extends_below_zero():
    raw = RawWinCurve([0.0, 1.0], [0.5, 1.0], kind="step")
    c = smooth_curve(raw, 0.5, x_max=3.0)
    assert c.x[0] == pytest.approx(-2.0)
    assert c.value(-10.0) == 0.0
    assert np.all(np.diff(c.w) > 0)


def test_raw_curve_validation():
    with pytest.raises(ParameterError):
        RawWinCurve([0.0, 1.0], [1.0, 0.5])
    with pytest.raises(ParameterError):
        RawWinCurve([0.0, 0.0], [0.0, 1.0])


# -- evaluation, inversion, pricing -------------------------------------------


def test_invert_exponential():
    c = exp_curve()
    assert c.invert_W(0.5, 0.0) == pytest.approx(np.log(2), abs=1e-6)


def test_invert_zero_returns_left_edge():
    c = exp_curve()
    assert c.invert_W(0.0, 3.0) == pytest.approx(c.grid_x[0])


@pytest.mark.parametrize("frac", [0.1, 0.5, 0.9])
def test_round_trip(frac):
    c = exp_curve()
    s = frac * c.bound(0.0)
    assert c.eval_W(c.invert_W(s, 0.0), 0.0) == pytest.approx(s, abs=1e-8)


def test_invert_above_bound_raises():
    c = exp_curve()
    B = c.bound(0.0)
    with pytest.raises(SupplyExceededError):
        c.invert_W(B, 0.0)
    with pytest.raises(SupplyExceededError):
        c.invert_W(1.5 * B, 0.0)
    # within the relative tolerance of the bound the request is clamped
    x = c.invert_W(B * (1 + 1e-12), 0.0, clamp=True)
    assert c.eval_W(x, 0.0) == pytest.approx(B, rel=1e-12) and x <= c.grid_x[-1]
    with pytest.raises(SupplyExceededError):
        c.invert_W(1.01 * B, 0.0, clamp=True)


def test_invert_monotone():
    c = exp_curve()
    s = np.linspace(0, 0.99, 300)
    assert np.all(np.diff(c.invert_W(s, 0.0)) >= 0)


def test_expected_cost_examples():
    c = exp_curve()
    assert c.expected_cost(0.0, 0.0) == 0.0
    assert c.expected_cost(-3.0, 0.0) == 0.0
    closed = 1 - 2 * np.exp(-1)
    val, _ = quad(lambda u: u * np.exp(-u), 0, 1)
    assert c.expected_cost(1.0, 0.0) == pytest.approx(closed, abs=1e-6)
    assert closed == pytest.approx(val)
    f = c.expected_cost(np.linspace(0, 10, 100), 0.0)
    assert np.all(np.diff(f) >= 0)


def test_acquisition_cost_examples():
    c = exp_curve()
    lam0, d0 = c.acquisition_cost(0.0, 0.0)
    assert lam0 == 0.0
    closed = 0.5 * np.log(0.5) + 0.5
    val, _ = quad(lambda y: -np.log1p(-y), 0, 0.5)
    L, dL = c.acquisition_cost(0.5, 0.0)
    assert L == pytest.approx(closed, abs=1e-6)
    assert closed == pytest.approx(val)
    assert dL == pytest.approx(np.log(2), abs=1e-6)


def test_acquisition_derivative_finite_difference():
    c = exp_curve().slice(0.0)
    h = 1e-4
    for s in np.linspace(0.05, 0.9, 30):
        fd = (c.acquisition(s + h) - c.acquisition(s - h)) / (2 * h)
        assert fd == pytest.approx(c.inverse(s), abs=1e-4)


def test_acquisition_above_bound_raises():
    c = exp_curve()
    with pytest.raises(SupplyExceededError):
        c.acquisition_cost(2.0, 0.0)


# -- time aggregation ---------------------------------------------------------


def test_aggregate_constant_curve_scales():
    c = exp_curve(nx=4001)
    agg = c.aggregate(0.0, 2.0)
    x = np.linspace(0, 5, 50)
    assert np.allclose(agg.value(x), 2 * c.eval_W(x, 0.0), rtol=1e-9, atol=1e-12)
    assert np.allclose(agg.cost(x), 2 * c.expected_cost(x, 0.0), rtol=1e-9, atol=1e-12)


def test_aggregate_sinusoid_matches_analytic():
    gx = np.linspace(-1, 20, 2101)
    gt = np.linspace(0, 2 * np.pi, 97)
    c = TimeVaryingSupplyCurve.from_functions(exp_win(), lambda t: 1 + np.sin(t), gx, gt)
    agg = c.aggregate(0.0, 2 * np.pi)
    x = np.linspace(0, 10, 41)
    assert np.max(np.abs(agg.value(x) - 2 * np.pi * (1 - np.exp(-x)))) < 1e-4 * 2 * np.pi


def test_aggregate_cost_equals_time_integrated_cost():
    gx = np.linspace(-1, 20, 4001)
    gt = np.linspace(0, 6, 25)
    c = TimeVaryingSupplyCurve.from_functions(
        lambda x, t: np.where(x >= 0, -np.expm1(-np.maximum(x, 0) * (1 + 0.3 * np.sin(t))), 0),
        lambda t: 2 + np.cos(t), gx, gt)
    agg = c.aggregate(0.5, 5.5)
    for x in (0.5, 1.0, 3.0):
        direct, _ = quad(lambda t: c.expected_cost(x, t), 0.5, 5.5, points=list(gt[1:-1]),
                         limit=200)
        assert agg.cost(x) == pytest.approx(direct, rel=1e-6)


def test_aggregate_marginal_price_identity():
    gx = np.linspace(-2, 30, 3001)
    gt = np.arange(24.0)
    c = TimeVaryingSupplyCurve.from_functions(
        lambda x, t: np.where(x >= 0, -np.expm1(-np.maximum(x, 0) / (5 + 2 * np.sin(t))), 0),
        lambda t: 10 + 3 * np.sin(t / 4), gx, gt, period_hours=24.0)
    agg = c.aggregate(1.0, 9.0)
    xm = 0.5 * (agg.x[1:] + agg.x[:-1])
    sel = (xm > 0.1) & (xm < 25)
    ratio = np.diff(agg.cost(agg.x))[sel] / np.diff(agg.w)[sel]
    assert np.max(np.abs(ratio - xm[sel])) < 1e-3


def test_aggregate_rejects_empty_window():
    with pytest.raises(ParameterError):
        exp_curve(nx=101).aggregate(2.0, 2.0)


def test_aggregate_strictly_increasing():
    agg = exp_curve(nx=2001).aggregate(0, 3)
    assert np.all(np.diff(agg.w) > 0)


# -- time-varying container ---------------------------------------------------


def test_periodic_curve_wraps():
    gx = np.linspace(0, 10, 101)
    gt = np.arange(24.0)
    c = TimeVaryingSupplyCurve.from_functions(exp_win(), lambda t: 5 + np.sin(2 * np.pi * t / 24),
                                              gx, gt, period_hours=24.0)
    assert c.rate(3.3) == pytest.approx(c.rate(27.3), rel=1e-12)
    assert np.allclose(c.supply_rows([1.7]), c.supply_rows([49.7]))


def test_time_averaged_matches_mean():
    gx = np.linspace(0, 10, 101)
    gt = np.linspace(0, 10, 41)
    c = TimeVaryingSupplyCurve.from_functions(exp_win(), lambda t: 2 + np.sin(t), gx, gt)
    avg = c.time_averaged(0, 10)
    want = np.trapezoid([c.eval_W(5.0, t) for t in np.linspace(0, 10, 4001)],
                    np.linspace(0, 10, 4001)) / 10
    assert avg.eval_W(5.0, 3.0) == pytest.approx(want, rel=1e-5)


def test_combine_sums_atoms():
    gx = np.linspace(0, 10, 101)
    a = TimeVaryingSupplyCurve.from_functions(exp_win(1.0), 2.0, gx)
    b = TimeVaryingSupplyCurve.from_functions(exp_win(0.5), 3.0, gx)
    ab = TimeVaryingSupplyCurve.combine([a, b])
    x = np.linspace(0, 10, 33)
    assert np.allclose(ab.eval_W(x, 0), a.eval_W(x, 0) + b.eval_W(x, 0), atol=1e-9)
    with pytest.raises(ConfigurationError):
        TimeVaryingSupplyCurve.combine([])


def test_shape_validation():
    with pytest.raises(ParameterError):
        TimeVaryingSupplyCurve(np.linspace(0, 1, 5), [0.0], np.zeros((1, 4)), [1.0])
    with pytest.raises(ParameterError):
        TimeVaryingSupplyCurve(np.linspace(0, 1, 5), [0.0], np.ones((1, 5)), [-1.0])


def test_json_round_trip(tmp_path):
    gx = np.linspace(0, 10, 51)
    c = TimeVaryingSupplyCurve.from_functions(exp_win(), lambda t: 3 + np.sin(t), gx,
                                              np.arange(24.0), sigma=0.5, period_hours=24.0)
    p = tmp_path / "c.json"
    c.save(p)
    doc = json.loads(p.read_text())
    assert {"grid_x", "grid_t", "win_prob", "lambda", "sigma", "period_hours", "header"} <= set(doc)
    d = TimeVaryingSupplyCurve.load(p)
    assert np.array_equal(d.win_prob, c.win_prob) and d.period_hours == 24.0
    assert d.eval_W(3.0, 5.5) == c.eval_W(3.0, 5.5)
    with pytest.raises(ConfigurationError):
        TimeVaryingSupplyCurve.from_dict({"grid_x": [0, 1]})


def test_monotone_curve_validation():
    with pytest.raises(ParameterError):
        MonotoneCurve([0, 1, 2], [0, 2, 1])
    with pytest.raises(ParameterError):
        MonotoneCurve([0, 0, 1], [0, 1, 2])
