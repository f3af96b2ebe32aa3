import csv

import numpy as np
import pytest

from contractbid import planner
from contractbid.errors import ParameterError
from contractbid.horizon import (Bidder, RecedingHorizonController, closed_form_path,
                                 expected_path, exponential_rh_bid)
from contractbid.scenario import SinusoidMarket, table_contracts, type_curves
from contractbid.simulator import SyntheticSampler, bidder_rng, run
from contractbid.targeting import Contract, decompose

from conftest import exp_curve


def single(C=300.0, T=10.0, lam=100.0, z=0.0, **kw):
    cs = [Contract("a", T, C, {"x"})]
    d = decompose(cs)
    curves = {0: exp_curve(lam, hi=40.0, nx=8001)}
    return RecedingHorizonController(cs, d, curves, safety_z=z, **kw), curves


def test_record_win_counts():
    ctrl, _ = single()
    ctrl.record_win(0, 0.1)
    assert ctrl.acquired[0] == 1
    for k in range(99):
        ctrl.record_win(0, 0.2 + k * 1e-3)
    assert ctrl.acquired[0] == 100
    assert ctrl.remaining[0] == 200


def test_record_win_after_deadline_discarded():
    ctrl, _ = single(T=2.0)
    assert ctrl.record_win(0, 2.5) is False
    assert ctrl.acquired[0] == 0 and ctrl.discarded == 1
    with pytest.raises(ParameterError):
        ctrl.record_win(0, 1.0)


def test_initial_replan_matches_planner():
    cs = table_contracts()
    d = decompose(cs)
    curves = type_curves(SinusoidMarket().raw_curves(), d, sigma=2.0)
    ctrl = RecedingHorizonController(cs, d, curves)
    plan = ctrl.replan(0.0)
    ref = planner.solve(planner.build_instance(cs, d, curves))
    assert np.allclose(plan.bids, ref.bids, rtol=1e-12)
    assert plan.cost == pytest.approx(ref.cost, rel=1e-12)


@pytest.mark.parametrize("c,tau", [(0.0, 0.0), (50.0, 2.0), (120.0, 4.5), (290.0, 9.2)])
def test_single_contract_bid_is_exponential_formula(c, tau):
    ctrl, _ = single()
    ctrl.acquired[0] = c
    ctrl.replan(tau)
    want = exponential_rh_bid(300.0, c, 10.0, tau, 100.0)
    assert ctrl.plan.bids[0] == pytest.approx(want, abs=1e-5)


def test_over_demand_bids_at_cap():
    ctrl, curves = single(C=300.0, T=10.0, lam=10.0)
    ctrl.replan(0.0)
    assert ctrl.plan.bids[0] == pytest.approx(curves[0].grid_x[-1])
    assert exponential_rh_bid(300.0, 0.0, 10.0, 0.0, 10.0, cap=40.0) == 40.0


def test_expired_contracts_give_empty_plan():
    ctrl, _ = single(T=2.0)
    plan = ctrl.replan(3.0)
    assert plan.instance.n_contracts == 0 and plan.cost == 0.0
    assert ctrl.bid(0, 3.0) is None


def test_fulfilled_contract_leaves_instance():
    cs = [Contract("a", 5, 2.0, {"x"}), Contract("b", 8, 50.0, {"x"})]
    d = decompose(cs)
    ctrl = RecedingHorizonController(cs, d, {0: exp_curve(30.0, nx=4001)}, safety_z=0)
    ctrl.replan(0.0)
    ctrl.record_win(0, 0.1)
    assert not ctrl.stale
    ctrl.record_win(0, 0.2)
    assert ctrl.stale and ctrl.remaining[0] == 0
    plan = ctrl.ensure_plan(0.2)
    assert [c.id for c in plan.instance.contracts] == ["b"]
    idx, w = ctrl.allocation(0, 0.3)
    assert idx == [1] and w.tolist() == [1.0]
    rem = ctrl.remaining.copy()
    ctrl.record_win(1, 0.4)
    assert np.all(ctrl.remaining <= rem)


def test_plan_continuity_on_expected_path():
    ctrl, _ = single(C=300.0, T=10.0, lam=100.0)
    b0 = ctrl.replan(0.0).bids[0]
    for tau in (1.0, 3.0, 7.5):
        ctrl.acquired[0] = 300.0 * tau / 10.0
        assert ctrl.replan(tau).bids[0] == pytest.approx(b0, abs=1e-6)


def test_replan_grid_and_final_margin():
    ctrl, _ = single(C=300.0, T=10.0, lam=100.0, z=3.0)
    ctrl.replan(0.4)
    assert ctrl.next_replan == pytest.approx(1.0)
    ctrl.acquired[0] = 280.0
    plan = ctrl.replan(9.3)
    # the last interval adds z * sqrt(remaining) items
    assert plan.instance.requirement[0] == pytest.approx(20 + 3 * np.sqrt(20))


def test_replans_reproduce_formula_in_simulation():
    ctrl, curves = single(C=300.0, T=10.0, lam=100.0)
    sampler = SyntheticSampler(curves)
    bidder = Bidder(ctrl, 0.0, bidder_rng(4))
    res = run(sampler, bidder, 10.0, seed=4)
    assert not res.aborted
    assert ctrl.n_replans >= 9
    for row in ctrl.trace:
        rem = row["remaining"]
        if rem <= 0:
            continue
        want = exponential_rh_bid(300.0, 300.0 - rem, 10.0, row["time"], 100.0,
                                  cap=curves[0].grid_x[-1])
        assert row["bids"][0] == pytest.approx(want, abs=1e-5)


def test_static_mode_uses_averaged_curves():
    cs = table_contracts()
    d = decompose(cs)
    curves = type_curves(SinusoidMarket().raw_curves(), d, sigma=2.0)
    ctrl = RecedingHorizonController(cs, d, curves, mode="static")
    assert all(c.grid_t.size == 1 for c in ctrl.curves.values())
    ref = planner.static_plan(planner.build_instance(cs, d, curves))
    assert np.allclose(ctrl.replan(0.0).bids, ref.bids, rtol=1e-9)
    with pytest.raises(ParameterError):
        RecedingHorizonController(cs, d, curves, mode="other")


def test_bidder_allocation_and_trace(tmp_path):
    cs = [Contract("a", 3, 5.0, {"x"}), Contract("b", 3, 5.0, {"x", "y"})]
    d = decompose(cs)
    ctrl = RecedingHorizonController(cs, d, {0: exp_curve(20.0, nx=2001),
                                             1: exp_curve(20.0, nx=2001)})
    bidder = Bidder(ctrl, 0.5, np.random.default_rng(0))
    x = bidder.bid(0.1, 0)
    assert x is not None and bidder.bid_log and bidder.bid_log[0][0] == 0.1
    got = {bidder.on_win(0.1 + 0.01 * k, 0, 0.0) for k in range(20)}
    assert got <= {"a", "b", None}
    assert ctrl.acquired.sum() + ctrl.discarded == 20
    p = tmp_path / "trace.csv"
    ctrl.write_trace(p)
    rows = list(csv.reader(open(p)))
    assert rows[0][:5] == ["time", "contract", "acquired", "remaining", "pseudo_bid"]
    assert len(rows) > 1


def test_exponential_rh_bid_formula():
    for gamma in (0.5, 1.0, 2.0):
        x = exponential_rh_bid(10.0, 4.0, 5.0, 2.0, 4.0, gamma=gamma)
        assert x == pytest.approx(-np.log(1 - 6.0 / (4.0 * 3.0)) / gamma)
    with pytest.raises(ParameterError):
        exponential_rh_bid(1.0, 0.0, 1.0, 1.0, 1.0)


def test_expected_path_straight_line():
    t, c = expected_path(lambda s: 3.0, 100.0, 5.0, 3.0)
    assert c[0] == 0.0 and c[-1] == 100.0
    assert np.max(np.abs(c - 100.0 * t / 5.0)) <= 1e-4 * 100.0


def test_expected_path_matches_closed_form():
    lam0 = 2.0
    lam = lambda s: lam0 * (1 + np.sin(s))
    t, c = expected_path(lam, 50.0, 6.0, lam0)
    sel = np.arange(0, t.size - 1, 250)
    ref = closed_form_path(lam, 50.0, 6.0, lam0, t[sel])
    assert np.allclose(c[sel], ref, rtol=1e-4, atol=1e-10)
