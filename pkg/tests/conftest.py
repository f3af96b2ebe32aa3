"""Shared builders for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from contractbid import planner
from contractbid.supply import TimeVaryingSupplyCurve
from contractbid.targeting import Contract, decompose


def exp_win(gamma: float = 1.0):
    """Win probability ``1 - exp(-gamma x)`` for ``x >= 0``, 0 below."""
    return lambda x, t=0.0: np.where(np.asarray(x) >= 0, -np.expm1(-gamma * np.maximum(x, 0)), 0.0)


def exp_curve(lam: float = 1.0, gamma: float = 1.0, lo: float = -1.0, hi: float = 40.0,
              nx: int = 20001) -> TimeVaryingSupplyCurve:
    """Time-constant ``W(x) = lam (1 - exp(-gamma x))`` on a fine grid."""
    return TimeVaryingSupplyCurve.from_functions(exp_win(gamma), lam, np.linspace(lo, hi, nx))


def random_instance(rng, gx=None):
    """Random instance with up to 3 contracts, 3 atoms and 3 deadlines."""
    gx = np.linspace(-1, 15, 2001) if gx is None else gx
    N = int(rng.integers(1, 4))
    atoms = ["a", "b", "c"]
    cs = []
    for i in range(N):
        k = int(rng.integers(1, 3))
        tg = rng.choice(atoms, k, replace=False)
        cs.append(Contract(str(i), float(rng.integers(1, 4)), float(rng.uniform(1, 4)),
                           frozenset(tg)))
    d = decompose(cs)
    curves = {}
    for j in range(d.n_types):
        th, lam, ph = rng.uniform(1, 3), rng.uniform(2, 5), rng.uniform(0, 6)
        curves[j] = TimeVaryingSupplyCurve.from_functions(
            lambda x, t, th=th: 1 - np.exp(-np.maximum(x, 0) / th * (1 + 0.3 * np.sin(t))),
            lambda t, lam=lam, ph=ph: lam * (1 + 0.5 * np.sin(t + ph)),
            gx, np.linspace(0, 4, 17))
    return planner.build_instance(cs, d, curves)


def adequate_instances(seed: int, n: int):
    """``n`` random instances that satisfy the per-type adequate-supply condition."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        inst = random_instance(rng)
        if all(r["ok"] for r in planner.check_adequate_supply(inst)):
            out.append(inst)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def poisson_times(rate, t_end: float, rng, peak: float) -> np.ndarray:
    """Inhomogeneous Poisson arrivals on ``[0, t_end)`` by thinning."""
    n = rng.poisson(peak * t_end)
    t = np.sort(rng.uniform(0.0, t_end, n))
    return t[rng.random(n) * peak <= rate(t)]


def write_log(path, times_h, tags, prices, epoch_h: float = 0.0):
    """Auction log CSV with epoch-second timestamps."""
    with open(path, "w") as fh:
        fh.write("timestamp,user_tag,market_price\n")
        for t, g, p in zip(times_h, tags, prices):
            fh.write(f"{(t + epoch_h) * 3600.0:.3f},{g},{p:.0f}\n")
