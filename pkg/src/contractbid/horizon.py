"""Receding-horizon control of contract acquisition.

The controller keeps the running acquisition counts, and every replanning
interval (and whenever a contract completes) it solves a fresh plan over the
remaining time with the remaining requirements. A ``Bidder`` adapter turns the
controller into the callback used by the auction simulator.
"""
from __future__ import annotations

import csv
import logging
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import quad

from . import planner
from .errors import InfeasibleError, ParameterError
from .supply import TimeVaryingSupplyCurve
from .targeting import Contract, Decomposition

log = logging.getLogger(__name__)


class RecedingHorizonController:
    """Replans bids from the current state on a fixed cadence.

    ``mode='static'`` plans against curves averaged over the whole contract
    horizon instead of the time-varying ones. ``safety_z`` adds ``z * sqrt(rem)``
    items to contracts expiring before the next scheduled replan, which covers
    the arrival noise of the final interval.
    """

    def __init__(self, contracts: Sequence[Contract], decomposition: Decomposition,
                 curves: Mapping[int, TimeVaryingSupplyCurve], replan_hours: float = 1.0,
                 mode: str = "dynamic", t_start: float = 0.0, safety_z: float = 3.0,
                 penalty: float = 1e6, method: str = "levels", bid_cap: float | None = None,
                 replan_on_fulfill: bool = True):
        if mode not in ("dynamic", "static"):
            raise ParameterError(f"unknown mode {mode!r}")
        if not replan_hours > 0:
            raise ParameterError("replan interval must be positive")
        self.contracts = list(contracts)
        self.decomposition = decomposition
        self.mode = mode
        self.replan_hours = float(replan_hours)
        self.safety_z = float(safety_z)
        self.penalty = penalty
        self.method = method
        self.bid_cap = bid_cap
        self.replan_on_fulfill = replan_on_fulfill
        self.horizon = max(c.deadline for c in self.contracts)
        if mode == "static":
            self.curves = {j: c.time_averaged(t_start, self.horizon) for j, c in curves.items()}
        else:
            self.curves = dict(curves)
        self.tau = float(t_start)
        self.t_start = float(t_start)
        self.acquired = np.zeros(len(self.contracts))
        self.requirement = np.array([c.requirement for c in self.contracts])
        self.plan: planner.BidPlan | None = None
        self.next_replan = self.tau
        self.stale = True
        self.discarded = 0
        self.trace: list[dict] = []
        self.n_replans = 0
        self._gid = {c.id: i for i, c in enumerate(self.contracts)}

    @property
    def remaining(self) -> np.ndarray:
        return np.maximum(self.requirement - self.acquired, 0.0)

    def fulfilled(self, i: int) -> bool:
        return self.acquired[i] >= self.requirement[i]

    def record_win(self, i: int, t: float) -> bool:
        """Credit one item to contract ``i``. Wins at or after its deadline are discarded."""
        if t < self.tau:
            raise ParameterError(f"win at {t} precedes controller time {self.tau}")
        self.tau = t
        if t >= self.contracts[i].deadline:
            log.warning("win for expired contract %s at t=%.3f discarded", self.contracts[i].id, t)
            self.discarded += 1
            return False
        done = self.fulfilled(i)
        self.acquired[i] += 1
        if not done and self.fulfilled(i) and self.replan_on_fulfill:
            self.stale = True
        return True

    def replan(self, t: float) -> planner.BidPlan:
        """Solve over ``[t, T]`` with the remaining requirements."""
        self.tau = max(self.tau, t)
        rem = self.remaining
        active = [i for i, c in enumerate(self.contracts) if c.deadline > t and rem[i] > 0]
        reqs = rem.copy()
        # replans sit on a fixed grid anchored at the start time
        n = np.floor((t - self.t_start) / self.replan_hours + 1e-9) + 1
        horizon_end = self.t_start + n * self.replan_hours
        for i in active:
            if self.contracts[i].deadline <= horizon_end and self.safety_z > 0:
                reqs[i] += self.safety_z * np.sqrt(rem[i])
        inst = planner.build_instance(self.contracts, self.decomposition, self.curves, t0=t,
                                      requirements=reqs, active=active, bid_cap=self.bid_cap)
        if inst.n_contracts == 0:
            plan = planner.empty_plan(inst)
        else:
            try:
                plan = planner.solve(inst, method=self.method)
            except InfeasibleError:
                log.info("t=%.2f: requirements infeasible, using best-effort plan", t)
                plan = planner.solve(inst, method=self.method, penalty=self.penalty)
        self.plan = plan
        self.stale = False
        self.next_replan = horizon_end
        self.n_replans += 1
        self._log_trace(t, plan)
        return plan

    def _log_trace(self, t, plan):
        rho = {}
        if plan.pseudo is not None:
            rho = {c.id: float(r) for c, r in zip(plan.instance.contracts, plan.pseudo.rho)}
        bids = {j: plan.bid_at(j, t) for j in range(self.decomposition.n_types)}
        for i, c in enumerate(self.contracts):
            self.trace.append({"time": t, "contract": c.id, "acquired": float(self.acquired[i]),
                               "remaining": float(self.remaining[i]),
                               "pseudo_bid": rho.get(c.id), "bids": bids})

    def ensure_plan(self, t: float):
        if self.plan is None or self.stale or t >= self.next_replan:
            self.replan(t)
        return self.plan

    def bid(self, j: int, t: float) -> float | None:
        return self.ensure_plan(t).bid_at(j, t)

    def allocation(self, j: int, t: float) -> tuple[list[int], np.ndarray]:
        """Candidate contracts and renormalized probabilities for an item of type ``j``."""
        plan = self.ensure_plan(t)
        e = plan.resource_at(j, t)
        if e is None:
            return [], np.zeros(0)
        idx, w = [], []
        for l, c in enumerate(plan.instance.contracts):
            g = plan.gamma[l, e]
            i = self._gid[c.id]
            if g > 0 and t < c.deadline and not self.fulfilled(i):
                idx.append(i)
                w.append(g)
        w = np.array(w)
        return idx, (w / w.sum() if w.size else w)

    def write_trace(self, path):
        M = self.decomposition.n_types
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time", "contract", "acquired", "remaining", "pseudo_bid"]
                        + [f"bid_type_{j}" for j in range(M)])
            for row in self.trace:
                wr.writerow([f"{row['time']:.6f}", row["contract"], row["acquired"],
                             row["remaining"], "" if row["pseudo_bid"] is None
                             else f"{row['pseudo_bid']:.6g}"]
                            + ["" if row["bids"][j] is None else f"{row['bids'][j]:.6g}"
                               for j in range(M)])


class Bidder:
    """Simulator callback: noisy bids from the controller and random allocation.

    Nominal bids get Gaussian noise ``sigma`` so the realized win rate follows the
    smoothed supply curve the plan was built on.
    """

    def __init__(self, controller: RecedingHorizonController, sigma: float, rng=None,
                 block: int = 4096):
        self.controller = controller
        self.sigma = float(sigma)
        self.rng = rng if rng is not None else np.random.default_rng()
        self._block = block
        self._noise = np.empty(0)
        self._unif = np.empty(0)
        self._pos = self._upos = 0
        self.bid_log: list[tuple] = []

    def _next_noise(self):
        if self._pos >= self._noise.size:
            self._noise = self.rng.standard_normal(self._block)
            self._pos = 0
        z = self._noise[self._pos]
        self._pos += 1
        return z

    def _next_unif(self):
        if self._upos >= self._unif.size:
            self._unif = self.rng.random(self._block)
            self._upos = 0
        u = self._unif[self._upos]
        self._upos += 1
        return u

    def bid(self, t: float, j: int) -> float | None:
        before = self.controller.n_replans
        x = self.controller.bid(j, t)
        if self.controller.n_replans != before:
            p = self.controller.plan
            rho = [] if p.pseudo is None else p.pseudo.rho
            self.bid_log.append((t, float(np.mean(rho)) if len(rho) else 0.0))
        if x is None:
            return None
        return x + self.sigma * self._next_noise() if self.sigma > 0 else x

    def on_win(self, t: float, j: int, price: float) -> str | None:
        idx, w = self.controller.allocation(j, t)
        if not idx:
            self.controller.discarded += 1
            return None
        k = int(np.searchsorted(np.cumsum(w), self._next_unif() * w.sum(), side="right"))
        i = idx[min(k, len(idx) - 1)]
        if not self.controller.record_win(i, t):
            return None
        return self.controller.contracts[i].id


# ---------------------------------------------------------------------------
# single-contract analytics


def exponential_rh_bid(C: float, c: float, T: float, tau: float, lam0: float,
                       gamma: float = 1.0, cap: float = np.inf) -> float:
    """Receding-horizon bid for ``W(x) = lam0 (1 - exp(-gamma x))``."""
    if tau >= T:
        raise ParameterError("no time remaining")
    ratio = (C - c) / (lam0 * (T - tau))
    if ratio >= 1:
        return cap
    return float(-np.log1p(-max(ratio, 0.0)) / gamma)


def expected_path(lam: Callable[[float], float], C: float, T: float, lam0: float,
                  n_steps: int = 10_000):
    """Expected acquisition path of the receding-horizon controller.

    Integrates ``c' = (lam(t)/lam0) (C - c) / (T - t)`` with fixed-step RK4 from 0
    to ``T - h``; the last point is the limit ``c(T) = C``.
    """
    if not T > 0:
        raise ParameterError("T must be positive")
    h = T / n_steps
    t = np.linspace(0.0, T, n_steps + 1)
    c = np.zeros(n_steps + 1)

    def rhs(tt, cc):
        return lam(tt) / lam0 * (C - cc) / (T - tt)

    for n in range(n_steps - 1):
        tn, cn = t[n], c[n]
        k1 = rhs(tn, cn)
        k2 = rhs(tn + h / 2, cn + h / 2 * k1)
        k3 = rhs(tn + h / 2, cn + h / 2 * k2)
        k4 = rhs(tn + h, cn + h * k3)
        c[n + 1] = cn + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    c[-1] = C
    return t, c


def closed_form_path(lam: Callable[[float], float], C: float, T: float, lam0: float, t):
    """``C [1 - exp(-(1/lam0) int_0^t lam(s)/(T - s) ds)]`` by adaptive quadrature."""
    out = []
    for tt in np.atleast_1d(t):
        if tt >= T:
            out.append(C)
            continue
        val, _ = quad(lambda s: lam(s) / (T - s), 0.0, tt, limit=200, epsabs=1e-13, epsrel=1e-12)
        out.append(C * -np.expm1(-val / lam0))
    return np.array(out)
