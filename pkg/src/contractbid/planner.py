"""Optimal piecewise-constant bid and allocation plans.

Between consecutive contract deadlines the optimal bids are constant, so the
continuous-time problem reduces to a finite convex program over "resources"
``(type j, period k)``: choose supplies ``s_e`` and flows ``r_ie`` so that every
contract receives its requirement, minimizing ``sum_e Lambda_e(s_e)``.

The dual has one pseudo-bid ``rho_i >= 0`` per contract and the optimal bid on a
resource is the largest pseudo-bid among the contracts it can serve. The default
solver computes the dual optimum exactly by peeling off "levels": the set of
contracts whose joint requirement forces the highest uniform price on the
resources they can use.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .curves import MonotoneCurve
from .errors import ConfigurationError, InfeasibleError, ParameterError, SizeError, SolverError
from .flow import bipartite_flow
from .supply import TimeVaryingSupplyCurve
from .targeting import Contract, Decomposition

log = logging.getLogger(__name__)

ENUM_LIMIT = 12
TIE_RTOL = 1e-9


# ---------------------------------------------------------------------------
# instance


@dataclass(frozen=True, eq=False)
class PlanningInstance:
    """Aggregated problem data.

    Contracts are indexed locally ``0..N-1`` (``contract_index`` maps back to the
    caller's list). Resource ``e`` is the pair ``resources[e] = (j, k)`` with ``j``
    a type index of the decomposition and ``k`` a period index.
    """

    contracts: tuple
    contract_index: tuple
    requirement: np.ndarray
    t0: float
    breakpoints: np.ndarray
    grid_x: np.ndarray
    resources: tuple
    eligible: np.ndarray
    W: np.ndarray
    decomposition: Decomposition
    source_curves: Mapping = field(repr=False, default=None)

    @property
    def n_contracts(self) -> int:
        return len(self.contracts)

    @property
    def n_resources(self) -> int:
        return len(self.resources)

    @property
    def n_periods(self) -> int:
        return len(self.breakpoints)

    @property
    def bid_cap(self) -> float:
        return float(self.grid_x[-1])

    @property
    def capacity(self) -> np.ndarray:
        return self.W[:, -1]

    @property
    def period_bounds(self) -> list:
        edges = np.concatenate([[self.t0], self.breakpoints])
        return list(zip(edges[:-1], edges[1:]))

    def curve(self, e: int) -> MonotoneCurve:
        cache = self.__dict__.setdefault("_curves", {})
        if e not in cache:
            cache[e] = MonotoneCurve(self.grid_x, self.W[e])
        return cache[e]

    def values_at(self, prices) -> np.ndarray:
        """``Wbar_e(price_e)`` for every resource."""
        return np.array([np.interp(p, self.grid_x, w, left=0.0, right=w[-1])
                         for p, w in zip(prices, self.W)])


def _common_grid(rows_grids, bid_cap):
    grids = [g for g, _ in rows_grids]
    same = all(g.shape == grids[0].shape and np.array_equal(g, grids[0]) for g in grids)
    grid = grids[0] if same else np.linspace(min(g[0] for g in grids),
                                             max(g[-1] for g in grids),
                                             max(g.size for g in grids))
    if bid_cap is not None and bid_cap < grid[-1]:
        if bid_cap <= grid[0]:
            raise ParameterError(f"bid cap {bid_cap} is below the bid grid")
        grid = np.concatenate([grid[grid < bid_cap], [bid_cap]])
        same = False
    if same:
        return grid, [r for _, r in rows_grids]
    return grid, [np.maximum.accumulate(np.interp(grid, g, r, left=0.0, right=r[-1]))
                  for g, r in rows_grids]


def build_instance(contracts: Sequence[Contract], decomposition: Decomposition,
                   curves, t0: float = 0.0, requirements=None, active=None,
                   bid_cap: float | None = None) -> PlanningInstance:
    """Aggregate per-type supply over the periods between deadlines.

    ``curves`` maps type index to its ``TimeVaryingSupplyCurve``. ``requirements``
    overrides the contracts' ``C_i`` (e.g. remaining counts); ``active`` restricts
    the instance to a subset of contract indices, by default all contracts with a
    deadline after ``t0``.
    """
    reqs = np.array([c.requirement for c in contracts] if requirements is None
                    else requirements, dtype=float)
    if reqs.shape != (len(contracts),) or np.any(reqs < 0):
        raise ParameterError("requirements must be one non-negative value per contract")
    if active is None:
        active = [i for i, c in enumerate(contracts) if c.deadline > t0]
    active = sorted(i for i in active if contracts[i].deadline > t0)
    local = {g: l for l, g in enumerate(active)}
    deadlines = np.array([contracts[i].deadline for i in active])
    breakpoints = np.unique(deadlines)
    starts = np.concatenate([[t0], breakpoints[:-1]])

    resources, elig_rows, rows = [], [], []
    for j, members in enumerate(decomposition.B):
        mine = [i for i in members if i in local]
        if not mine:
            continue
        try:
            curve = curves[j]
        except (KeyError, IndexError):
            raise ConfigurationError(f"no supply curve for item type {j}") from None
        if curve is None:
            raise ConfigurationError(f"no supply curve for item type {j}")
        Tj = max(contracts[i].deadline for i in mine)
        for k, (a, b) in enumerate(zip(starts, breakpoints)):
            if b > Tj:
                break
            el = np.zeros(len(active), dtype=bool)
            for i in mine:
                if contracts[i].deadline >= b:
                    el[local[i]] = True
            resources.append((j, k))
            elig_rows.append(el)
            rows.append((curve.grid_x, curve.integrated_supply(a, b)))

    if rows:
        grid, W = _common_grid(rows, bid_cap)
        W = np.array([np.maximum.accumulate(w) for w in W])
        W = W + 1e-12 * np.maximum(W[:, -1:], 1e-300) * np.linspace(0, 1, grid.size)
    else:
        grid, W = np.array([0.0, 1.0]), np.zeros((0, 2))
    eligible = (np.array(elig_rows).T if elig_rows
                else np.zeros((len(active), 0), dtype=bool))
    return PlanningInstance(tuple(contracts[i] for i in active), tuple(active),
                            reqs[active], float(t0), breakpoints, grid, tuple(resources),
                            eligible, W, decomposition, curves)


# ---------------------------------------------------------------------------
# solution containers


@dataclass
class PseudoBids:
    rho: np.ndarray
    mu: np.ndarray
    dual_value: float
    iterations: int = 0
    converged: bool = True
    method: str = "levels"
    history: list = field(default_factory=list)


@dataclass
class FlowPlan:
    s: np.ndarray
    r: np.ndarray
    shortfall: np.ndarray
    flags: dict = field(default_factory=dict)


@dataclass
class BidPlan:
    """Piecewise-constant bids ``x[e]`` and allocation probabilities ``gamma[i, e]``."""

    instance: PlanningInstance
    bids: np.ndarray
    gamma: np.ndarray
    supply: np.ndarray
    cost: float
    pseudo: PseudoBids | None = None
    flow: FlowPlan | None = None
    dual_gap: float = 0.0

    def period_at(self, t: float) -> int | None:
        k = int(np.searchsorted(self.instance.breakpoints, t, side="right"))
        return k if k < self.instance.n_periods else None

    def resource_at(self, j: int, t: float) -> int | None:
        k = self.period_at(t)
        if k is None:
            return None
        return self.__dict__.setdefault(
            "_lookup", {jk: e for e, jk in enumerate(self.instance.resources)}).get((j, k))

    def bid_at(self, j: int, t: float) -> float | None:
        """Nominal bid for type ``j`` at time ``t`` or ``None`` when not bidding."""
        e = self.resource_at(j, t)
        return None if e is None else float(self.bids[e])

    def bid_matrix(self) -> list:
        """``x[j][k]`` over all decomposition types, ``None`` where not admissible."""
        inst = self.instance
        out = [[None] * inst.n_periods for _ in range(inst.decomposition.n_types)]
        for e, (j, k) in enumerate(inst.resources):
            out[j][k] = float(self.bids[e])
        return out

    def gamma_tensor(self) -> list:
        inst = self.instance
        M, K = inst.decomposition.n_types, inst.n_periods
        out = []
        for i in range(inst.n_contracts):
            g = [[0.0] * K for _ in range(M)]
            for e, (j, k) in enumerate(inst.resources):
                g[j][k] = float(self.gamma[i, e])
            out.append(g)
        return out

    def to_dict(self) -> dict:
        inst = self.instance
        d = {
            "start_hours": inst.t0,
            "breakpoints_hours": inst.breakpoints.tolist(),
            "contracts": [c.id for c in inst.contracts],
            "bids": self.bid_matrix(),
            "gamma": self.gamma_tensor(),
            "pseudo_bids": None if self.pseudo is None else self.pseudo.rho.tolist(),
            "dual_gap": self.dual_gap,
            "solver_iterations": 0 if self.pseudo is None else self.pseudo.iterations,
            "expected_cost": self.cost,
            "shortfall": [] if self.flow is None else self.flow.shortfall.tolist(),
            "flags": {} if self.flow is None else {k: v for k, v in self.flow.flags.items()
                                                   if isinstance(v, (bool, int, float, str))},
        }
        return d

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def empty_plan(instance: PlanningInstance) -> BidPlan:
    R, N = instance.n_resources, instance.n_contracts
    return BidPlan(instance, np.zeros(R), np.zeros((N, R)), np.zeros(R), 0.0)


# ---------------------------------------------------------------------------
# dual


def pseudo_to_mu(instance: PlanningInstance, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if instance.n_resources == 0:
        return np.zeros(0)
    masked = np.where(instance.eligible, rho[:, None], -np.inf)
    return np.max(masked, axis=0) if rho.size else np.zeros(instance.n_resources)


def dual_value(instance: PlanningInstance, rho) -> float:
    """``g(rho) = sum_e [fbar_e(mu_e) - mu_e Wbar_e(mu_e)] + sum_i rho_i C_i``."""
    rho = np.asarray(rho, dtype=float)
    mu = pseudo_to_mu(instance, rho)
    total = float(rho @ instance.requirement)
    for e in range(instance.n_resources):
        total += float(instance.curve(e).dual_term(mu[e]))
    return total


def _tol(p):
    return TIE_RTOL * max(1.0, abs(p))


def _subset_prices(instance, rows_left, req, cand, res_mask, penalty):
    """Price level and deficit key of every subset of ``cand`` (bitmask enumeration)."""
    n = len(cand)
    masks = np.arange(1, 1 << n)
    member = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    elig = instance.eligible[np.ix_(cand, np.nonzero(res_mask)[0])]
    nbr = (member.astype(int) @ elig.astype(int)) > 0
    csum = member @ req[cand]
    rows = nbr.astype(float) @ rows_left
    grid = instance.grid_x
    price = np.empty(masks.size)
    deficit = np.zeros(masks.size)
    for m in range(masks.size):
        row = rows[m]
        if csum[m] <= 0:
            price[m] = 0.0
        elif csum[m] < row[-1]:
            price[m] = max(float(np.interp(csum[m], row, grid)), 0.0)
        else:
            price[m] = np.inf
    if penalty is not None:
        hit = price >= penalty
        if np.any(hit):
            at_w = nbr[hit].astype(float) @ np.array(
                [np.interp(penalty, grid, r, left=0.0, right=r[-1]) for r in rows_left])
            deficit[hit] = (csum[hit] - at_w) / csum[hit]
            price = np.minimum(price, penalty)
    return member, price, deficit


def _levels_enum(instance, cand, res_mask, req, penalty):
    rows_left = instance.W[res_mask]
    member, price, deficit = _subset_prices(instance, rows_left, req, cand, res_mask, penalty)
    if penalty is None and np.isinf(price).any():
        inf = np.nonzero(np.isinf(price))[0]
        bad = member[inf[np.argmin(member[inf].sum(axis=1))]]
        ids = [instance.contracts[cand[i]].id for i in np.nonzero(bad)[0]]
        raise InfeasibleError(f"contracts {ids} cannot be supplied from their item types")
    p = price.max()
    top = price >= p - _tol(p)
    if penalty is not None and p >= penalty - _tol(penalty):
        d = deficit[top].max()
        top &= deficit >= d - 1e-9
    chosen = member[top].any(axis=0)
    return p, [cand[i] for i in np.nonzero(chosen)[0]]


def _levels_bisect(instance, cand, res_mask, req, penalty):
    ridx = np.nonzero(res_mask)[0]
    elig = instance.eligible[np.ix_(cand, ridx)]
    demand = req[cand]
    need = demand.sum()
    hi = instance.bid_cap if penalty is None else min(penalty, instance.bid_cap)

    def served(p):
        sup = np.array([np.interp(p, instance.grid_x, instance.W[e], left=0.0,
                                  right=instance.W[e, -1]) for e in ridx])
        r, reach = bipartite_flow(demand, sup, elig)
        return r.sum(), reach

    if served(0.0)[0] >= need * (1 - 1e-12):
        return 0.0, list(cand)
    tot, reach = served(hi)
    if tot < need * (1 - 1e-12):
        if penalty is None and hi >= instance.bid_cap:
            ids = [instance.contracts[cand[i]].id for i in np.nonzero(reach)[0]]
            raise InfeasibleError(f"contracts {ids} cannot be supplied from their item types")
        return (penalty if penalty is not None else hi), [cand[i] for i in np.nonzero(reach)[0]]
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if served(mid)[0] >= need * (1 - 1e-12):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    _, reach = served(hi - max(_tol(hi), 4 * (hi - lo)))
    chosen = [cand[i] for i in np.nonzero(reach)[0]]
    return hi, chosen or list(cand)


def _solve_levels(instance, penalty=None, method="levels"):
    N = instance.n_contracts
    rho = np.zeros(N)
    left = list(range(N))
    res_mask = np.ones(instance.n_resources, dtype=bool)
    req = instance.requirement
    n_levels = 0
    while left:
        if len(left) <= ENUM_LIMIT and method != "bisect":
            p, D = _levels_enum(instance, left, res_mask, req, penalty)
        else:
            p, D = _levels_bisect(instance, left, res_mask, req, penalty)
        n_levels += 1
        rho[D] = p
        used = instance.eligible[D].any(axis=0)
        res_mask &= ~used
        left = [i for i in left if i not in set(D)]
    return rho, n_levels


def solve_dual(instance: PlanningInstance, method: str = "levels", penalty: float | None = None,
               tol: float = 1e-6, max_iter: int = 50_000, step=(1.0, 10.0)) -> PseudoBids:
    """Maximize the dual function over ``rho >= 0``.

    ``method='levels'`` is exact (level decomposition, bisection with max-flow
    for large contract sets); ``'supergradient'`` runs projected supergradient
    ascent with diminishing steps and iterate averaging. With ``penalty`` set the
    pseudo-bids are capped at the shortfall price and infeasibility is allowed;
    otherwise an infeasible instance raises ``InfeasibleError``.
    """
    if penalty is not None and not penalty > 0:
        raise ParameterError("penalty weight must be positive")
    if instance.n_contracts == 0:
        return PseudoBids(np.zeros(0), np.zeros(instance.n_resources), 0.0)
    if method in ("levels", "bisect"):
        rho, n = _solve_levels(instance, penalty, method)
        return PseudoBids(rho, pseudo_to_mu(instance, rho), dual_value(instance, rho), n,
                          True, method)
    if method == "supergradient":
        return _supergradient(instance, penalty, tol, max_iter, step)
    raise ParameterError(f"unknown dual method {method!r}")


def _supergradient(instance, penalty, tol, max_iter, step):
    a, b = step
    N = instance.n_contracts
    C = instance.requirement
    scale = instance.bid_cap
    hi = np.inf if penalty is None else penalty
    rho = np.zeros(N)
    avg = np.zeros(N)
    history = []
    best = -np.inf
    worse_run = 0
    last_gap = np.inf
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        mu = pseudo_to_mu(instance, rho)
        s = instance.values_at(np.minimum(mu, instance.bid_cap))
        tie = instance.eligible & (rho[:, None] >= mu[None, :] - TIE_RTOL * np.maximum(1, mu))
        share = tie / np.maximum(tie.sum(axis=0), 1)
        g = C - share @ s
        gn = np.max(np.abs(g))
        if gn == 0:
            avg = rho.copy()
            break
        rho = np.clip(rho + scale * a / (b + it) * g / gn, 0.0, hi)
        avg += (rho - avg) / it
        if it % 100 == 0 or it == max_iter:
            dv = dual_value(instance, avg)
            best = max(best, dv)
            history.append(best)
            try:
                _, primal = _repaired_primal(instance, avg, penalty)
            except InfeasibleError:
                primal = np.inf
            gap = (primal - dv) / max(1.0, abs(primal)) if np.isfinite(primal) else np.inf
            if gap <= tol:
                break
            worse_run = worse_run + 1 if gap > last_gap else 0
            last_gap = gap
            if worse_run >= 100:
                raise SolverError("supergradient ascent diverging",
                                  {"iterations": it, "gap": gap, "rho": avg.tolist()})
    converged = gap <= tol
    if not converged:
        log.warning("supergradient stopped at %d iterations with gap %.3g", it, gap)
    return PseudoBids(avg, pseudo_to_mu(instance, avg), dual_value(instance, avg), it,
                      converged, "supergradient", history)


def _repaired_primal(instance, rho, penalty):
    """Feasible plan near ``rho``: raise all pseudo-bids uniformly until routable."""
    C = instance.requirement
    hi = instance.bid_cap if penalty is None else min(penalty, instance.bid_cap)

    def attempt(theta):
        mu = np.minimum(pseudo_to_mu(instance, rho + theta), hi)
        s = instance.values_at(mu)
        r, _ = bipartite_flow(C, s, instance.eligible)
        return r, r.sum(axis=1)

    r, got = attempt(0.0)
    if np.any(got < C * (1 - 1e-9)):
        r_hi, got_hi = attempt(hi)
        if np.any(got_hi < C * (1 - 1e-9)) and penalty is None:
            raise InfeasibleError("requirements exceed supply")
        lo, up = 0.0, hi
        for _ in range(60):
            mid = 0.5 * (lo + up)
            r_m, got_m = attempt(mid)
            if np.all(got_m >= C * (1 - 1e-9)):
                up = mid
            else:
                lo = mid
        r, got = attempt(up)
    s = r.sum(axis=0)
    cost = sum(float(instance.curve(e).acquisition(s[e], clamp=True))
               for e in range(instance.n_resources))
    if penalty is not None:
        cost += penalty * float(np.maximum(C - got, 0).sum())
    return r, cost


# ---------------------------------------------------------------------------
# primal recovery


def recover_primal(instance: PlanningInstance, pseudo: PseudoBids,
                   penalty: float | None = None) -> FlowPlan:
    """Supplies ``s = Wbar(mu)`` and flows routed on the argmax support of ``mu``."""
    N, R = instance.n_contracts, instance.n_resources
    rho = np.asarray(pseudo.rho, dtype=float)
    C = instance.requirement
    mu = pseudo_to_mu(instance, rho)
    s = instance.values_at(np.minimum(mu, instance.bid_cap))
    r = np.zeros((N, R))
    shortfall = np.zeros(N)
    flags = {"fallback": False}
    cap_price = None if penalty is None else min(penalty, instance.bid_cap)
    done = np.zeros(R, dtype=bool)
    seen = np.zeros(N, dtype=bool)
    for p in sorted(set(rho.tolist()), reverse=True):
        L = np.nonzero((np.abs(rho - p) <= _tol(p)) & ~seen)[0]
        if L.size == 0:
            continue
        seen[L] = True
        E = np.nonzero((np.abs(mu - p) <= _tol(p)) & ~done)[0]
        done[E] = True
        sub = instance.eligible[np.ix_(L, E)]
        rr, _ = bipartite_flow(C[L], s[E], sub)
        got = rr.sum(axis=1)
        if p > 0:
            s[E] = rr.sum(axis=0)
        else:
            left = s[E] - rr.sum(axis=0)
            cnt = sub.sum(axis=0)
            rr = rr + np.where(sub, np.maximum(left, 0) / np.maximum(cnt, 1), 0.0)
        r[np.ix_(L, E)] = rr
        short = np.maximum(C[L] - got, 0.0)
        if p > 0 and np.any(short > 1e-9 * np.maximum(C[L], 1)):
            if cap_price is not None and p >= penalty - _tol(penalty):
                shortfall[L] = short
            else:
                flags["fallback"] = True
    if flags["fallback"]:
        log.warning("argmax support could not route all requirements; using full eligibility flow")
        s = instance.values_at(np.minimum(mu, instance.bid_cap))
        r, _ = bipartite_flow(C, s, instance.eligible)
        s = r.sum(axis=0)
        shortfall = np.maximum(C - r.sum(axis=1), 0.0)
    flags["residual"] = float(np.max(np.abs(np.minimum(r.sum(axis=1) - C, 0) + shortfall),
                                     initial=0.0))
    return FlowPlan(s, r, shortfall, flags)


def plan_cost(instance: PlanningInstance, s, clamp=True) -> float:
    return float(sum(instance.curve(e).acquisition(s[e], clamp=clamp)
                     for e in range(instance.n_resources)))


def plan_from_flow(instance: PlanningInstance, flow: FlowPlan, pseudo: PseudoBids | None = None,
                   penalty: float | None = None) -> BidPlan:
    """Bids ``x_e = Wbar_e^{-1}(s_e)`` and allocation ``gamma = r / s``."""
    R = instance.n_resources
    bids = np.empty(R)
    for e in range(R):
        bids[e] = instance.curve(e).inverse(flow.s[e], clamp=True)
    col = flow.r.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(col[None, :] > 0, flow.r / col[None, :], 0.0)
    cost = plan_cost(instance, flow.s)
    if penalty is not None:
        cost += penalty * float(flow.shortfall.sum())
    gap = 0.0
    if pseudo is not None:
        gap = (cost - pseudo.dual_value) / max(1.0, abs(cost))
    return BidPlan(instance, bids, gamma, np.asarray(flow.s), cost, pseudo, flow, gap)


def solve(instance: PlanningInstance, method: str = "levels", penalty: float | None = None,
          **opts) -> BidPlan:
    """Dual solve, primal recovery and bid conversion in one call."""
    if instance.n_contracts == 0 or instance.n_resources == 0:
        return empty_plan(instance)
    pseudo = solve_dual(instance, method=method, penalty=penalty, **opts)
    if method == "supergradient":
        r, _ = _repaired_primal(instance, pseudo.rho, penalty)
        got = r.sum(axis=1)
        flow = FlowPlan(r.sum(axis=0), r, np.maximum(instance.requirement - got, 0.0),
                        {"fallback": True, "repaired": True})
    else:
        flow = recover_primal(instance, pseudo, penalty)
    return plan_from_flow(instance, flow, pseudo, penalty)


def penalty_solve(instance: PlanningInstance, weight: float, **opts) -> FlowPlan:
    """Best-effort plan: shortfall is allowed at price ``weight`` per item."""
    if not weight > 0:
        raise ParameterError("penalty weight must be positive")
    if instance.n_resources == 0:
        return FlowPlan(np.zeros(0), np.zeros((instance.n_contracts, 0)),
                        instance.requirement.copy(), {})
    pseudo = solve_dual(instance, penalty=weight, **opts)
    return recover_primal(instance, pseudo, penalty=weight)


def static_plan(instance: PlanningInstance, method: str = "levels",
                penalty: float | None = None) -> BidPlan:
    """Plan against curves averaged over the whole horizon.

    Every type's supply is replaced by its average over ``[t0, T_max]`` and the
    resulting time-constant problem is solved; the plan is then applied as is.
    """
    if instance.source_curves is None:
        raise ConfigurationError("instance carries no source curves")
    return solve(static_instance(instance), method=method, penalty=penalty)


def static_instance(instance: PlanningInstance, window=None) -> PlanningInstance:
    t0, t1 = window if window is not None else (instance.t0, float(instance.breakpoints[-1]))
    used = {j for j, _ in instance.resources}
    avg = {j: instance.source_curves[j].time_averaged(t0, t1) for j in used}
    contracts = list(instance.contracts)
    return build_instance(contracts, _restrict(instance.decomposition, instance.contract_index),
                          avg, t0=instance.t0, requirements=instance.requirement,
                          bid_cap=instance.bid_cap)


def _restrict(d: Decomposition, index) -> Decomposition:
    """Re-index a decomposition to the contracts listed in ``index``."""
    pos = {g: l for l, g in enumerate(index)}
    B = tuple(frozenset(pos[i] for i in b if i in pos) for b in d.B)
    A = tuple(d.A[g] for g in index)
    return Decomposition(d.types, A, B, d.type_deadline)


# ---------------------------------------------------------------------------
# oracles and diagnostics


def single_contract_bid(C: float, T: float, curve: TimeVaryingSupplyCurve, t: float = 0.0) -> float:
    """Closed-form optimal bid for one contract on a time-constant curve."""
    if not T > 0 or C < 0:
        raise ParameterError("need T > 0 and C >= 0")
    sl = curve.slice(t)
    rate = C / T
    if rate >= sl.bound:
        return sl.x_max
    return float(sl.inverse(rate))


def check_adequate_supply(instance: PlanningInstance) -> list[dict]:
    """Compare each type's reachable supply before its first deadline with its demand."""
    d = instance.decomposition
    out = []
    local = {g: l for l, g in enumerate(instance.contract_index)}
    for j, members in enumerate(d.B):
        mine = [local[i] for i in members if i in local]
        if not mine or instance.source_curves is None:
            continue
        tau = min(instance.contracts[i].deadline for i in mine)
        demand = float(instance.requirement[mine].sum())
        supply = instance.source_curves[j].total_bound(instance.t0, tau)
        out.append({"type": j, "tau": tau, "supply": supply, "demand": demand,
                    "margin": supply - demand, "ok": bool(supply > demand)})
    return out


def brute_force_solve(instance: PlanningInstance, resolution: int = 128,
                      max_points: int = 1 << 21) -> tuple[FlowPlan, float, float]:
    """Grid search over supplies with a Hall-condition feasibility test.

    Returns ``(flow, cost, cell_error)``. ``cell_error`` bounds the cost change
    from moving every supply by one final grid cell. Raises ``InfeasibleError``
    when no grid point is feasible.
    """
    d = instance.decomposition
    if instance.n_contracts > 3 or d.n_types > 3 or instance.n_periods > 3:
        raise SizeError("brute force is limited to 3 contracts, 3 types and 3 periods")
    if resolution < 64:
        raise ParameterError("resolution must be at least 64")
    N, R = instance.n_contracts, instance.n_resources
    C = instance.requirement
    top = instance.capacity * (1 - 1e-9)
    subsets = [np.array(S) for n in range(1, N + 1) for S in itertools.combinations(range(N), n)]
    nbrs = [instance.eligible[S].any(axis=0) for S in subsets]
    need = [C[S].sum() for S in subsets]
    for S, nb, c in zip(subsets, nbrs, need):
        if top[nb].sum() < c:
            raise InfeasibleError(f"contracts {S.tolist()} exceed available supply")

    def search(lo, hi, q):
        axes = [np.linspace(l, h, q) for l, h in zip(lo, hi)]
        costs = [np.asarray(instance.curve(e).acquisition(axes[e], clamp=True))
                 for e in range(R)]
        best = (np.inf, None)
        total = q ** R
        chunk = max(1, (1 << 18))
        for a in range(0, total, chunk):
            idx = np.array(np.unravel_index(np.arange(a, min(total, a + chunk)), (q,) * R))
            pts = np.array([axes[e][idx[e]] for e in range(R)])
            ok = np.ones(idx.shape[1], dtype=bool)
            for nb, c in zip(nbrs, need):
                ok &= pts[nb].sum(axis=0) >= c * (1 - 1e-12)
            if not ok.any():
                continue
            cost = sum(costs[e][idx[e]] for e in range(R))
            cost = np.where(ok, cost, np.inf)
            m = int(np.argmin(cost))
            if cost[m] < best[0]:
                best = (float(cost[m]), pts[:, m])
        return best

    cell = top / (resolution - 1)
    if resolution ** R <= max_points:
        best_cost, s = search(np.zeros(R), top, resolution)
    else:
        q = max(3, int(max_points ** (1.0 / R)))
        lo, hi = np.zeros(R), top.copy()
        best_cost, s = search(lo, hi, q)
        while s is not None and np.any((hi - lo) / (q - 1) > cell):
            width = (hi - lo) / (q - 1)
            lo = np.maximum(s - 1.5 * width, 0.0)
            hi = np.minimum(s + 1.5 * width, top)
            c2, s2 = search(lo, hi, q)
            if s2 is not None and c2 <= best_cost:
                best_cost, s = c2, s2
    if s is None:
        raise InfeasibleError("no feasible grid point")
    r, _ = bipartite_flow(C, s, instance.eligible)
    err = float(sum(instance.curve(e).acquisition_derivative(min(s[e] + cell[e], top[e]))
                    * cell[e] for e in range(R)))
    return FlowPlan(s, r, np.maximum(C - r.sum(axis=1), 0.0), {}), best_cost, err
