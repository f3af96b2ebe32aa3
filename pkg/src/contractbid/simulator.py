"""Seeded discrete-event simulation of second-price auctions.

Each item type produces its own stream of auctions ``(arrival time, market
price)``. Auctions are merged through a min-heap keyed by ``(time, type)``; for
each one the bidder is asked for a bid, wins when ``bid >= price`` and then pays
the market price.
"""
from __future__ import annotations

import csv
import hashlib
import heapq
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, ParameterError
from .supply import SteadyStateMarket, TimeVaryingSupplyCurve, steady_state_win_prob
from .targeting import Contract

log = logging.getLogger(__name__)

HOURS = 24


def market_rngs(seed: int, n_types: int) -> list[np.random.Generator]:
    """Independent PCG64 streams for the market side of a run."""
    ss = np.random.SeedSequence([int(seed), 0])
    return [np.random.default_rng(s) for s in ss.spawn(n_types)]


def bidder_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 1]))


# ---------------------------------------------------------------------------
# samplers


class EmpiricalSampler:
    """Resamples observed interarrival times and prices by hour of day."""

    def __init__(self, interarrivals: Mapping, prices: Mapping, n_types: int):
        self.n_types = n_types
        self.dt = {}
        self.price = {}
        for j in range(n_types):
            for h in range(HOURS):
                d = np.asarray(interarrivals.get((j, h), []), dtype=float)
                p = np.asarray(prices.get((j, h), []), dtype=float)
                if d.size == 0 or p.size == 0:
                    raise ConfigurationError(f"empty sample bucket for type {j}, hour {h}")
                if np.any(d <= 0):
                    raise ConfigurationError(f"non-positive interarrival in type {j}, hour {h}")
                if np.any(p < 0):
                    raise ConfigurationError(f"negative price in type {j}, hour {h}")
                self.dt[j, h] = d
                self.price[j, h] = p

    def sample_event(self, t: float, j: int, rng) -> tuple[float, float]:
        h = int(np.floor(t))
        frac = t - h
        hour = (h + 1) % HOURS if rng.random() < frac else h % HOURS
        d = self.dt[j, hour]
        p = self.price[j, hour]
        return float(d[rng.integers(d.size)]), float(p[rng.integers(p.size)])

    def stream(self, j: int, t_start: float, t_end: float, rng):
        t = t_start
        while True:
            dt, price = self.sample_event(t, j, rng)
            t += dt
            if t >= t_end:
                return
            yield t, price


class SyntheticSampler:
    """Poisson arrivals with rate ``lam_j(t)`` and prices with CDF ``Wss_j(., t)``.

    Arrivals come from thinning a homogeneous process at the peak rate. Prices
    are drawn by inverting the (unsmoothed) win-probability curve, tabulated on
    a ``resolution``-hour time grid.
    """

    def __init__(self, curves: Mapping[int, TimeVaryingSupplyCurve], resolution: float = 1 / 60):
        self.curves = dict(curves)
        self.n_types = len(self.curves)
        self.resolution = float(resolution)
        self._cache: dict = {}
        for j, c in self.curves.items():
            if np.any(c.lam <= 0):
                raise ConfigurationError(f"type {j}: arrival rate must be positive")

    @classmethod
    def from_markets(cls, markets: Sequence[SteadyStateMarket], rates: Sequence[float],
                     grid_x) -> "SyntheticSampler":
        """Time-constant sampler whose price CDF is the steady-state win probability."""
        gx = np.asarray(grid_x, dtype=float)
        curves = {}
        for j, (m, lam) in enumerate(zip(markets, rates)):
            wp = np.maximum.accumulate(np.asarray(steady_state_win_prob(m, gx)))
            curves[j] = TimeVaryingSupplyCurve(gx, [0.0], wp[None, :], [lam])
        return cls(curves)

    def _tables(self, j, t0, t1):
        c = self.curves[j]
        key = (j, t0, t1)
        if key not in self._cache:
            if any(k[1:] != (t0, t1) for k in self._cache):
                self._cache = {}
            n = int(np.ceil((t1 - t0) / self.resolution)) + 2
            tg = t0 + self.resolution * np.arange(n)
            lam = np.atleast_1d(c.rate(tg))
            rows = c.supply_rows(tg) / np.maximum(lam[:, None], 1e-300)
            rows = np.clip(rows, 0.0, 1.0)
            self._cache[key] = (tg, lam, rows)
        return self._cache[key]

    def _price(self, rows, m, u, grid):
        row = rows[m]
        if u < row[0]:
            return max(grid[0], 0.0)
        if u >= row[-1]:
            return grid[-1]
        return max(float(np.interp(u, row, grid)), 0.0)

    def sample_event(self, t: float, j: int, rng) -> tuple[float, float]:
        c = self.curves[j]
        lam_max = float(np.max(c.lam)) * (1 + 1e-9)
        dt = 0.0
        while True:
            dt += rng.exponential(1.0 / lam_max)
            if rng.random() * lam_max <= c.rate(t + dt):
                break
        row = np.clip(c.supply_rows([t + dt])[0] / max(c.rate(t + dt), 1e-300), 0, 1)
        row = np.maximum.accumulate(row)
        return dt, self._price(row[None, :], 0, rng.random(), c.grid_x)

    def stream(self, j: int, t_start: float, t_end: float, rng):
        """All arrivals of type ``j`` in ``(t_start, t_end)``, generated in one batch."""
        c = self.curves[j]
        tg, lam, rows = self._tables(j, t_start, t_end)
        lam_max = float(np.max(lam)) * (1 + 1e-9)
        n = rng.poisson(lam_max * (t_end - t_start))
        times = np.sort(t_start + (t_end - t_start) * rng.random(n))
        keep = rng.random(n) * lam_max <= np.interp(times, tg, lam)
        times = times[keep]
        u = rng.random(times.size)
        m = np.clip(np.rint((times - t_start) / self.resolution).astype(int), 0, len(tg) - 1)
        prices = np.empty(times.size)
        for mm in np.unique(m):
            sel = m == mm
            row = np.maximum.accumulate(rows[mm])
            row = row + 1e-12 * np.linspace(0, 1, row.size)
            prices[sel] = np.interp(u[sel], row, c.grid_x)
        prices = np.maximum(prices, 0.0)
        yield from zip(times.tolist(), prices.tolist())


# ---------------------------------------------------------------------------
# results


@dataclass
class SimulationResult:
    seed: int
    t_start: float
    t_end: float
    times: np.ndarray
    types: np.ndarray
    prices: np.ndarray
    won: np.ndarray
    allocated: list
    aborted: bool = False
    error: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return float(self.prices[self.won].sum())

    @property
    def n_wins(self) -> int:
        return int(self.won.sum())

    def wins_by_contract(self) -> dict:
        out: dict = {}
        for t, a in zip(self.times[self.won], [a for a, w in zip(self.allocated, self.won) if w]):
            if a is not None:
                out.setdefault(a, []).append(t)
        return {k: np.array(v) for k, v in out.items()}

    def acquisition(self, contract_id: str, t) -> np.ndarray:
        """``c_i(t)``: items credited to the contract at or before ``t``."""
        w = self.wins_by_contract().get(contract_id, np.zeros(0))
        return np.searchsorted(np.sort(w), np.asarray(t), side="right")

    def fulfillment(self, contracts: Sequence[Contract]) -> dict:
        wins = self.wins_by_contract()
        out = {}
        for c in contracts:
            w = wins.get(c.id, np.zeros(0))
            got = int(np.sum(w < c.deadline))
            out[c.id] = {"acquired": got, "requirement": c.requirement,
                         "fulfilled": bool(got >= c.requirement)}
        return out

    def write_events(self, path, won_only: bool = False):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "type", "price", "won", "allocated_contract"])
            for t, j, p, w, a in zip(self.times, self.types, self.prices, self.won, self.allocated):
                if won_only and not w:
                    continue
                wr.writerow([f"{t:.6f}", int(j), f"{p:.6g}", int(w), "" if a is None else a])

    def summary(self, contracts: Sequence[Contract], config: dict | None = None) -> dict:
        cfg = json.dumps(config or {}, sort_keys=True, default=str).encode()
        return {
            "total_cost": self.total_cost,
            "n_auctions": int(self.times.size),
            "n_wins": self.n_wins,
            "fulfillment": self.fulfillment(contracts),
            "all_fulfilled": all(v["fulfilled"] for v in self.fulfillment(contracts).values()),
            "seed": self.seed,
            "rng": "numpy PCG64 via SeedSequence([seed, 0]).spawn(n_types)",
            "t_start": self.t_start,
            "t_end": self.t_end,
            "aborted": self.aborted,
            "error": self.error,
            "config_hash": hashlib.sha256(cfg).hexdigest()[:16],
            **self.meta,
        }


# ---------------------------------------------------------------------------
# event loop


def run(sampler, bidder, t_end: float, seed: int, t_start: float = 0.0) -> SimulationResult:
    """Run the auction loop from ``t_start`` to ``t_end``.

    ``bidder`` provides ``bid(t, j) -> float | None`` and optionally
    ``on_win(t, j, price) -> contract id | None``. An exception from the bidder
    stops the run; the partial result is returned with ``aborted`` set.
    """
    if not t_end > t_start:
        raise ParameterError("t_end must exceed t_start")
    rngs = market_rngs(seed, sampler.n_types)
    streams = [sampler.stream(j, t_start, t_end, rngs[j]) for j in range(sampler.n_types)]
    heap = []
    for j, st in enumerate(streams):
        ev = next(st, None)
        if ev is not None:
            heap.append((ev[0], j, ev[1]))
    heapq.heapify(heap)
    times, types, prices, won, alloc = [], [], [], [], []
    on_win = getattr(bidder, "on_win", None)
    bid_fn = bidder.bid if hasattr(bidder, "bid") else bidder
    aborted, error = False, None
    while heap:
        t, j, price = heapq.heappop(heap)
        try:
            b = bid_fn(t, j)
            w = b is not None and b >= price
            a = on_win(t, j, price) if (w and on_win is not None) else None
        except Exception as exc:  # the callback is user code
            log.error("bidder failed at t=%.4f: %s", t, exc)
            aborted, error = True, f"{type(exc).__name__}: {exc}"
            break
        times.append(t)
        types.append(j)
        prices.append(price)
        won.append(w)
        alloc.append(a)
        ev = next(streams[j], None)
        if ev is not None:
            heapq.heappush(heap, (ev[0], j, ev[1]))
    return SimulationResult(int(seed), float(t_start), float(t_end), np.array(times, dtype=float),
                            np.array(types, dtype=int), np.array(prices, dtype=float),
                            np.array(won, dtype=bool), alloc, aborted, error)


def normalize(result: SimulationResult, contracts: Sequence[Contract], n: int = 200,
              t_start: float | None = None):
    """Normalized acquisition paths ``c_i(t0 + u (T_i - t0)) / C_i`` on ``u in [0, 1]``.

    Returns ``(u, per_contract, mean)`` where ``per_contract`` has one row per
    contract. Wins at or after a deadline do not count.
    """
    t0 = result.t_start if t_start is None else t_start
    u = np.linspace(0.0, 1.0, n)
    wins = result.wins_by_contract()
    rows = []
    for c in contracts:
        w = np.sort(wins.get(c.id, np.zeros(0)))
        w = w[w < c.deadline]
        tt = t0 + u * (c.deadline - t0)
        cnt = np.searchsorted(w, tt, side="right").astype(float)
        cnt[-1] = w.size
        rows.append(cnt / c.requirement)
    rows = np.array(rows)
    return u, rows, rows.mean(axis=0)
