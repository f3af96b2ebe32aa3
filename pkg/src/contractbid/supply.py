"""Market models and time-varying supply curves.

The supply curve of an item type is ``W(x, t) = lam(t) * Wss(x, t)``: the arrival
rate of auctions times the probability of winning one with bid ``x``. Curves are
stored as win-probability rows at hourly knots and interpolated in time with a
shape-preserving (PCHIP) interpolant.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .curves import MonotoneCurve, floor_slope
from .errors import ConfigurationError, ParameterError

log = logging.getLogger(__name__)

DEFAULT_NX = 512
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


# ---------------------------------------------------------------------------
# market models


@dataclass(frozen=True)
class MarketParticipant:
    bid: float
    rate: float

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise ParameterError(f"participation rate must lie in (0,1), got {self.rate}")
        if self.bid < 0:
            raise ParameterError(f"bid must be non-negative, got {self.bid}")

    @property
    def phi(self) -> float:
        return -np.log1p(-self.rate)


def fixed_market_win_prob(participants: Sequence[MarketParticipant], x):
    """Win probability against a fixed set of competitors.

    Each competitor with bid ``b > x`` shows up with probability ``r`` and beats
    us. Ties go to us.
    """
    xa = np.asarray(x, dtype=float)
    if participants:
        bids = np.array([p.bid for p in participants])
        phis = np.array([p.phi for p in participants])
        expo = (phis[:, None] * (bids[:, None] > xa.reshape(-1))).sum(axis=0)
        out = np.exp(-expo).reshape(xa.shape)
    else:
        out = np.ones_like(xa)
    out = np.where(xa < 0, 0.0, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SteadyStateMarket:
    """Poisson market: ``rate`` competitors per auction on average.

    ``bid_cdf`` is the competitors' bid distribution ``F_B`` and ``mean_rate`` is
    the mean participation probability ``E[r]``.
    """

    rate: float
    bid_cdf: Callable
    mean_rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ParameterError("participant rate must be non-negative")
        if not 0.0 < self.mean_rate < 1.0:
            raise ParameterError("mean participation rate must lie in (0,1)")

    def win_prob(self, x):
        return steady_state_win_prob(self, x)


def steady_state_win_prob(market: SteadyStateMarket, x):
    """``exp(-rho (1 - F_B(x)) E[r])``."""
    xa = np.asarray(x, dtype=float)
    tail = 1.0 - np.asarray(market.bid_cdf(xa), dtype=float)
    out = np.exp(-market.rate * tail * market.mean_rate)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# raw curves and smoothing


@dataclass(frozen=True)
class RawWinCurve:
    """A possibly discontinuous non-decreasing curve, 0 below the first knot.

    ``kind='step'`` treats the values as right-continuous steps at the knots,
    ``kind='linear'`` interpolates linearly between knots.
    """

    knots: np.ndarray
    values: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.shape != v.shape or k.ndim != 1 or k.size < 1:
            raise ParameterError("knots and values must be matching 1-D arrays")
        if np.any(np.diff(k) <= 0) or np.any(np.diff(v) < 0) or np.any(v < 0):
            raise ParameterError("raw curve must be non-negative and non-decreasing")
        if self.kind not in ("linear", "step"):
            raise ParameterError(f"unknown raw curve kind {self.kind!r}")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    @property
    def bound(self) -> float:
        return float(self.values[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "step":
            i = np.searchsorted(self.knots, x, side="right") - 1
            return np.where(i >= 0, self.values[np.maximum(i, 0)], 0.0)
        return np.interp(x, self.knots, self.values, left=0.0, right=self.values[-1])


def _gauss_nodes(sigma: float, per_sigma: int = 16, width: float = 6.0):
    # midpoint rule on [-width*sigma, width*sigma]; symmetric, never hits 0
    n = int(width * per_sigma)
    u = (np.arange(-n, n) + 0.5) / per_sigma
    w = np.exp(-0.5 * u * u)
    return u * sigma, w / w.sum()


def convolve_gaussian(func: Callable, x: np.ndarray, sigma: float) -> np.ndarray:
    """``E func(x + sigma Z)`` on the points ``x`` by truncated midpoint quadrature."""
    if not sigma > 0:
        raise ParameterError(f"smoothing sigma must be positive, got {sigma}")
    u, w = _gauss_nodes(sigma)
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape)
    step = max(1, 2_000_000 // u.size)
    flat = x.reshape(-1)
    res = out.reshape(-1)
    for a in range(0, flat.size, step):
        chunk = flat[a:a + step]
        res[a:a + step] = func(chunk[:, None] + u[None, :]) @ w
    return out


def smooth_curve(raw: RawWinCurve, sigma: float, x_max: float | None = None,
                 nx: int = DEFAULT_NX) -> MonotoneCurve:
    """Gaussian-smoothed version of ``raw`` on ``[-4 sigma, x_max]``.

    A ramp of relative height 1e-12 is added so the result is strictly increasing
    whenever the raw curve is not identically zero.
    """
    if not sigma > 0:
        raise ParameterError(f"smoothing sigma must be positive, got {sigma}")
    if x_max is None:
        x_max = float(raw.knots[-1]) + 4.0 * sigma
    grid = np.linspace(-4.0 * sigma, x_max, nx)
    vals = np.maximum.accumulate(convolve_gaussian(raw, grid, sigma))
    return MonotoneCurve(grid, floor_slope(vals, scale=raw.bound))


# ---------------------------------------------------------------------------
# time-varying curves


def _periodic_pchip(t, y, period):
    """PCHIP through ``(t, y)`` extended periodically by two knots each side."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t[-1] - t[0] >= period:
        raise ParameterError("periodic knots must span less than one period")
    tt = np.concatenate([t[-2:] - period, t, t[:2] + period])
    yy = np.concatenate([y[-2:], y, y[:2]], axis=0)
    return PchipInterpolator(tt, yy, axis=0, extrapolate=True)


@dataclass(frozen=True, eq=False)
class TimeVaryingSupplyCurve:
    """Supply surface ``W(x, t) = lam(t) Wss(x, t)`` for one item type.

    ``win_prob`` has shape ``(len(grid_t), len(grid_x))``. With ``period_hours``
    set, time is taken modulo the period; otherwise it is clamped to the knot
    range. A single knot gives a time-constant curve.
    """

    grid_x: np.ndarray
    grid_t: np.ndarray
    win_prob: np.ndarray
    lam: np.ndarray
    sigma: float = 0.0
    period_hours: float | None = None

    def __post_init__(self):
        gx = np.asarray(self.grid_x, dtype=float)
        gt = np.atleast_1d(np.asarray(self.grid_t, dtype=float))
        wp = np.atleast_2d(np.asarray(self.win_prob, dtype=float))
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if wp.shape != (gt.size, gx.size) or lam.shape != gt.shape:
            raise ParameterError(
                f"shape mismatch: win_prob {wp.shape}, grid_t {gt.shape}, "
                f"grid_x {gx.shape}, lambda {lam.shape}")
        if np.any(np.diff(gx) <= 0) or np.any(np.diff(gt) <= 0):
            raise ParameterError("grids must be strictly increasing")
        if np.any(lam < 0) or np.any(wp < 0) or np.any(wp > 1 + 1e-9):
            raise ParameterError("rates must be >= 0 and win probabilities in [0,1]")
        for name, val in (("grid_x", gx), ("grid_t", gt), ("win_prob", wp), ("lam", lam)):
            object.__setattr__(self, name, val)
        if gt.size > 1:
            if self.period_hours:
                wi = _periodic_pchip(gt, wp, self.period_hours)
                li = _periodic_pchip(gt, lam, self.period_hours)
            else:
                wi = PchipInterpolator(gt, wp, axis=0)
                li = PchipInterpolator(gt, lam)
        else:
            wi = li = None
        object.__setattr__(self, "_wi", wi)
        object.__setattr__(self, "_li", li)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_functions(cls, win_prob: Callable, lam: Callable | float, grid_x,
                       grid_t=(0.0,), sigma=0.0, period_hours=None, floor=True):
        """Tabulate ``win_prob(x, t)`` and ``lam(t)`` on the given grids."""
        gx = np.asarray(grid_x, dtype=float)
        gt = np.atleast_1d(np.asarray(grid_t, dtype=float))
        wp = np.array([np.broadcast_to(win_prob(gx, t), gx.shape) for t in gt], dtype=float)
        wp = np.maximum.accumulate(np.clip(wp, 0.0, 1.0), axis=1)
        if floor:
            wp = np.minimum(floor_slope(wp, scale=1.0), 1.0)
        lv = np.array([lam(t) if callable(lam) else lam for t in gt], dtype=float)
        return cls(gx, gt, wp, lv, sigma, period_hours)

    def smoothed(self, sigma: float, x_max: float | None = None, nx: int = DEFAULT_NX):
        """Smooth every knot row as a raw (linear) curve with Gaussian noise ``sigma``."""
        rows = []
        grid = None
        for row in self.win_prob:
            c = smooth_curve(RawWinCurve(self.grid_x, row), sigma,
                             x_max=x_max if x_max is not None else self.grid_x[-1], nx=nx)
            grid = c.x
            rows.append(c.w)
        wp = np.minimum(np.array(rows), 1.0)
        return TimeVaryingSupplyCurve(grid, self.grid_t, wp, self.lam, sigma, self.period_hours)

    @staticmethod
    def combine(curves: Sequence["TimeVaryingSupplyCurve"]) -> "TimeVaryingSupplyCurve":
        """Supply curve of the union of disjoint atoms: the sum of their curves."""
        if not curves:
            raise ConfigurationError("cannot combine an empty list of curves")
        if len(curves) == 1:
            return curves[0]
        base = curves[0]
        for c in curves[1:]:
            if (c.grid_t.shape != base.grid_t.shape or not np.allclose(c.grid_t, base.grid_t)
                    or c.period_hours != base.period_hours):
                raise ConfigurationError("combined curves must share their time knots")
        lo = min(c.grid_x[0] for c in curves)
        hi = max(c.grid_x[-1] for c in curves)
        gx = np.linspace(lo, hi, max(c.grid_x.size for c in curves))
        lam = sum(c.lam for c in curves)
        tot = sum(c.lam[:, None] * np.array([np.interp(gx, c.grid_x, r, left=0.0, right=r[-1])
                                             for r in c.win_prob]) for c in curves)
        with np.errstate(invalid="ignore", divide="ignore"):
            wp = np.where(lam[:, None] > 0, tot / lam[:, None], 0.0)
        return TimeVaryingSupplyCurve(gx, base.grid_t, np.clip(wp, 0, 1), lam,
                                      max(c.sigma for c in curves), base.period_hours)

    # -- evaluation -----------------------------------------------------------

    def _tmap(self, t):
        t = np.asarray(t, dtype=float)
        if self.period_hours:
            return np.mod(t, self.period_hours)
        return np.clip(t, self.grid_t[0], self.grid_t[-1])

    def rate(self, t):
        """Arrival rate ``lam(t)``."""
        if self._li is None:
            out = np.full(np.shape(t), self.lam[0])
        else:
            out = np.maximum(self._li(self._tmap(t)), 0.0)
        return out if np.ndim(out) else float(out)

    def supply_rows(self, t) -> np.ndarray:
        """``W(grid_x, t_i)`` rows for an array of times, shape ``(len(t), nx)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self._wi is None:
            wp = np.broadcast_to(self.win_prob[0], (t.size, self.grid_x.size))
        else:
            wp = np.clip(self._wi(self._tmap(t)), 0.0, 1.0)
            wp = np.maximum.accumulate(wp, axis=1)
        lam = np.atleast_1d(self.rate(t))
        return lam[:, None] * wp

    def slice(self, t: float) -> MonotoneCurve:
        row = self.supply_rows([t])[0]
        if self._wi is not None:
            row = floor_slope(row)
        return MonotoneCurve(self.grid_x, row)

    def bound(self, t) -> float:
        return self.slice(t).bound

    def eval_W(self, x, t):
        return self.slice(t).value(x)

    def invert_W(self, s, t, clamp=False):
        return self.slice(t).inverse(s, clamp=clamp)

    def expected_cost(self, x, t):
        return self.slice(t).cost(x)

    def acquisition_cost(self, s, t, clamp=False):
        """``(Lambda(s), Lambda'(s))`` at time ``t``."""
        c = self.slice(t)
        return c.acquisition(s, clamp=clamp), c.acquisition_derivative(s, clamp=clamp)

    # -- time aggregation -----------------------------------------------------

    def _quadrature(self, t0: float, t1: float):
        """Gauss-Legendre nodes on every knot cell intersecting ``[t0, t1]``."""
        if self._wi is None:
            return np.array([0.5 * (t0 + t1)]), np.array([t1 - t0])
        gt = self.grid_t
        if self.period_hours:
            P = self.period_hours
            c0 = np.floor(t0 / P) - 1
            c1 = np.ceil(t1 / P) + 1
            knots = (gt[None, :] + P * np.arange(c0, c1 + 1)[:, None]).ravel()
        else:
            knots = gt
        cuts = np.unique(np.concatenate([[t0, t1], knots[(knots > t0) & (knots < t1)]]))
        a, b = cuts[:-1], cuts[1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        nodes = (mid[:, None] + half[:, None] * GL_NODES[None, :]).ravel()
        weights = (half[:, None] * GL_WEIGHTS[None, :]).ravel()
        return nodes, weights

    def integrated_supply(self, t0: float, t1: float) -> np.ndarray:
        """``int_{t0}^{t1} W(grid_x, t) dt`` as a row over ``grid_x``."""
        if not t0 < t1:
            raise ParameterError(f"aggregation window needs t0 < t1, got [{t0}, {t1}]")
        nodes, weights = self._quadrature(t0, t1)
        total = np.zeros(self.grid_x.size)
        for a in range(0, nodes.size, 256):
            total += weights[a:a + 256] @ self.supply_rows(nodes[a:a + 256])
        return total

    def aggregate(self, t0: float, t1: float) -> MonotoneCurve:
        """Time-integrated supply ``Wbar(x) = int_{t0}^{t1} W(x,t) dt``.

        The matching cost ``fbar`` is ``aggregate(...).cost``: integrating the
        second-price cost over time equals pricing the integrated curve.
        """
        row = np.maximum.accumulate(self.integrated_supply(t0, t1))
        return MonotoneCurve(self.grid_x, floor_slope(row))

    def time_averaged(self, t0: float, t1: float) -> "TimeVaryingSupplyCurve":
        """Time-constant curve equal to the average of this one over ``[t0, t1]``."""
        row = self.integrated_supply(t0, t1) / (t1 - t0)
        lam = float(row[-1]) if row[-1] > 0 else 0.0
        wp = row / lam if lam > 0 else np.zeros_like(row)
        wp = np.maximum.accumulate(np.clip(wp, 0.0, 1.0))
        return TimeVaryingSupplyCurve(self.grid_x, [0.0], wp[None, :], [lam], self.sigma, None)

    def total_bound(self, t0: float, t1: float) -> float:
        """``int_{t0}^{t1} B(t) dt`` with ``B(t)`` the top grid value."""
        nodes, weights = self._quadrature(t0, t1)
        return float(weights @ self.supply_rows(nodes)[:, -1])

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "header": {
                "grid_x": "bid, currency units",
                "grid_t": "hours",
                "win_prob": "probability, rows indexed by grid_t",
                "lambda": "auctions per hour",
                "sigma": "bid noise standard deviation, currency units",
                "period_hours": "hours, null for non-periodic curves",
            },
            "grid_x": self.grid_x.tolist(),
            "grid_t": self.grid_t.tolist(),
            "win_prob": self.win_prob.tolist(),
            "lambda": self.lam.tolist(),
            "sigma": self.sigma,
            "period_hours": self.period_hours,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TimeVaryingSupplyCurve":
        try:
            return cls(d["grid_x"], d["grid_t"], d["win_prob"], d["lambda"],
                       float(d.get("sigma", 0.0)), d.get("period_hours"))
        except KeyError as e:
            raise ConfigurationError(f"curve document missing field {e}") from None

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TimeVaryingSupplyCurve":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

