"""Piecewise-linear monotone curves with closed-form cost and inversion.

A ``MonotoneCurve`` stores a supply curve ``W`` on a sorted grid of bids. Between
grid points ``W`` is linear, which makes the second-price cost
``f(x) = int_0^x u dW(u)`` and the inverse ``W^{-1}`` exact closed forms on the
representation. Derived quantities therefore satisfy their identities
(``f'/W' = x``, ``Lambda' = W^{-1}``, convexity of ``Lambda``) to rounding error.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, SupplyExceededError

log = logging.getLogger(__name__)

#: relative tolerance within which a request at the supply bound is clamped
BOUND_RTOL = 1e-9


def _half_sq(u):
    u = np.maximum(u, 0.0)
    return 0.5 * u * u


@dataclass(frozen=True, eq=False)
class MonotoneCurve:
    """Non-decreasing piecewise-linear curve ``W`` on grid ``x``.

    Below the grid the curve is 0 and above it the curve is held at its last
    value, which plays the role of the supply bound ``B``.
    """

    x: np.ndarray
    w: np.ndarray
    _cum_f: np.ndarray = field(init=False, repr=False)
    _slope: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if x.ndim != 1 or x.shape != w.shape or x.size < 2:
            raise ParameterError("curve needs matching 1-D grids with >= 2 points")
        if np.any(np.diff(x) <= 0):
            raise ParameterError("bid grid must be strictly increasing")
        if np.any(np.diff(w) < 0) or w[0] < 0:
            raise ParameterError("curve values must be non-negative and non-decreasing")
        slope = np.diff(w) / np.diff(x)
        # int_{x_i}^{x_{i+1}} max(u,0) slope du, accumulated from the left edge
        seg = slope * (_half_sq(x[1:]) - _half_sq(x[:-1]))
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "_slope", slope)
        object.__setattr__(self, "_cum_f", cum)

    @property
    def bound(self) -> float:
        return float(self.w[-1])

    @property
    def x_min(self) -> float:
        return float(self.x[0])

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    @property
    def zero_level(self) -> float:
        """W(0): the supply obtainable at zero cost."""
        return float(self.value(0.0))

    def value(self, x):
        return np.interp(x, self.x, self.w, left=0.0, right=self.w[-1])

    __call__ = value

    def _cell(self, x):
        return np.clip(np.searchsorted(self.x, x, side="right") - 1, 0, self.x.size - 2)

    def cost(self, x):
        """Second-price expected cost ``f(x) = 1[x>0] int_0^x u dW(u)``."""
        xa = np.asarray(x, dtype=float)
        xc = np.clip(xa, self.x[0], self.x[-1])
        i = self._cell(xc)
        f = self._cum_f[i] + self._slope[i] * (_half_sq(xc) - _half_sq(self.x[i]))
        f = np.where(xa > 0, f, 0.0)
        return f if f.ndim else float(f)

    def inverse(self, s, clamp=False):
        """Smallest bid ``x`` with ``W(x) >= s``.

        Requests ``s >= B`` raise ``SupplyExceededError`` unless ``clamp`` is set,
        in which case values within ``BOUND_RTOL`` of ``B`` map to the top bid.
        """
        sa = np.asarray(s, dtype=float)
        B = self.w[-1]
        tol = BOUND_RTOL * max(B, 1e-300)
        over = sa >= B
        if np.any(over):
            if not clamp or np.any(sa > B + tol):
                bad = float(np.max(sa))
                raise SupplyExceededError(f"requested supply {bad:.6g} >= bound {B:.6g}")
            log.debug("supply request clamped at the bound %.6g", B)
        sc = np.minimum(sa, B)
        j = np.clip(np.searchsorted(self.w, sc, side="left"), 1, self.x.size - 1)
        i = j - 1
        dw = self.w[j] - self.w[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(dw > 0, (sc - self.w[i]) / dw, 1.0)
        out = self.x[i] + np.clip(frac, 0.0, 1.0) * (self.x[j] - self.x[i])
        out = np.where(sc <= self.w[0], self.x[0], out)
        return out if out.ndim else float(out)

    def acquisition(self, s, clamp=False):
        """Acquisition cost ``Lambda(s) = f(W^{-1}(s))``."""
        return self.cost(self.inverse(s, clamp=clamp))

    def acquisition_derivative(self, s, clamp=False):
        """``Lambda'(s) = 1[s >= W(0)] W^{-1}(s)``, i.e. the non-negative part."""
        d = np.maximum(self.inverse(s, clamp=clamp), 0.0)
        return d if np.ndim(d) else float(d)

    def dual_term(self, mu):
        """``f(mu) - mu W(mu)``, the per-resource term of the dual function."""
        return self.cost(mu) - np.asarray(mu) * self.value(mu)

    def scaled(self, factor: float) -> "MonotoneCurve":
        return MonotoneCurve(self.x, self.w * factor)

    def resampled(self, grid) -> "MonotoneCurve":
        grid = np.asarray(grid, dtype=float)
        return MonotoneCurve(grid, np.maximum.accumulate(self.value(grid)))


def floor_slope(values, rel=1e-12, scale=None):
    """Add a tiny linear ramp along the last axis so rows become strictly increasing.

    The ramp rises by ``rel * scale`` overall but by at least a few ulps per cell,
    so long flat stretches near ``scale`` do not round back to equal values.
    """
    v = np.asarray(values, dtype=float)
    n = v.shape[-1]
    if scale is None:
        scale = np.max(v, axis=-1, keepdims=True) if v.ndim > 1 else np.max(v)
    rise = max(rel, 4 * np.finfo(float).eps * (n - 1))
    return v + rise * np.asarray(scale) * np.linspace(0.0, 1.0, n)
