"""Synthetic benchmark market: six contracts over five item types.

Arrival rates follow a daily sinusoid with peak/trough ratio 3 and market
prices are exponential with a scale that also varies over the day. Each type is
a single audience atom; the contracts overlap on them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .supply import TimeVaryingSupplyCurve
from .targeting import Contract

#: (deadline hours, requirement, targeted atoms)
TABLE_CONTRACTS = (
    (28.0, 4500.0, (0, 2)),
    (31.0, 3240.0, (0, 4)),
    (43.0, 6300.0, (1, 2, 4)),
    (56.0, 3600.0, (0, 3)),
    (63.0, 1800.0, (2,)),
    (71.0, 3600.0, (2, 4)),
)


def table_contracts(offset: float = 0.0) -> list[Contract]:
    """The benchmark contracts with deadlines shifted by ``offset`` hours."""
    return [Contract(str(i + 1), T + offset, C, frozenset(str(a) for a in atoms))
            for i, (T, C, atoms) in enumerate(TABLE_CONTRACTS)]


@dataclass(frozen=True)
class SinusoidMarket:
    """Daily sinusoidal arrivals and exponential prices for ``n_atoms`` atoms."""

    mean_rate: tuple = (150.0, 130.0, 170.0, 140.0, 160.0)
    rate_amplitude: float = 0.5
    price_scale: tuple = (50.0, 45.0, 55.0, 48.0, 52.0)
    price_amplitude: float = 0.3
    price_phase: float = np.pi
    x_max: float = 600.0
    nx: int = 1201
    period: float = 24.0

    @property
    def n_atoms(self) -> int:
        return len(self.mean_rate)

    def phase(self, j: int) -> float:
        return 2 * np.pi * j / self.n_atoms

    def rate(self, j: int, t):
        w = 2 * np.pi / self.period
        return self.mean_rate[j] * (1 + self.rate_amplitude * np.sin(w * np.asarray(t) + self.phase(j)))

    def scale(self, j: int, t):
        w = 2 * np.pi / self.period
        return self.price_scale[j] * (
            1 + self.price_amplitude * np.sin(w * np.asarray(t) + self.phase(j) + self.price_phase))

    def price_cdf(self, j: int, x, t):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, -np.expm1(-np.maximum(x, 0) / self.scale(j, t)), 0.0)

    def raw_curves(self) -> dict[int, TimeVaryingSupplyCurve]:
        """Hourly-knot periodic curves of the market itself (no bid noise)."""
        gx = np.linspace(0.0, self.x_max, self.nx)
        gt = np.arange(0.0, self.period)
        return {str(j): TimeVaryingSupplyCurve.from_functions(
                    lambda x, t, j=j: self.price_cdf(j, x, t), lambda t, j=j: self.rate(j, t),
                    gx, gt, period_hours=self.period)
                for j in range(self.n_atoms)}


def type_curves(atom_curves: dict, decomposition, sigma: float | None = None, nx: int = 512):
    """Per-type curves: sum over the type's atoms, optionally smoothed by ``sigma``."""
    out = {}
    for j, atoms in enumerate(decomposition.types):
        c = TimeVaryingSupplyCurve.combine([atom_curves[a] for a in sorted(atoms)])
        out[j] = c.smoothed(sigma, nx=nx) if sigma else c
    return out
