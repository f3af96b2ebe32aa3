"""Figures written next to the CSV outputs (headless Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"dynamic": "tab:blue", "static": "tab:red"}


def plot_normalized_paths(path, u, curves_by_mode: dict, costs: dict | None = None):
    """Per-run normalized acquisition paths (thin) and their mean (thick)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for mode, rows in curves_by_mode.items():
        rows = np.asarray(rows)
        col = COLORS.get(mode, None)
        for r in rows:
            ax.plot(u, r, color=col, alpha=0.12, lw=0.6)
        label = mode
        if costs and mode in costs:
            label = f"{mode}  J_avg = {costs[mode]:.3g}"
        ax.plot(u, rows.mean(axis=0), color=col, lw=2.2, label=label)
    ax.plot([0, 1], [0, 1], color="0.5", ls="--", lw=0.8)
    ax.set_xlabel("normalized time t / T_i")
    ax.set_ylabel("normalized acquisition c_i / C_i")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.05)
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bid_paths(path, t, paths_by_mode: dict):
    """Mean pseudo-bid across active contracts against time since window start."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for mode, rows in paths_by_mode.items():
        rows = np.asarray(rows, dtype=float)
        col = COLORS.get(mode, None)
        for r in rows:
            ax.step(t, r, where="post", color=col, alpha=0.12, lw=0.6)
        ax.step(t, np.nanmean(rows, axis=0), where="post", color=col, lw=2.0, label=mode)
    ax.set_xlabel("hours since window start")
    ax.set_ylabel("mean pseudo-bid")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_supply(path, curve, tag: str = "", bids=None):
    """Arrival rate over the day and win-probability rows at a few hours."""
    t = np.linspace(0, 24, 241)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
    a1.plot(t, curve.rate(t), color="k")
    a1.plot(curve.grid_t, curve.lam, "o", ms=3, color="tab:orange")
    a1.set_xlabel("hour of day")
    a1.set_ylabel("arrivals per hour")
    a1.set_title(f"arrival rate {tag}".strip())
    x = curve.grid_x if bids is None else np.asarray(bids)
    for h in (0, 6, 12, 18):
        row = curve.supply_rows([h])[0] / max(curve.rate(h), 1e-300)
        a2.plot(curve.grid_x, row, label=f"{h:02d}:00")
    a2.set_xlim(max(x[0], 0), x[-1])
    a2.set_xlabel("bid")
    a2.set_ylabel("win probability")
    a2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
