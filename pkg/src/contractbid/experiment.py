"""Sliding-window simulation runs of the receding-horizon controller."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .horizon import Bidder, RecedingHorizonController
from .simulator import SimulationResult, bidder_rng, normalize, run
from .targeting import Contract, decompose

log = logging.getLogger(__name__)


def run_seed(seed: int, window: int, repeat: int) -> int:
    """Per-run seed derived from the base seed, window index and repeat index."""
    return int(np.random.SeedSequence([int(seed), int(window), int(repeat)]).generate_state(1)[0])


@dataclass
class RunRecord:
    mode: str
    window: int
    repeat: int
    t_start: float
    seed: int
    result: SimulationResult
    trace: list
    bid_path: list
    normalized: np.ndarray
    summary: dict = field(default_factory=dict)


@dataclass
class WindowSpec:
    starts: list
    repeats: int


def sliding_windows(length: float, stride: float, count: int, repeats: int) -> WindowSpec:
    return WindowSpec([i * stride for i in range(count)], repeats)


def simulate_window(contracts_rel, model_curves, sampler, sigma: float, t_start: float,
                    seed: int, mode: str = "dynamic", replan_hours: float = 1.0,
                    safety_z: float = 3.0, penalty: float = 1e6, n_grid: int = 200,
                    bid_cap: float | None = None):
    """Simulate one window starting at ``t_start``.

    ``contracts_rel`` carry deadlines relative to the window start.
    """
    contracts = [Contract(c.id, c.deadline + t_start, c.requirement, c.targeting)
                 for c in contracts_rel]
    d = decompose(contracts)
    ctrl = RecedingHorizonController(contracts, d, model_curves, replan_hours=replan_hours,
                                     mode=mode, t_start=t_start, safety_z=safety_z,
                                     penalty=penalty, bid_cap=bid_cap)
    bidder = Bidder(ctrl, sigma, bidder_rng(seed))
    t_end = max(c.deadline for c in contracts)
    res = run(sampler, bidder, t_end, seed, t_start=t_start)
    _, _, mean = normalize(res, contracts, n=n_grid, t_start=t_start)
    return res, ctrl, bidder, contracts, mean


def _job(args):
    (mode, w, r, start, seed, contracts_rel, model_curves, sampler, sigma, opts) = args
    res, ctrl, bidder, contracts, mean = simulate_window(
        contracts_rel, model_curves, sampler, sigma, start, seed, mode=mode, **opts)
    summ = res.summary(contracts, {"mode": mode, "window": w, "repeat": r, **opts})
    summ.update({"mode": mode, "window": w, "repeat": r, "replans": ctrl.n_replans,
                 "discarded": ctrl.discarded})
    return RunRecord(mode, w, r, start, seed, res, ctrl.trace, bidder.bid_log, mean, summ)


def run_protocol(contracts_rel, model_curves, sampler, sigma: float, windows: WindowSpec,
                 seed: int, modes=("dynamic", "static"), workers: int = 1, **opts):
    """All windows x repeats x modes; runs with the same (window, repeat) share market draws."""
    jobs = []
    for mode in modes:
        for w, start in enumerate(windows.starts):
            for r in range(windows.repeats):
                jobs.append((mode, w, r, start, run_seed(seed, w, r), contracts_rel,
                             model_curves, sampler, sigma, opts))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_job, jobs))
    return [_job(j) for j in jobs]
