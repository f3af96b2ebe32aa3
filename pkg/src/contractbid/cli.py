"""Command-line entry point: estimate, plan, simulate, compare."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import estimation, planner
from .errors import (ConfigurationError, ContractBidError, InfeasibleError, ParameterError,
                     SolverError, SupplyExceededError)
from .experiment import run_protocol, sliding_windows
from .scenario import SinusoidMarket, table_contracts, type_curves
from .simulator import EmpiricalSampler, SyntheticSampler
from .supply import TimeVaryingSupplyCurve
from .targeting import contracts_from_records, decompose, load_contracts

log = logging.getLogger("contractbid")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3, 4
LOG_ENV = "CONTRACTBID_LOG_LEVEL"


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    contracts: list
    curve_source: dict
    sigma: float = 2.0
    solver: dict = field(default_factory=lambda: {"method": "levels", "penalty": 1e6})
    replan_hours: float = 1.0
    safety_z: float = 3.0
    window_length: float = 72.0
    window_stride: float = 12.0
    window_count: int = 9
    repeats: int = 4
    seed: int = 0
    output: str = "results"
    bid_cap: float | None = None
    nx: int = 512
    base_dir: Path = Path(".")

    def validate(self):
        if self.repeats < 1 or self.window_count < 1:
            raise ConfigurationError("repeats and window count must be >= 1")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        T = max(c.deadline for c in self.contracts)
        if T > self.window_length:
            raise ConfigurationError(
                f"latest deadline {T} h exceeds the window length {self.window_length} h")

    def as_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "sigma": self.sigma, "solver": self.solver,
                "replan_hours": self.replan_hours, "safety_z": self.safety_z,
                "windows": {"length": self.window_length, "stride": self.window_stride,
                            "count": self.window_count, "repeats": self.repeats},
                "seed": self.seed, "bid_cap": self.bid_cap, "curves": self.curve_source,
                "contracts": [c.id for c in self.contracts]}


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e})") from None
    ver = doc.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema_version {ver!r} (expected {SCHEMA_VERSION})")
    base = path.parent
    cs = doc.get("contracts", "table")
    if cs == "table":
        contracts = table_contracts()
    elif isinstance(cs, str):
        contracts = load_contracts(base / cs)
    else:
        contracts = contracts_from_records(cs)
    win = doc.get("windows", {})
    solver = {"method": "levels", "penalty": 1e6, **doc.get("solver", {})}
    cfg = RunConfig(contracts=contracts, curve_source=doc.get("curves", {"source": "synthetic"}),
                    sigma=float(doc.get("sigma", 2.0)), solver=solver,
                    replan_hours=float(doc.get("replan_hours", 1.0)),
                    safety_z=float(doc.get("safety_z", 3.0)),
                    window_length=float(win.get("length", 72.0)),
                    window_stride=float(win.get("stride", 12.0)),
                    window_count=int(win.get("count", 9)), repeats=int(win.get("repeats", 4)),
                    seed=int(doc.get("seed", 0)), output=doc.get("output", "results"),
                    bid_cap=doc.get("bid_cap"), nx=int(doc.get("nx", 512)), base_dir=base)
    return cfg


def atom_curves(cfg: RunConfig):
    """Raw per-atom curves plus an optional empirical sampler, by curve source."""
    src = cfg.curve_source
    kind = src.get("source", "synthetic")
    if kind == "synthetic":
        m = SinusoidMarket(**{k: (tuple(v) if isinstance(v, list) else v)
                              for k, v in src.get("params", {}).items()})
        return m.raw_curves(), None
    if kind == "json":
        return {str(a): TimeVaryingSupplyCurve.load(cfg.base_dir / p)
                for a, p in src["paths"].items()}, None
    if kind == "log":
        grid = np.linspace(0.0, float(src.get("x_max", 400.0)), int(src.get("nx", cfg.nx)))
        alog = estimation.read_log(cfg.base_dir / src["path"],
                                   split_tags=bool(src.get("split_tags", False)))
        curves, _ = estimation.estimate_curves(alog, grid, outlier=src.get("outlier", "median"))
        return curves, alog
    raise ConfigurationError(f"unknown curve source {kind!r}")


def empirical_sampler(alog, decomposition) -> EmpiricalSampler:
    by_tag = alog.by_tag()
    dts, prices = {}, {}
    for j, atoms in enumerate(decomposition.types):
        parts = [by_tag[a] for a in atoms if a in by_tag]
        if not parts:
            raise ConfigurationError(f"no log records for type {j} ({sorted(atoms)})")
        t = np.sort(np.concatenate([p[0] for p in parts]))
        pr = np.concatenate([p[1] for p in parts])
        ht = np.concatenate([p[0] for p in parts])
        d = np.diff(t)
        hb = estimation.hour_of_day(t[:-1])
        hp = estimation.hour_of_day(ht)
        for h in range(24):
            x = d[(hb == h) & (d > 0)]
            if x.size:
                x = x[x <= 10 * np.median(x)]
            dts[j, h] = x
            prices[j, h] = pr[hp == h]
    return EmpiricalSampler(dts, prices, decomposition.n_types)


def _model(cfg: RunConfig, contracts=None):
    contracts = contracts or cfg.contracts
    d = decompose(contracts)
    atoms, alog = atom_curves(cfg)
    missing = set().union(*d.types) - set(atoms)
    if missing:
        raise ConfigurationError(f"no supply curve for atoms {sorted(missing)}")
    raw = type_curves(atoms, d)
    smooth = type_curves(atoms, d, sigma=cfg.sigma, nx=cfg.nx)
    sampler = SyntheticSampler(raw) if alog is None else empirical_sampler(alog, d)
    return d, raw, smooth, sampler


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    alog = estimation.read_log(args.log, split_tags=args.split_tags)
    grid = np.linspace(0.0, args.x_max, args.nx)
    curves, reports = estimation.estimate_curves(alog, grid, sigma=args.sigma or 0.0,
                                                 outlier=args.outlier)
    for tag, c in curves.items():
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in tag)
        c.save(out / f"curve_{safe}.json")
        if not args.no_figures:
            from .plotting import plot_supply
            plot_supply(out / f"curve_{safe}.png", c, tag)
    report = {"n_records": len(alog), "malformed_rows": [m[0] for m in alog.malformed],
              "tags": reports}
    (out / "estimate_report.json").write_text(json.dumps(report, indent=2))
    print(f"estimated {len(curves)} curves from {len(alog)} records -> {out}")
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = _configure(args)
    d, raw, smooth, _ = _model(cfg)
    inst = planner.build_instance(cfg.contracts, d, smooth, bid_cap=cfg.bid_cap)
    method = cfg.solver.get("method", "levels")
    opts = {k: cfg.solver[k] for k in ("tol", "max_iter") if k in cfg.solver}
    report = planner.check_adequate_supply(inst)
    target = planner.static_instance(inst) if args.static else inst
    try:
        plan = planner.solve(target, method=method, **opts)
    except InfeasibleError as e:
        if args.strict:
            print(f"infeasible: {e}", file=sys.stderr)
            return EXIT_INFEASIBLE
        log.warning("%s; switching to best-effort plan", e)
        plan = planner.solve(target, method=method, penalty=float(cfg.solver["penalty"]), **opts)
    if plan.pseudo is not None and not plan.pseudo.converged:
        print("solver did not converge", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    doc = plan.to_dict()
    doc["mode"] = "static" if args.static else "dynamic"
    doc["adequate_supply"] = report
    (out / "plan.json").write_text(json.dumps(doc, indent=2))
    _print_plan(plan, report, doc["mode"])
    return EXIT_OK


def _print_plan(plan, report, mode):
    inst = plan.instance
    print(f"{mode} plan: {inst.n_contracts} contracts, {inst.decomposition.n_types} types, "
          f"{inst.n_periods} periods")
    print("breakpoints (h): " + ", ".join(f"{b:g}" for b in inst.breakpoints))
    print(f"expected cost {plan.cost:.6g}   dual gap {plan.dual_gap:.3g}")
    if report:
        print("adequate-supply condition (sufficient for feasibility, per type):")
    for r in report:
        flag = "holds" if r["ok"] else "not met"
        print(f"  type {r['type']}: supply {r['supply']:.4g} vs demand {r['demand']:.4g} [{flag}]")
    if plan.pseudo is not None:
        print("pseudo-bids: " + ", ".join(f"{c.id}={p:.4g}"
                                          for c, p in zip(inst.contracts, plan.pseudo.rho)))
    for j, row in enumerate(plan.bid_matrix()):
        cells = ["   -   " if x is None else f"{x:7.3f}" for x in row]
        print(f"  type {j} bids: " + " ".join(cells))


def cmd_simulate(args) -> int:
    cfg = _configure(args)
    if args.replan_hours is not None:
        cfg.replan_hours = args.replan_hours
    d, raw, smooth, sampler = _model(cfg)
    modes = [m for m, on in (("dynamic", args.dynamic), ("static", args.static)) if on]
    modes = modes or ["dynamic", "static"]
    windows = sliding_windows(cfg.window_length, cfg.window_stride, cfg.window_count, cfg.repeats)
    records = run_protocol(cfg.contracts, smooth, sampler, cfg.sigma, windows, cfg.seed,
                           modes=modes, workers=args.workers, replan_hours=cfg.replan_hours,
                           safety_z=cfg.safety_z, penalty=float(cfg.solver["penalty"]),
                           bid_cap=cfg.bid_cap)
    out = Path(args.out or cfg.output)
    write_results(out, records, cfg, events=args.events, figures=not args.no_figures)
    agg = json.loads((out / "aggregate.json").read_text())
    for m in modes:
        a = agg["modes"][m]
        print(f"{m:8s} J_avg = {a['J_avg']:.6g}  runs = {a['runs']}  "
              f"all-fulfilled = {a['fulfilled_rate']:.1%}")
    if "dynamic" in modes and "static" in modes:
        print(f"dynamic improvement over static: {agg['improvement']:.2%}")
    aborted = [r for r in records if r.result.aborted]
    if aborted:
        print(f"{len(aborted)} runs aborted", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def write_results(out: Path, records, cfg: RunConfig, events: str = "won", figures: bool = True):
    out.mkdir(parents=True, exist_ok=True)
    T = max(c.deadline for c in cfg.contracts)
    tgrid = np.arange(0.0, T, 0.25)
    summaries, norm, bids = [], {}, {}
    for rec in records:
        rd = out / "runs" / f"{rec.mode}_w{rec.window:02d}_r{rec.repeat:02d}"
        rd.mkdir(parents=True, exist_ok=True)
        if events != "none":
            rec.result.write_events(rd / "events.csv", won_only=(events == "won"))
        (rd / "summary.json").write_text(json.dumps(rec.summary, indent=2, default=float))
        summaries.append(rec.summary)
        norm.setdefault(rec.mode, []).append(rec.normalized)
        bp = np.full(tgrid.size, np.nan)
        if rec.bid_path:
            bt = np.array([b[0] for b in rec.bid_path]) - rec.t_start
            bv = np.array([b[1] for b in rec.bid_path])
            k = np.searchsorted(bt, tgrid, side="right") - 1
            bp = bv[np.maximum(k, 0)]
        bids.setdefault(rec.mode, []).append(bp)
    (out / "run_summaries.json").write_text(json.dumps(summaries, indent=2, default=float))
    u = np.linspace(0, 1, len(records[0].normalized))
    modes = list(norm)
    with open(out / "normalized_paths.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["u"] + [f"mean_{m}" for m in modes])
        means = {m: np.mean(norm[m], axis=0) for m in modes}
        for k, uu in enumerate(u):
            wr.writerow([f"{uu:.6f}"] + [f"{means[m][k]:.6f}" for m in modes])
    with open(out / "bid_paths.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["hours"] + [f"mean_pseudo_bid_{m}" for m in modes])
        mb = {m: np.nanmean(np.array(bids[m]), axis=0) for m in modes}
        for k, t in enumerate(tgrid):
            wr.writerow([f"{t:.2f}"] + [f"{mb[m][k]:.6g}" for m in modes])
    agg = {"config": cfg.as_dict(), "modes": {}}
    for m in modes:
        costs = [s["total_cost"] for s in summaries if s["mode"] == m]
        ful = [s["all_fulfilled"] for s in summaries if s["mode"] == m]
        agg["modes"][m] = {"J_avg": float(np.mean(costs)), "J_median": float(np.median(costs)),
                           "runs": len(costs), "fulfilled_rate": float(np.mean(ful))}
    if "dynamic" in agg["modes"] and "static" in agg["modes"]:
        js, jd = agg["modes"]["static"]["J_avg"], agg["modes"]["dynamic"]["J_avg"]
        agg["improvement"] = (js - jd) / js
    (out / "aggregate.json").write_text(json.dumps(agg, indent=2))
    with open(out / "comparison.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["mode", "J_avg", "J_median", "runs", "fulfilled_rate"])
        for m, a in agg["modes"].items():
            wr.writerow([m, f"{a['J_avg']:.6g}", f"{a['J_median']:.6g}", a["runs"],
                         f"{a['fulfilled_rate']:.4f}"])
    if figures:
        from .plotting import plot_bid_paths, plot_normalized_paths
        plot_normalized_paths(out / "normalized_paths.png", u, norm,
                              {m: a["J_avg"] for m, a in agg["modes"].items()})
        plot_bid_paths(out / "bid_paths.png", tgrid, bids)


def _load_runs(d: Path):
    p = Path(d) / "run_summaries.json"
    if not p.exists():
        raise ConfigurationError(f"{d}: no run_summaries.json (not a results directory)")
    return json.loads(p.read_text())


def bootstrap_ci(x, n_boot=2000, alpha=0.05, seed=0, stat=np.mean):
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    vals = np.array([stat(x[i]) for i in idx])
    return float(np.quantile(vals, alpha / 2)), float(np.quantile(vals, 1 - alpha / 2))


def compare_runs(runs_a, runs_b, mode_a=None, mode_b=None, n_boot=2000, seed=0) -> dict:
    """Relative cost difference ``(J_b - J_a) / J_b`` with paired bootstrap intervals."""
    def pick(runs, mode):
        if mode is None:
            modes = sorted({r["mode"] for r in runs})
            mode = "dynamic" if "dynamic" in modes else modes[0]
        return mode, {(r["window"], r["repeat"]): r for r in runs if r["mode"] == mode}

    ma, A = pick(runs_a, mode_a)
    mb, B = pick(runs_b, mode_b)
    keys = sorted(set(A) & set(B))
    if not keys:
        raise ConfigurationError("no common (window, repeat) runs to compare")
    ca = np.array([A[k]["total_cost"] for k in keys])
    cb = np.array([B[k]["total_cost"] for k in keys])
    rel = (cb - ca) / cb
    fa = np.array([A[k]["all_fulfilled"] for k in keys], dtype=float)
    fb = np.array([B[k]["all_fulfilled"] for k in keys], dtype=float)
    pooled = (cb.mean() - ca.mean()) / cb.mean() if cb.mean() else 0.0
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(keys), size=(n_boot, len(keys)))
    boot = (cb[idx].mean(axis=1) - ca[idx].mean(axis=1)) / cb[idx].mean(axis=1)
    return {
        "mode_a": ma, "mode_b": mb, "runs": len(keys),
        "J_avg_a": float(ca.mean()), "J_avg_b": float(cb.mean()),
        "improvement": float(pooled),
        "improvement_ci95": [float(np.quantile(boot, 0.025)), float(np.quantile(boot, 0.975))],
        "a_cheaper_fraction": float(np.mean(ca < cb)),
        "median_paired_improvement": float(np.median(rel)),
        "fulfilled_rate_a": float(fa.mean()), "fulfilled_rate_a_ci95": list(bootstrap_ci(fa, n_boot, seed=seed)),
        "fulfilled_rate_b": float(fb.mean()), "fulfilled_rate_b_ci95": list(bootstrap_ci(fb, n_boot, seed=seed + 1)),
    }


def cmd_compare(args) -> int:
    ra, rb = _load_runs(args.dir_a), _load_runs(args.dir_b)
    rep = compare_runs(ra, rb, args.mode_a, args.mode_b, n_boot=args.bootstrap, seed=args.seed)
    lo, hi = rep["improvement_ci95"]
    print(f"{rep['mode_a']} (A) vs {rep['mode_b']} (B) over {rep['runs']} paired runs")
    print(f"J_avg A = {rep['J_avg_a']:.6g}   J_avg B = {rep['J_avg_b']:.6g}")
    print(f"improvement of A over B: {rep['improvement']:.2%}  (95% CI {lo:.2%} .. {hi:.2%})")
    print(f"A cheaper in {rep['a_cheaper_fraction']:.0%} of runs")
    print(f"fulfilled: A {rep['fulfilled_rate_a']:.0%}, B {rep['fulfilled_rate_b']:.0%}")
    if args.out:
        Path(args.out).write_text(json.dumps(rep, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _configure(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "sigma", None) is not None:
        cfg.sigma = args.sigma
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contractbid", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimate periodic supply curves from an auction log")
    e.add_argument("log", help="CSV with timestamp,user_tag,market_price")
    e.add_argument("--out", required=True)
    e.add_argument("--sigma", type=float, default=0.0, help="bid noise used to smooth curves")
    e.add_argument("--x-max", type=float, default=400.0)
    e.add_argument("--nx", type=int, default=512)
    e.add_argument("--outlier", choices=("median", "p99", "none"), default="median")
    e.add_argument("--split-tags", action="store_true")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_estimate)

    pl = sub.add_parser("plan", help="solve the bid plan for a configuration")
    pl.add_argument("--config", required=True)
    pl.add_argument("--static", action="store_true", help="plan on horizon-averaged curves")
    pl.add_argument("--dynamic", action="store_true", help="plan on time-varying curves (default)")
    pl.add_argument("--strict", action="store_true", help="fail on infeasible requirements")
    pl.add_argument("--seed", type=int)
    pl.add_argument("--sigma", type=float)
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plan)

    s = sub.add_parser("simulate", help="run sliding-window simulations")
    s.add_argument("--config", required=True)
    s.add_argument("--dynamic", action="store_true")
    s.add_argument("--static", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--replan-hours", type=float)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--events", choices=("won", "all", "none"), default="won")
    s.add_argument("--no-figures", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="compare two results directories")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("--mode-a")
    c.add_argument("--mode-b")
    c.add_argument("--bootstrap", type=int, default=2000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigurationError, ParameterError, SupplyExceededError, FileNotFoundError,
            ContractBidError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
