"""Supply-curve estimation from auction logs.

Per item type and hour of day: the arrival rate is the inverse mean interarrival
time, and the win probability at bid ``x`` is the CDF of the observed market
price, estimated with a Gaussian kernel. The hourly estimates are interpolated
into a 24-hour periodic ``TimeVaryingSupplyCurve``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, ParameterError
from .supply import TimeVaryingSupplyCurve

log = logging.getLogger(__name__)

HOURS = 24
MIN_PRICE_SAMPLES = 30


# ---------------------------------------------------------------------------
# log parsing


@dataclass
class AuctionLog:
    """Parsed auction records: times in hours since the Unix epoch (UTC)."""

    times: np.ndarray
    tags: np.ndarray
    prices: np.ndarray
    malformed: list = field(default_factory=list)

    def __len__(self):
        return self.times.size

    def by_tag(self) -> dict:
        out = {}
        for tag in np.unique(self.tags):
            sel = self.tags == tag
            order = np.argsort(self.times[sel], kind="stable")
            out[str(tag)] = (self.times[sel][order], self.prices[sel][order])
        return out


def parse_timestamp(raw: str) -> float:
    """Hours since the epoch from epoch seconds, ISO-8601 or ``yyyyMMddHHmmssSSS``."""
    s = raw.strip()
    if s.isdigit() and len(s) == 17:
        dt = datetime.strptime(s[:14], "%Y%m%d%H%M%S").replace(tzinfo=timezone.utc)
        return (dt.timestamp() + int(s[14:]) / 1000.0) / 3600.0
    try:
        return float(s) / 3600.0
    except ValueError:
        pass
    dt = datetime.fromisoformat(s.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp() / 3600.0


def read_log(path, max_malformed: float = 0.01, split_tags: bool = False) -> AuctionLog:
    """Read a CSV with columns ``timestamp, user_tag, market_price``.

    Malformed rows are skipped and reported with their line numbers; more than
    ``max_malformed`` (fraction) of them aborts with ``ConfigurationError``. With
    ``split_tags`` a comma-separated tag list credits the record to every tag.
    """
    times, tags, prices, bad = [], [], [], []
    n = 0
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        need = {"timestamp", "user_tag", "market_price"}
        if rd.fieldnames is None or not need <= set(rd.fieldnames):
            raise ConfigurationError(f"{path}: header must contain {sorted(need)}")
        for row in rd:
            n += 1
            try:
                t = parse_timestamp(row["timestamp"])
                p = float(row["market_price"])
                tag = (row["user_tag"] or "").strip()
                if not np.isfinite(p) or p < 0 or not tag:
                    raise ValueError("bad price or tag")
            except (ValueError, TypeError, AttributeError) as e:
                bad.append((rd.line_num, str(e)))
                continue
            for tg in (tag.split(",") if split_tags else [tag]):
                tg = tg.strip()
                if tg:
                    times.append(t)
                    tags.append(tg)
                    prices.append(p)
    if n == 0:
        raise ConfigurationError(f"{path}: no records")
    for line, msg in bad[:20]:
        log.warning("%s:%d: malformed row (%s)", path, line, msg)
    if len(bad) > max_malformed * n:
        raise ConfigurationError(f"{path}: {len(bad)} of {n} rows malformed")
    return AuctionLog(np.array(times), np.array(tags, dtype=object), np.array(prices), bad)


# ---------------------------------------------------------------------------
# arrival rates


def hour_of_day(t) -> np.ndarray:
    return np.floor(np.asarray(t)).astype(int) % HOURS


def _impute_circular(values: np.ndarray, ok: np.ndarray) -> np.ndarray:
    if not ok.any():
        raise ConfigurationError("no hour bucket has enough data")
    out = values.copy()
    idx = np.nonzero(ok)[0]
    for h in np.nonzero(~ok)[0]:
        dist = np.minimum(np.abs(idx - h), HOURS - np.abs(idx - h))
        near = idx[dist == dist.min()]
        out[h] = values[near].mean()
    return out


def estimate_arrival_rates(times, outlier: str = "median", factor: float = 10.0):
    """Hourly arrival rates ``lam[0..23]`` (per hour) from sorted event times (hours).

    Interarrival times are bucketed by the hour of their starting event. Gaps
    longer than ``factor`` times the bucket median are dropped
    (``outlier='median'``); ``outlier='p99'`` drops the top 1% instead.
    Buckets with fewer than two interarrivals are filled from the nearest hours.
    """
    t = np.sort(np.asarray(times, dtype=float))
    if t.size < 2:
        raise ParameterError("need at least two events")
    d = np.diff(t)
    hb = hour_of_day(t[:-1])
    lam = np.zeros(HOURS)
    ok = np.zeros(HOURS, dtype=bool)
    dropped = np.zeros(HOURS, dtype=int)
    for h in range(HOURS):
        x = d[(hb == h) & (d > 0)]
        if x.size < 2:
            continue
        if outlier == "median":
            keep = x <= factor * np.median(x)
        elif outlier == "p99":
            keep = x <= np.percentile(x, 99)
        elif outlier == "none":
            keep = np.ones(x.size, dtype=bool)
        else:
            raise ParameterError(f"unknown outlier rule {outlier!r}")
        dropped[h] = int((~keep).sum())
        lam[h] = 1.0 / x[keep].mean()
        ok[h] = True
    report = {"imputed_hours": np.nonzero(~ok)[0].tolist(), "dropped": dropped.tolist()}
    if not ok.all():
        log.info("imputing arrival rate for hours %s", report["imputed_hours"])
    return _impute_circular(lam, ok), report


# ---------------------------------------------------------------------------
# price distribution


def kde_cdf(prices, grid, bandwidth: float | None = None, sigma_floor: float = 1.0):
    """Gaussian-kernel CDF of non-negative prices, reflected at 0.

    Bandwidth defaults to the normal reference rule ``1.06 s n^(-1/5)`` and is
    never below ``sigma_floor`` (which also covers identical prices).
    """
    p = np.asarray(prices, dtype=float)
    if p.size == 0:
        raise ParameterError("no price samples")
    if bandwidth is None:
        s = p.std(ddof=1) if p.size > 1 else 0.0
        bandwidth = 1.06 * s * p.size ** (-0.2)
    h = max(float(bandwidth), sigma_floor)
    vals, counts = np.unique(p, return_counts=True)
    w = counts / p.size
    x = np.maximum(np.asarray(grid, dtype=float), 0.0)
    out = np.zeros(x.shape)
    for a in range(0, vals.size, 512):
        v = vals[a:a + 512]
        z1 = (x[:, None] - v[None, :]) / h
        z2 = (x[:, None] + v[None, :]) / h
        out += (ndtr(z1) + ndtr(z2) - 1.0) @ w[a:a + 512]
    out = np.where(np.asarray(grid) > 0, out, 0.0)
    return np.clip(np.maximum.accumulate(out), 0.0, 1.0), h


def estimate_win_prob(times, prices, grid, sigma_floor: float = 1.0,
                      min_samples: int = MIN_PRICE_SAMPLES):
    """Hourly price CDFs, shape ``(24, len(grid))``.

    A bucket with fewer than ``min_samples`` prices is pooled with its nearest
    neighbours until it has enough; such hours are reported as merged.
    """
    hb = hour_of_day(times)
    prices = np.asarray(prices, dtype=float)
    counts = np.bincount(hb, minlength=HOURS)
    if counts.sum() < min_samples:
        raise ConfigurationError(f"need at least {min_samples} price samples")
    rows = np.zeros((HOURS, np.size(grid)))
    merged, bandwidth = [], np.zeros(HOURS)
    for h in range(HOURS):
        hours = [h]
        r = 0
        while counts[hours].sum() < min_samples:
            r += 1
            hours = sorted({(h + k) % HOURS for k in range(-r, r + 1)})
        if len(hours) > 1:
            merged.append(h)
        sel = np.isin(hb, hours)
        rows[h], bandwidth[h] = kde_cdf(prices[sel], grid, sigma_floor=sigma_floor)
    rows = rows * (1 - 1e-12) + 1e-12 * np.linspace(0.0, 1.0, rows.shape[1])
    return rows, {"merged_hours": merged, "bandwidth": bandwidth.tolist(),
                                   "counts": counts.tolist()}


# ---------------------------------------------------------------------------
# curve assembly


def build_periodic_curve(lam, cdfs, grid, sigma: float = 0.0,
                         nx: int | None = None) -> tuple[TimeVaryingSupplyCurve, dict]:
    """Periodic curve with hourly knots at ``t = 0, 1, ..., 23``.

    With ``sigma > 0`` each hourly row is additionally smoothed by the bid noise.
    The report flags hours where time interpolation broke monotonicity in the
    bid direction (such slices are re-projected by a running maximum).
    """
    lam = np.asarray(lam, dtype=float)
    cdfs = np.asarray(cdfs, dtype=float)
    if lam.shape != (HOURS,) or cdfs.shape[0] != HOURS:
        raise ParameterError("need 24 hourly rates and CDF rows")
    curve = TimeVaryingSupplyCurve(grid, np.arange(HOURS, dtype=float), cdfs, lam,
                                   0.0, float(HOURS))
    if sigma > 0:
        curve = curve.smoothed(sigma, nx=nx or np.size(grid))
    probe = np.linspace(0, HOURS, 24 * 8, endpoint=False)
    raw = np.clip(curve._wi(probe), 0, 1)
    bad = np.nonzero((np.diff(raw, axis=1) < -1e-12).any(axis=1))[0]
    report = {"reprojected_times": probe[bad].tolist()}
    if bad.size:
        log.info("monotone re-projection applied at %d probe times", bad.size)
    return curve, report


def estimate_curves(auction_log: AuctionLog, grid, sigma: float = 0.0,
                    outlier: str = "median", sigma_floor: float = 1.0) -> tuple[dict, dict]:
    """End-to-end estimation: one periodic curve per tag."""
    curves, reports = {}, {}
    for tag, (t, p) in auction_log.by_tag().items():
        lam, r1 = estimate_arrival_rates(t, outlier=outlier)
        cdfs, r2 = estimate_win_prob(t, p, grid, sigma_floor=sigma_floor)
        curve, r3 = build_periodic_curve(lam, cdfs, grid, sigma)
        curves[tag] = curve
        reports[tag] = {"n": int(t.size), **r1, **r2, **r3}
    return curves, reports
