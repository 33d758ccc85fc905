"""Synthetic household generator: event pools, daily Poisson counts and KDE start times."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import (
    DEVICES,
    N_INTERVALS,
    AggregateMatrix,
    ConsumptionMatrix,
    EventRecord,
    EventTable,
    aggregate,
    events_to_matrix,
    make_record,
)

# Poisson means of daily event counts (events/day).
DEFAULT_LAMBDA = {
    "faucet": 42.0856,
    "dishwasher": 1.0784,
    "toilet": 12.9203,
    "shower": 2.3668,
    "clothes_washer": 2.1761,
}
LAMBDA_MIN = 1e-6
STUDY_DAYS = (50, 100, 400, 800, 1000)

# Built-in event shapes, used when no labelled event log is supplied.
# (durations in intervals with weights, per-interval volume range in gallons)
_TEMPLATE_SPECS = {
    "faucet": ((1, 2), (0.85, 0.15), (0.1, 1.2)),
    "dishwasher": ((2, 3, 4), (0.3, 0.4, 0.3), (0.8, 3.0)),
    "toilet": ((1, 2), (0.6, 0.4), (0.8, 3.5)),
    "shower": ((1, 2, 3), (0.35, 0.45, 0.2), (2.0, 17.0)),
    "clothes_washer": ((2, 3, 4), (0.3, 0.4, 0.3), (4.0, 15.0)),
}
# Start-time mixtures in hours: (weights, centres, widths); remaining
# weight is spread uniformly over 06:00-23:00.
_START_MIXTURES = {
    "faucet": ((0.35, 0.35), (8.0, 18.75), (1.0, 1.25)),
    "dishwasher": ((0.7,), (19.0,), (1.0,)),
    "toilet": ((0.45, 0.2), (8.0, 21.5), (1.0, 1.5)),
    "shower": ((0.5, 0.35), (7.0, 20.0), (0.8, 0.9)),
    "clothes_washer": ((0.5,), (10.0,), (2.5,)),
}


class EmptyPoolError(KeyError):
    pass


@dataclass
class FrequencyModel:
    lambda_daily: dict[str, float]
    start_cdf: dict[str, np.ndarray]

    def __post_init__(self):
        for dev, lam in self.lambda_daily.items():
            if not lam > 0:
                raise ValueError(f"{dev}: lambda must be > 0, got {lam}")
        for dev, cdf in self.start_cdf.items():
            cdf = np.asarray(cdf, dtype=float)
            if np.any(np.diff(cdf) < 0) or abs(cdf[-1] - 1) > 1e-12:
                raise ValueError(f"{dev}: invalid start CDF")
            self.start_cdf[dev] = cdf

    @property
    def devices(self) -> list[str]:
        return list(self.lambda_daily)


@dataclass
class EventDictionary:
    pools: dict[str, list[tuple[float, ...]]] = field(default_factory=dict)

    def pool(self, device: str) -> list[tuple[float, ...]]:
        pool = self.pools.get(device)
        if not pool:
            raise EmptyPoolError(f"no event templates for device {device!r}")
        return pool


def build_event_dictionary(events: EventTable | Sequence[EventRecord]) -> EventDictionary:
    pools: dict[str, list[tuple[float, ...]]] = {}
    for r in events:
        pools.setdefault(r.device_id, []).append(tuple(r.volumes))
    return EventDictionary(pools)


def fit_daily_poisson(daily_counts: Sequence[int]) -> float:
    counts = np.asarray(daily_counts, dtype=float)
    if counts.size == 0:
        raise ValueError("no daily counts")
    if np.any(counts < 0):
        raise ValueError("negative count")
    lam = float(counts.mean())
    if lam <= 0:
        raise ValueError("all-zero counts: the Poisson mean must be positive")
    return lam


def silverman_bandwidth(x: np.ndarray, floor: float = 1.0) -> float:
    n = len(x)
    sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
    return max(sd * (3.0 * n / 4.0) ** (-0.2), floor)


def fit_start_cdf(starts: Sequence[int], n_intervals: int = N_INTERVALS,
                  bandwidth: float | None = None) -> np.ndarray:
    """Discrete CDF over interval slots from a reflected Gaussian KDE.

    Start slot ``s`` is treated as the point ``s + 0.5`` of ``[0, N)``; the
    density is evaluated at slot centres with reflection at both ends.
    """
    x = np.asarray(starts, dtype=float) + 0.5
    if x.size == 0:
        raise ValueError("no start intervals to fit")
    h = silverman_bandwidth(x) if bandwidth is None else bandwidth
    grid = np.arange(n_intervals) + 0.5
    dens = np.zeros(n_intervals)
    for mirror in (x, -x, 2 * n_intervals - x):
        z = (grid[:, None] - mirror[None, :]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    pmf = dens / dens.sum()
    cdf = np.cumsum(pmf)
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    return cdf


def sample_starts(cdf: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(k)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)


@dataclass
class GeneratedData:
    events: EventTable
    matrices: dict[str, ConsumptionMatrix]
    aggregate: AggregateMatrix
    daily_counts: dict[str, np.ndarray]
    clipped_volume: float = 0.0
    sampled_volume: float = 0.0


def generate_days(
    P: int,
    freq: FrequencyModel,
    pools: EventDictionary,
    rng: np.random.Generator | int | None = None,
    devices: Sequence[str] | None = None,
    n_intervals: int = N_INTERVALS,
) -> GeneratedData:
    """Simulate ``P`` days, device by device within each day."""
    if P < 1:
        raise ValueError("P must be >= 1")
    rng = np.random.default_rng(rng)
    devices = list(devices or freq.devices)
    for dev in devices:
        pools.pool(dev)
    table = EventTable(n_intervals=n_intervals)
    counts = {dev: np.zeros(P, dtype=int) for dev in devices}
    sampled = clipped_total = 0.0
    for p in range(P):
        for dev in devices:
            lam = max(freq.lambda_daily[dev], LAMBDA_MIN)
            k = int(rng.poisson(lam))
            counts[dev][p] = k
            if k == 0:
                continue
            starts = sample_starts(freq.start_cdf[dev], k, rng)
            pool = pools.pool(dev)
            picks = rng.integers(0, len(pool), size=k)
            for s, t in zip(starts, picks):
                vols = pool[t]
                sampled += sum(vols)
                rec, clipped = make_record(dev, p, int(s), vols, n_intervals)
                if clipped > 0 or rec is None:
                    table.clipped += 1
                    table.clipped_volume += clipped
                    clipped_total += clipped
                if rec is None:
                    table.dropped += 1
                else:
                    table.records.append(rec)
    matrices = {dev: events_to_matrix(table, dev, P, n_intervals) for dev in devices}
    agg = aggregate([matrices[d] for d in devices])
    return GeneratedData(table, matrices, agg, counts, clipped_total, sampled)


def fit_frequency_model(events: EventTable, days: int | None = None,
                        devices: Sequence[str] | None = None) -> FrequencyModel:
    """Poisson means and start CDFs estimated from a labelled event log."""
    days = events.n_days() if days is None else days
    devices = list(devices or events.devices())
    lam, cdfs = {}, {}
    for dev in devices:
        counts = np.zeros(days, dtype=int)
        starts = []
        for r in events:
            if r.device_id == dev:
                counts[r.day_index] += 1
                starts.append(r.start_interval)
        lam[dev] = fit_daily_poisson(counts)
        cdfs[dev] = fit_start_cdf(starts, events.n_intervals)
    return FrequencyModel(lam, cdfs)


def default_event_dictionary(per_device: int = 40, seed: int = 20190501) -> EventDictionary:
    rng = np.random.default_rng(seed)
    pools = {}
    for dev in DEVICES:
        durations, weights, (lo, hi) = _TEMPLATE_SPECS[dev]
        pool = []
        for _ in range(per_device):
            d = int(rng.choice(durations, p=weights))
            vols = np.round(rng.uniform(lo, hi, size=d), 2)
            pool.append(tuple(float(v) for v in vols))
        pools[dev] = pool
    return EventDictionary(pools)


def default_start_samples(device: str, n: int = 4000, seed: int = 7,
                          n_intervals: int = N_INTERVALS) -> np.ndarray:
    weights, centres, widths = _START_MIXTURES[device]
    rng = np.random.default_rng([seed, DEVICES.index(device)])
    slot_hours = 24.0 / n_intervals
    comp = rng.choice(len(weights) + 1, size=n, p=list(weights) + [1 - sum(weights)])
    hours = np.empty(n)
    for c in range(len(weights)):
        m = comp == c
        hours[m] = rng.normal(centres[c], widths[c], size=m.sum())
    m = comp == len(weights)
    hours[m] = rng.uniform(6.0, 23.0, size=m.sum())
    slots = np.floor(hours / slot_hours).astype(int)
    return np.clip(slots, 0, n_intervals - 1)


def default_frequency_model(n_intervals: int = N_INTERVALS,
                            lambdas: Mapping[str, float] | None = None) -> FrequencyModel:
    lambdas = dict(DEFAULT_LAMBDA if lambdas is None else lambdas)
    cdfs = {dev: fit_start_cdf(default_start_samples(dev, n_intervals=n_intervals),
                               n_intervals)
            for dev in lambdas}
    return FrequencyModel(lambdas, cdfs)


def ks_distance(samples: Sequence[int], cdf: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance between integer samples and a discrete CDF."""
    samples = np.asarray(samples)
    ecdf = np.searchsorted(np.sort(samples), np.arange(len(cdf)), side="right") / len(samples)
    return float(np.max(np.abs(ecdf - cdf)))


def frequency_table_csv(freq: FrequencyModel) -> str:
    devs = freq.devices
    lines = ["device,lambda"]
    lines += [f"{d},{freq.lambda_daily[d]!r}" for d in devs]
    lines.append("")
    lines.append("interval," + ",".join(devs))
    n = len(next(iter(freq.start_cdf.values())))
    for i in range(n):
        lines.append(f"{i}," + ",".join(repr(float(freq.start_cdf[d][i])) for d in devs))
    return "\n".join(lines) + "\n"


__all__ = [
    "DEFAULT_LAMBDA", "STUDY_DAYS", "FrequencyModel", "EventDictionary", "EmptyPoolError",
    "GeneratedData", "build_event_dictionary", "fit_daily_poisson", "fit_start_cdf",
    "generate_days", "fit_frequency_model", "default_event_dictionary",
    "default_frequency_model", "ks_distance", "frequency_table_csv",
]
