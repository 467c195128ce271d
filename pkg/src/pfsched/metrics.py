"""Throughput and fairness metrics over per-slot throughput series."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "ThroughputSeries",
    "jain_index",
    "system_throughput",
    "AggregateSummary",
    "aggregate",
]


@dataclass
class ThroughputSeries:
    """Per-slot per-user throughputs, shape (num_slots, num_users).

    ``window_slots`` sets the smoothing window: the smoothed value at slot n
    averages the last min(n, W) entries, so warm-up slots average over what
    exists.
    """

    throughputs: np.ndarray
    window_slots: int

    def __post_init__(self):
        self.throughputs = np.asarray(self.throughputs, dtype=float)
        if self.throughputs.ndim != 2 or self.throughputs.shape[0] < 1:
            raise ValueError("throughputs must be a non-empty (num_slots, num_users) matrix")
        if (self.throughputs < 0).any():
            raise ValueError("throughputs must be non-negative")
        if self.window_slots < 1:
            raise ValueError("window_slots must be >= 1")

    @property
    def num_slots(self) -> int:
        return self.throughputs.shape[0]

    @property
    def num_users(self) -> int:
        return self.throughputs.shape[1]

    def smoothed(self) -> np.ndarray:
        """Sliding-window means, min(n, W) divisor during warm-up."""
        if self.window_slots == 1:
            return self.throughputs.copy()
        n_slots, num_users = self.throughputs.shape
        csum = np.vstack([np.zeros(num_users), np.cumsum(self.throughputs, axis=0)])
        slots = np.arange(1, n_slots + 1)
        width = np.minimum(slots, self.window_slots)
        return (csum[slots] - csum[slots - width]) / width[:, None]


def jain_index(series: ThroughputSeries, skip_warmup: bool = False) -> float:
    """Time-averaged fairness index of the smoothed throughputs.

    Per slot: ``(sum_i x_i)^2 / (U * sum_i x_i^2)``, which is 1 for equal
    shares and 1/U when one user holds everything.  Slots in which every
    user's smoothed throughput is zero are skipped (the index is undefined
    there).  ``skip_warmup`` drops the first ``window_slots - 1`` slots,
    where the window is still partial (at least the final slot is kept).
    """
    smooth = series.smoothed()
    if skip_warmup:
        start = min(series.window_slots - 1, series.num_slots - 1)
        smooth = smooth[start:]
    totals = smooth.sum(axis=1)
    included = totals > 0
    if not included.any():
        raise ValueError("all slots have zero throughput; fairness undefined")
    num_users = series.num_users
    terms = totals[included] ** 2 / (num_users * (smooth[included] ** 2).sum(axis=1))
    return float(terms.mean())


def system_throughput(series: ThroughputSeries) -> float:
    """Time average of the per-slot total throughput."""
    return float(series.throughputs.sum(axis=1).mean())


@dataclass(frozen=True)
class AggregateSummary:
    mean: np.ndarray | float
    std: np.ndarray | float
    ci95_halfwidth: np.ndarray | float


def aggregate(samples: Sequence[Mapping[str, float | np.ndarray]]) -> dict[str, AggregateSummary]:
    """Mean, sample std, and 95% normal-approximation half-width per metric.

    ``samples`` holds one mapping per replication; every mapping must carry
    the same metric names.  Needs at least two replications.
    """
    if len(samples) < 2:
        raise ValueError("aggregation needs at least 2 replications")
    names = list(samples[0].keys())
    for s in samples[1:]:
        if list(s.keys()) != names:
            raise ValueError("replications carry different metric names")
    out: dict[str, AggregateSummary] = {}
    count = len(samples)
    for name in names:
        values = np.asarray([s[name] for s in samples], dtype=float)
        mean = values.mean(axis=0)
        std = values.std(axis=0, ddof=1)
        half = 1.96 * std / np.sqrt(count)
        squeeze = values.ndim == 1
        out[name] = AggregateSummary(
            mean=float(mean) if squeeze else mean,
            std=float(std) if squeeze else std,
            ci95_halfwidth=float(half) if squeeze else half,
        )
    return out
