"""Completion-time statistics and the two-sample Kolmogorov-Smirnov test.

The KS statistic D is the exact supremum distance between the two empirical
CDFs, evaluated right-continuously at the pooled sample points (which is
where the supremum of a difference of step functions is attained, ties
included). The p-value is the asymptotic Kolmogorov distribution with the
Stephens small-sample correction:

    n_e = n1*n2/(n1+n2)
    lam = (sqrt(n_e) + 0.12 + 0.11/sqrt(n_e)) * D
    Q(lam) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lam^2)

truncated once terms drop below 1e-12 and clamped to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class KSResult:
    d: float
    p_value: float
    n1: int
    n2: int


@dataclass
class CompletionSample:
    label: str
    times: list[float]

    def __post_init__(self):
        if not self.times:
            raise ValueError(f"empty sample {self.label!r}")
        if any(t <= 0.0 for t in self.times):
            raise ValueError(f"non-positive completion time in {self.label!r}")


def ks_statistic(x, y) -> float:
    """Exact sup |F1 - F2| via merged sorted evaluation."""
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    if x.size == 0 or y.size == 0:
        raise ValueError("samples must be non-empty")
    pooled = np.concatenate([x, y])
    f1 = np.searchsorted(x, pooled, side="right") / x.size
    f2 = np.searchsorted(y, pooled, side="right") / y.size
    return float(np.max(np.abs(f1 - f2)))


def ks_survival(lam: float, term_tol: float = 1e-12, max_terms: int = 100_000) -> float:
    """Q_KS(lam): two-sided asymptotic survival function, clamped to [0, 1]."""
    if lam <= 1e-12:
        return 1.0
    total = 0.0
    sign = 1.0
    for k in range(1, max_terms + 1):
        term = math.exp(-2.0 * k * k * lam * lam)
        if term < term_tol:
            break
        total += sign * term
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def ks_p_value(d: float, n1: int, n2: int) -> float:
    n_e = n1 * n2 / (n1 + n2)
    sq = math.sqrt(n_e)
    lam = (sq + 0.12 + 0.11 / sq) * d
    return ks_survival(lam)


def ks_two_sample(x, y) -> KSResult:
    """Two-sample KS test of identical underlying distributions."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 1 or y.size < 1:
        raise ValueError("both samples need at least one observation")
    d = ks_statistic(x, y)
    return KSResult(d=d, p_value=ks_p_value(d, x.size, y.size), n1=int(x.size), n2=int(y.size))


# ---------------------------------------------------------------------------
# Summary tables


@dataclass
class SummaryRow:
    group: str
    mean: float
    std: float  # sample standard deviation (n-1); 0.0 for n=1
    count: int


def summarize(values_by_group: dict[str, list[float]]) -> list[SummaryRow]:
    """Mean / sample std / count per group, ordered by group key."""
    rows = []
    for group in sorted(values_by_group):
        vals = np.asarray(values_by_group[group], dtype=float)
        if vals.size == 0:
            continue
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        rows.append(SummaryRow(group=group, mean=float(np.mean(vals)), std=std, count=int(vals.size)))
    return rows


def histogram_bins(values, n_bins: int = 20) -> list[tuple[float, float, int]]:
    """(lo, hi, count) bins for CSV export of completion-time histograms."""
    vals = np.asarray(values, dtype=float)
    counts, edges = np.histogram(vals, bins=n_bins)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]


# ---------------------------------------------------------------------------
# Per-demonstration stage timings


@dataclass
class StageTiming:
    object_id: str
    time_to_grasp: float  # seconds from episode start to first attach
    grasp_to_place: float | None  # seconds from that attach to the detach, if any


def stage_timings(record) -> dict:
    """Grasp/place phase durations from an episode's attach/detach events.

    Returns {"time_to_first_grasp": s | None, "objects": {id: StageTiming}}.
    Objects never grasped do not appear.
    """
    dt = record.dt
    first_attach: dict[str, int] = {}
    place: dict[str, int] = {}
    for tick_rec in record.ticks:
        for ev in tick_rec.events:
            if ev.kind == "attach" and ev.object_id not in first_attach:
                first_attach[ev.object_id] = ev.tick
            elif ev.kind == "detach" and ev.object_id in first_attach and ev.object_id not in place:
                place[ev.object_id] = ev.tick
    start = record.initial_state.tick
    objects = {}
    for oid, t_attach in first_attach.items():
        g2p = (place[oid] - t_attach) * dt if oid in place else None
        objects[oid] = StageTiming(oid, (t_attach - start) * dt, g2p)
    overall = min(((t - start) * dt for t in first_attach.values()), default=None)
    return {"time_to_first_grasp": overall, "objects": objects}
