"""Interval quantizer minimizing squared error plus weighted entropy.

Values are sorted and partitioned into at most k_max contiguous intervals;
each interval is replaced by its mean. The objective is

    cost = sum_i SSE(interval_i) + lam * sum_i p_i * log2(1/p_i)

with p_i the fraction of points in interval i. The exact optimum over
contiguous partitions comes from a dynamic program with O(1) interval
costs via prefix sums; above a size cap the DP runs on a seeded sample
(largest-magnitude points always retained) and the chosen boundaries are
then re-applied to the full set for exact means and cost.

Entropy uses log base 2 so H lower-bounds the Huffman bits per element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .expquant import BucketTable, QuantizedDelta
from .state import DeltaVector


@dataclass(frozen=True)
class RDConfig:
    """Partition budget and trade-off knobs."""

    k_max: int
    lam: float = 0.0
    sample_cap: int = 4096
    top_m: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_max < 1:
            raise DomainError("k_max must be at least 1")
        if self.lam < 0:
            raise DomainError("lambda must be nonnegative")
        if self.sample_cap < self.k_max:
            raise DomainError("sample_cap must be at least k_max")
        if not 0 <= self.top_m <= self.sample_cap:
            raise DomainError("top_m must lie in [0, sample_cap]")


@dataclass(frozen=True)
class RDInterval:
    mean: float
    count: int
    sse: float


@dataclass(frozen=True)
class RDPartition:
    """Contiguous partition of a sorted value array.

    boundaries are the cut positions: interval j covers sorted positions
    [boundaries[j-1], boundaries[j]) with implicit 0 and n at the ends.
    """

    boundaries: tuple[int, ...]
    intervals: tuple[RDInterval, ...]
    distortion: float
    entropy: float
    cost: float

    @property
    def k(self) -> int:
        return len(self.intervals)


def _check_sorted(values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise DomainError("value list is empty")
    if not np.isfinite(x).all():
        raise DomainError("values must be finite")
    if np.any(np.diff(x) < 0):
        raise DomainError("values must be sorted ascending")
    return x


def _partition_from_cuts(x: np.ndarray, cuts: list[int], lam: float) -> RDPartition:
    n = x.size
    edges = [0] + [c for c in cuts if 0 < c < n] + [n]
    # drop duplicate edges (empty intervals can appear when sample
    # boundaries are re-applied to a full set with repeated values)
    edges = sorted(set(edges))
    intervals = []
    distortion = 0.0
    entropy = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        seg = x[lo:hi]
        mean = float(seg.mean())
        sse = float(np.sum((seg - mean) ** 2))
        p = seg.size / n
        intervals.append(RDInterval(mean, int(seg.size), sse))
        distortion += sse
        entropy += p * np.log2(1.0 / p)
    cost = distortion + lam * entropy
    return RDPartition(tuple(edges[1:-1]), tuple(intervals), distortion, entropy, cost)


def rd_partition_dp(values, cfg: RDConfig, weights=None) -> RDPartition:
    """Exact minimum-cost partition into at most k_max contiguous intervals.

    Ties prefer fewer intervals, then the earliest argmin in the scan
    order, which is deterministic. Optional per-point weights let a sample
    stand in for a larger population (each point counts as its weight in
    both the squared error and the occupancy probabilities); the returned
    partition statistics are always the unweighted ones for `values`.
    """
    x = _check_sorted(values)
    n = x.size
    k_cap = min(cfg.k_max, n)
    lam = cfg.lam

    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.size != n:
            raise DomainError("weights must match the value count")
        if not np.all(w > 0):
            raise DomainError("weights must be positive")
    total_w = float(w.sum())
    s0 = np.concatenate(([0.0], np.cumsum(w)))
    s1 = np.concatenate(([0.0], np.cumsum(w * x)))
    s2 = np.concatenate(([0.0], np.cumsum(w * x * x)))

    def window_cost(ls: np.ndarray, r: int) -> np.ndarray:
        m = s0[r] - s0[ls]
        tot = s1[r] - s1[ls]
        sse = np.maximum((s2[r] - s2[ls]) - tot * tot / m, 0.0)
        p = m / total_w
        return sse + lam * p * np.log2(1.0 / p)

    best = np.full((k_cap + 1, n + 1), np.inf)
    choice = np.zeros((k_cap + 1, n + 1), dtype=np.int64)
    m = s0[1:]
    tot = s1[1:]
    sse0 = np.maximum(s2[1:] - tot * tot / m, 0.0)
    best[1, 1:] = sse0 + lam * (m / total_w) * np.log2(total_w / m)
    for j in range(2, k_cap + 1):
        for r in range(j, n + 1):
            ls = np.arange(j - 1, r)
            cand = best[j - 1, ls] + window_cost(ls, r)
            a = int(np.argmin(cand))
            best[j, r] = cand[a]
            choice[j, r] = ls[a]

    totals = best[1 : k_cap + 1, n]
    j_best = int(np.argmin(totals)) + 1  # argmin returns the first (fewest intervals)

    cuts = []
    r = n
    for j in range(j_best, 1, -1):
        r = int(choice[j, r])
        cuts.append(r)
    cuts.reverse()
    return _partition_from_cuts(x, cuts, lam)


def sample_then_partition(values, cfg: RDConfig) -> RDPartition:
    """DP on a seeded sample, boundaries re-applied to the full set.

    Inputs at or under sample_cap go straight to the exact DP. The sample
    always retains the top_m largest-magnitude points plus a uniform draw
    (without replacement) of the rest. Retained points enter the DP with
    weight 1 and sampled points with weight (rest / drawn), so the sample
    objective is an unbiased stand-in for the full one; otherwise the
    overrepresented tails drag boundaries outward.
    """
    x = _check_sorted(values)
    n = x.size
    if n <= cfg.sample_cap:
        return rd_partition_dp(x, cfg)

    top_m = min(cfg.top_m, cfg.sample_cap)
    mags = np.abs(x)
    top = np.zeros(n, dtype=bool)
    if top_m:
        top[np.argpartition(mags, n - top_m)[n - top_m :]] = True
    rest = np.flatnonzero(~top)
    want = min(cfg.sample_cap - int(top.sum()), rest.size)
    rng = np.random.default_rng(cfg.seed)
    keep = top.copy()
    if want > 0:
        keep[rng.choice(rest, size=want, replace=False)] = True
    chosen = np.flatnonzero(keep)  # flatnonzero is sorted, so the sample is too
    sample = x[chosen]
    weights = np.where(top[chosen], 1.0, rest.size / max(want, 1))

    part = rd_partition_dp(sample, cfg, weights)
    thresholds = sample[list(part.boundaries)]
    cuts = np.searchsorted(x, thresholds, side="left").tolist()
    return _partition_from_cuts(x, cuts, cfg.lam)


def rd_quantize(delta: DeltaVector, cfg: RDConfig) -> QuantizedDelta:
    """Quantize a delta with interval means as bucket representatives."""
    v = delta.values.astype(np.float64)
    if not np.isfinite(v).all():
        raise DomainError("cannot quantize non-finite deltas")
    order = np.argsort(v, kind="stable")
    xs = v[order]
    part = sample_then_partition(xs, cfg)

    edges = [0, *part.boundaries, v.size]
    ids_sorted = np.empty(v.size, dtype=np.int64)
    for b, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        ids_sorted[lo:hi] = b
    ids = np.empty(v.size, dtype=np.int64)
    ids[order] = ids_sorted

    reps = np.array([iv.mean for iv in part.intervals], dtype=np.float32)
    counts = np.array([iv.count for iv in part.intervals], dtype=np.int64)
    table = BucketTable([None] * part.k, reps, counts, None)
    return QuantizedDelta(table, ids, 0, part.k)
