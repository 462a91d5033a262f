import itertools
import math

import numpy as np
import pytest

from lcc.errors import DomainError
from lcc.expquant import bucket_mse, quantize
from lcc.rd import RDConfig, rd_partition_dp, rd_quantize, sample_then_partition
from lcc.state import DeltaVector


def brute_force_cost(values, k_max, lam) -> float:
    """Independent oracle: enumerate every contiguous partition.

    Interval statistics are computed directly per segment (no prefix
    sums), so the arithmetic path differs from the DP's.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.size
    best = math.inf
    for k in range(1, min(k_max, n) + 1):
        for cuts in itertools.combinations(range(1, n), k - 1):
            edges = [0, *cuts, n]
            cost = 0.0
            for lo, hi in zip(edges[:-1], edges[1:]):
                seg = x[lo:hi]
                cost += float(np.sum((seg - seg.mean()) ** 2))
                p = seg.size / n
                cost += lam * p * math.log2(1.0 / p)
            best = min(best, cost)
    return best


class TestPartitionDP:
    def test_two_exact_clusters(self):
        part = rd_partition_dp([1.0, 1.0, 1.0, 10.0, 10.0], RDConfig(k_max=2))
        assert part.boundaries == (3,)
        assert part.distortion == 0.0
        assert part.cost == 0.0
        assert [iv.mean for iv in part.intervals] == [1.0, 10.0]

    def test_forced_single_interval(self):
        x = np.array([1.0, 2.0, 4.0, 8.0])
        part = rd_partition_dp(x, RDConfig(k_max=1, lam=3.0))
        assert part.k == 1
        assert part.entropy == 0.0
        assert part.distortion == pytest.approx(float(np.sum((x - x.mean()) ** 2)))
        assert part.intervals[0].mean == pytest.approx(x.mean())

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for trial in range(40):
            n = int(rng.integers(1, 13))
            x = np.sort(rng.normal(size=n))
            for k_max in (1, 2, 3, 4):
                for lam in (0.0, 0.5, 2.0):
                    part = rd_partition_dp(x, RDConfig(k_max=k_max, lam=lam))
                    oracle = brute_force_cost(x, k_max, lam)
                    assert part.cost == pytest.approx(oracle, rel=1e-9, abs=1e-12)

    def test_cost_monotone_in_k_max(self):
        rng = np.random.default_rng(1)
        x = np.sort(rng.normal(size=40))
        costs = [
            rd_partition_dp(x, RDConfig(k_max=k, lam=0.3)).cost for k in range(1, 8)
        ]
        assert all(a >= b - 1e-12 for a, b in zip(costs, costs[1:]))

    def test_large_lambda_forces_one_interval(self):
        rng = np.random.default_rng(2)
        x = np.sort(rng.normal(size=30))
        part = rd_partition_dp(x, RDConfig(k_max=5, lam=1e9))
        assert part.k == 1

    def test_cost_monotone_in_lambda(self):
        rng = np.random.default_rng(3)
        x = np.sort(rng.normal(size=30))
        lams = [0.0, 0.1, 0.5, 2.0, 10.0]
        costs = [rd_partition_dp(x, RDConfig(k_max=4, lam=l)).cost for l in lams]
        assert all(a <= b + 1e-12 for a, b in zip(costs, costs[1:]))

    def test_pareto_frontier_in_lambda(self):
        # as lambda decreases the optimum trades entropy for distortion
        rng = np.random.default_rng(4)
        x = np.sort(rng.normal(size=60))
        lams = [10.0, 2.0, 0.5, 0.1, 0.0]
        parts = [rd_partition_dp(x, RDConfig(k_max=6, lam=l)) for l in lams]
        for hi, lo in zip(parts, parts[1:]):  # lambda shrinking
            assert lo.distortion <= hi.distortion + 1e-12
            assert lo.entropy >= hi.entropy - 1e-12

    def test_interval_mean_is_first_order_optimal(self):
        rng = np.random.default_rng(5)
        x = np.sort(rng.normal(size=25))
        part = rd_partition_dp(x, RDConfig(k_max=3))
        edges = [0, *part.boundaries, x.size]
        for (lo, hi), iv in zip(zip(edges[:-1], edges[1:]), part.intervals):
            seg = x[lo:hi]
            base = float(np.sum((seg - iv.mean) ** 2))
            for eps in (1e-4, -1e-4):
                assert float(np.sum((seg - (iv.mean + eps)) ** 2)) > base

    def test_input_validation(self):
        with pytest.raises(DomainError):
            rd_partition_dp([], RDConfig(k_max=1))
        with pytest.raises(DomainError):
            rd_partition_dp([2.0, 1.0], RDConfig(k_max=1))
        with pytest.raises(DomainError):
            RDConfig(k_max=0)
        with pytest.raises(DomainError):
            RDConfig(k_max=1, lam=-1.0)
        with pytest.raises(DomainError):
            RDConfig(k_max=8, sample_cap=4)


class TestSampling:
    def test_bypass_below_cap(self):
        rng = np.random.default_rng(6)
        x = np.sort(rng.normal(size=100))
        cfg = RDConfig(k_max=3, lam=0.2, sample_cap=200)
        a = sample_then_partition(x, cfg)
        b = rd_partition_dp(x, cfg)
        assert a == b

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(7)
        x = np.sort(rng.normal(size=3000))
        cfg = RDConfig(k_max=4, lam=0.1, sample_cap=500, top_m=32, seed=9)
        assert sample_then_partition(x, cfg) == sample_then_partition(x, cfg)

    def test_sampled_cost_near_full_dp(self):
        rng = np.random.default_rng(8)
        x = np.sort(rng.normal(size=6000))
        full = rd_partition_dp(x, RDConfig(k_max=8, lam=0.1))
        sampled = sample_then_partition(
            x, RDConfig(k_max=8, lam=0.1, sample_cap=1500, top_m=64, seed=0)
        )
        assert sampled.cost <= full.cost * 1.05
        assert sampled.cost >= full.cost - 1e-9  # full DP is the optimum

    def test_full_tiling_after_sampling(self):
        rng = np.random.default_rng(9)
        # heavy duplicates stress the threshold re-application
        x = np.sort(rng.integers(0, 5, size=2000).astype(np.float64))
        cfg = RDConfig(k_max=4, lam=0.0, sample_cap=300, top_m=16, seed=1)
        part = sample_then_partition(x, cfg)
        assert sum(iv.count for iv in part.intervals) == x.size
        assert all(iv.count > 0 for iv in part.intervals)


class TestRdQuantize:
    def test_constant_vector_single_bucket(self):
        q = rd_quantize(DeltaVector([0.5, 0.5, 0.5]), RDConfig(k_max=4))
        assert len(q.table) == 1
        assert q.table.representatives[0] == np.float32(0.5)

    def test_indices_map_to_interval_means(self):
        d = DeltaVector([1.0, 10.0, 1.0, 10.0, 1.0])
        q = rd_quantize(d, RDConfig(k_max=2))
        reps = q.table.representatives[q.indices]
        assert np.array_equal(reps, np.float32([1.0, 10.0, 1.0, 10.0, 1.0]))

    def test_beats_midrange_quantizer_on_bimodal_data(self):
        # two tight modes inside one exponent class: the exponent bucketing
        # cannot separate them, the interval quantizer can
        rng = np.random.default_rng(10)
        modes = np.where(rng.random(700) < 0.9, 1.05, 1.9)
        vals = (modes + rng.normal(scale=0.01, size=700)).astype(np.float32)
        d = DeltaVector(vals)
        rd_q = rd_quantize(d, RDConfig(k_max=2))
        exp_q = quantize(d)
        assert bucket_mse(d, rd_q) <= bucket_mse(d, exp_q) * 0.25

    def test_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            rd_quantize(DeltaVector([np.float32(np.nan)]), RDConfig(k_max=2))
