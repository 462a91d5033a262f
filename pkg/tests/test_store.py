import io
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcc.errors import ChainError, CorruptionError, StorageError
from lcc.expquant import dequantize, promote, quantize
from lcc.rd import RDConfig, rd_quantize
from lcc.state import DeltaVector, ModelState, apply_delta, compute_delta
from lcc.store import (
    QUANT_EXP,
    QUANT_RD,
    ChainStore,
    SimulatedCrash,
    merge_chunks,
    read_chunk,
    read_state_chunk,
    serialize_chunk,
    write_chunk,
    write_state_chunk,
)


def same_quantized(a, b) -> bool:
    """Equality on everything the container persists."""
    return (
        np.array_equal(a.table.representatives, b.table.representatives)
        and np.array_equal(a.indices, b.indices)
        and a.promotion_bits == b.promotion_bits
        and a.pre_promotion_buckets == b.pre_promotion_buckets
    )


def random_quantized(rng, n=None):
    n = n or int(rng.integers(1, 400))
    vals = rng.normal(scale=float(rng.uniform(0.001, 100)), size=n).astype(np.float32)
    q = quantize(DeltaVector(vals))
    if rng.random() < 0.5:
        q = promote(q, int(rng.integers(1, 5)))
    return q


class TestChunkRoundTrip:
    def test_minimal_zero_chunk(self):
        q = quantize(DeltaVector([0.0]))
        buf = io.BytesIO()
        nbytes = write_chunk(q, 3, buf)
        assert nbytes == buf.tell()
        back, step = read_chunk(buf.getvalue())
        assert step == 3
        assert same_quantized(q, back)

    def test_running_example_promoted_to_four_buckets(self):
        # ten elements across five exponent classes, 2-bit promotion
        vals = [2.5, 2.9, 1.5, 1.1, 0.6, 0.7, 0.15, 0.18, 0.02, 0.03]
        q = promote(quantize(DeltaVector(vals)), 2)
        assert q.pre_promotion_buckets == 5 and len(q.table) == 4
        buf = io.BytesIO()
        write_chunk(q, 1, buf)
        back, _ = read_chunk(buf.getvalue())
        assert same_quantized(q, back)
        assert np.array_equal(dequantize(back).values, dequantize(q).values)

    def test_corrupted_checksum_detected(self):
        q = quantize(DeltaVector([1.0, 2.0]))
        blob = bytearray(serialize_chunk(q, 0, QUANT_EXP))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(CorruptionError, match="checksum|truncated|code"):
            read_chunk(bytes(blob))

    def test_bad_magic_and_version(self):
        q = quantize(DeltaVector([1.0]))
        blob = bytearray(serialize_chunk(q, 0, QUANT_EXP))
        bad_magic = bytes(b"XXXX") + bytes(blob[4:])
        with pytest.raises(CorruptionError, match="magic"):
            read_chunk(bad_magic)
        blob[4] = 99
        with pytest.raises(CorruptionError, match="version"):
            read_chunk(bytes(blob))

    def test_byte_identical_reserialization(self):
        rng = np.random.default_rng(0)
        q = random_quantized(rng)
        a = serialize_chunk(q, 5, QUANT_EXP)
        b = serialize_chunk(q, 5, QUANT_EXP)
        assert a == b

    def test_rd_chunk_round_trip(self):
        rng = np.random.default_rng(1)
        d = DeltaVector(rng.normal(size=200).astype(np.float32))
        q = rd_quantize(d, RDConfig(k_max=4, lam=0.1))
        buf = io.BytesIO()
        write_chunk(q, 9, buf, quantizer=QUANT_RD)
        back, step = read_chunk(buf.getvalue())
        assert step == 9
        assert same_quantized(q, back)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_round_trip_random(self, seed):
        rng = np.random.default_rng(seed)
        q = random_quantized(rng)
        blob = serialize_chunk(q, int(rng.integers(0, 2**40)), QUANT_EXP)
        back, _ = read_chunk(blob)
        assert same_quantized(q, back)

    def test_state_chunk_round_trip_preserves_segments(self):
        s = ModelState(
            np.arange(10, dtype=np.float32), [("conv", 0, 6), ("fc", 6, 4)]
        )
        buf = io.BytesIO()
        write_state_chunk(s, 4, buf, merged=True)
        back, step, merged = read_state_chunk(buf.getvalue())
        assert (step, merged) == (4, True)
        assert back.bitwise_equal(s)
        assert back.segments == s.segments

    def test_wrong_record_kind_rejected(self):
        s = ModelState([1.0])
        buf = io.BytesIO()
        write_state_chunk(s, 0, buf)
        with pytest.raises(CorruptionError, match="delta"):
            read_chunk(buf.getvalue())


class TestChain:
    def _chain(self, tmp_path, steps=12, n=64, seed=0, merge_at=()):
        rng = np.random.default_rng(seed)
        store = ChainStore(tmp_path / "chain", create=True)
        state = ModelState(rng.normal(size=n).astype(np.float32))
        store.write_base(state, 0)
        shadow = state
        shadows = {0: shadow}
        for step in range(1, steps + 1):
            state = ModelState(
                state.values + rng.normal(scale=0.1, size=n).astype(np.float32)
            )
            q = promote(quantize(compute_delta(state, shadow)), 2)
            shadow = apply_delta(shadow, dequantize(q))
            store.append_delta(q, step)
            shadows[step] = shadow
            if step in merge_at:
                store.write_super(step)
        return store, shadows

    def test_recover_base_step(self, tmp_path):
        store, shadows = self._chain(tmp_path, steps=3)
        assert store.recover(0).bitwise_equal(shadows[0])

    def test_recover_every_step_bitwise(self, tmp_path):
        store, shadows = self._chain(tmp_path, steps=12)
        for step, expect in shadows.items():
            assert store.recover(step).bitwise_equal(expect)

    def test_recover_missing_step(self, tmp_path):
        store, _ = self._chain(tmp_path, steps=3)
        with pytest.raises(ChainError, match="17"):
            store.recover(17)

    def test_recover_names_missing_artifact(self, tmp_path):
        store, _ = self._chain(tmp_path, steps=5)
        os.remove(store.root / "delta-3.lcc")
        with pytest.raises(ChainError, match="step 3"):
            store.recover(5)

    def test_super_step_equals_chunk_by_chunk(self, tmp_path):
        store, shadows = self._chain(tmp_path, steps=12, merge_at=(6,))
        entries = [e.kind for e in store.entries()]
        assert "super" in entries
        # the super snapshot is preferred and must agree bitwise
        assert store.recover(6).bitwise_equal(shadows[6])
        assert store.recover(9).bitwise_equal(shadows[9])

    def test_merge_chunks_matches_sequential_apply(self):
        rng = np.random.default_rng(3)
        base = ModelState(rng.normal(size=128).astype(np.float32))
        shadow = base
        chunks = []
        for step in range(1, 8):
            q = random_quantized(rng, n=128)
            chunks.append((step, q))
            shadow = apply_delta(shadow, dequantize(q))
        merged = merge_chunks(base, chunks)
        assert merged.bitwise_equal(shadow)

    def test_merge_rejects_nonincreasing_steps(self):
        rng = np.random.default_rng(4)
        base = ModelState(rng.normal(size=16).astype(np.float32))
        q = random_quantized(rng, n=16)
        with pytest.raises(ChainError):
            merge_chunks(base, [(2, q), (2, q)])

    def test_write_super_detects_gap_expectation(self, tmp_path):
        store, _ = self._chain(tmp_path, steps=6)
        with pytest.raises(ChainError, match="gap"):
            store.write_super(6, from_step=3)

    def test_steps_must_increase(self, tmp_path):
        store, _ = self._chain(tmp_path, steps=3)
        rng = np.random.default_rng(5)
        with pytest.raises(ChainError):
            store.append_delta(random_quantized(rng, n=64), 2)

    def test_delta_requires_base(self, tmp_path):
        store = ChainStore(tmp_path / "fresh", create=True)
        rng = np.random.default_rng(6)
        with pytest.raises(ChainError, match="base"):
            store.append_delta(random_quantized(rng, n=8), 1)

    def test_reader_sees_only_committed(self, tmp_path):
        store, shadows = self._chain(tmp_path, steps=4)
        # an orphan file not in the manifest is invisible
        (store.root / "delta-99.lcc").write_bytes(b"garbage")
        reader = ChainStore(store.root)
        assert reader.committed_steps() == list(range(5))
        assert reader.recover(4).bitwise_equal(shadows[4])


class TestCrashConsistency:
    def _encode_with_crash(self, tmp_path, failpoint, crash_step=3):
        rng = np.random.default_rng(7)
        store = ChainStore(tmp_path / "chain", create=True)
        state = ModelState(rng.normal(size=32).astype(np.float32))
        store.write_base(state, 0)
        shadow = state
        shadows = {0: shadow}
        for step in range(1, 6):
            state = ModelState(
                state.values + rng.normal(scale=0.1, size=32).astype(np.float32)
            )
            q = promote(quantize(compute_delta(state, shadow)), 2)
            shadow = apply_delta(shadow, dequantize(q))
            if step == crash_step:
                store.failpoints.add(failpoint)
                with pytest.raises(SimulatedCrash):
                    store.append_delta(q, step)
                return store.root, shadows
            store.append_delta(q, step)
            shadows[step] = shadow
        raise AssertionError("crash step not reached")

    @pytest.mark.parametrize("failpoint", ["before-temp", "after-temp", "after-rename"])
    def test_crash_leaves_valid_prefix(self, tmp_path, failpoint):
        root, shadows = self._encode_with_crash(tmp_path, failpoint)
        reopened = ChainStore(root)
        committed = reopened.committed_steps()
        assert committed == sorted(shadows)[: len(committed)]
        for step in committed:
            assert reopened.recover(step).bitwise_equal(shadows[step])
        assert committed[-1] == 2  # crash at step 3: prefix ends at 2

    def test_torn_manifest_line_ignored(self, tmp_path):
        root, shadows = self._encode_with_crash(tmp_path, "after-manifest")
        # tear the final append (step 3's line) by stripping its newline
        manifest = root / "MANIFEST"
        text = manifest.read_text()
        manifest.write_text(text[:-1])
        reopened = ChainStore(root)
        assert reopened.committed_steps() == [0, 1, 2]
        assert reopened.recover(2).bitwise_equal(shadows[2])
        with pytest.raises(ChainError):
            reopened.recover(3)

    def test_malformed_interior_manifest_line_rejected(self, tmp_path):
        store, _ = TestChain()._chain(tmp_path, steps=2)
        manifest = store.root / "MANIFEST"
        lines = manifest.read_text().splitlines()
        lines[1] = "delta not-a-number delta-1.lcc"
        manifest.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorruptionError, match="manifest"):
            ChainStore(store.root)


class TestStats:
    def test_breakdown_ordering_and_entropy_bound(self, tmp_path):
        store, _ = TestChain()._chain(tmp_path, steps=8, n=4096, seed=9)
        rows = [r for r in store.chunk_stats() if r.kind == "delta"]
        assert len(rows) == 8
        for r in rows:
            assert r.bits_on_disk <= r.bits_ep <= r.bits_e
            assert r.entropy <= np.log2(r.k) + 1e-9

    def test_identical_deltas_have_zero_entropy(self, tmp_path):
        store = ChainStore(tmp_path / "chain", create=True)
        base = ModelState(np.ones(32, dtype=np.float32))
        store.write_base(base, 0)
        q = quantize(DeltaVector(np.full(32, 0.5, dtype=np.float32)))
        store.append_delta(q, 1)
        (row,) = [r for r in store.chunk_stats() if r.kind == "delta"]
        assert row.entropy == 0.0
