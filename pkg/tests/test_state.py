import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcc.errors import DomainError, ShapeError
from lcc.state import (
    DeltaVector,
    ModelState,
    apply_delta,
    compute_delta,
    reconstruct,
)


def f32_bits(x) -> int:
    return int(np.float32(x).view(np.uint32))


class TestModelState:
    def test_default_segment_tiles_vector(self):
        s = ModelState([1.0, 2.0, 3.0])
        assert s.segments == (("all", 0, 3),)
        assert len(s) == 3

    def test_named_segments(self):
        s = ModelState(np.arange(6, dtype=np.float32), [("w", 0, 4), ("b", 4, 2)])
        assert np.array_equal(s.segment("b"), [4.0, 5.0])
        with pytest.raises(KeyError):
            s.segment("missing")

    def test_rejects_gap_and_overlap(self):
        with pytest.raises(DomainError):
            ModelState([1.0, 2.0, 3.0], [("a", 0, 1), ("b", 2, 1)])
        with pytest.raises(DomainError):
            ModelState([1.0, 2.0, 3.0], [("a", 0, 2), ("b", 1, 2)])
        with pytest.raises(DomainError):
            ModelState([1.0, 2.0, 3.0], [("a", 0, 2)])

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(DomainError):
            ModelState([])
        with pytest.raises(DomainError):
            ModelState([1.0, np.nan])
        with pytest.raises(DomainError):
            ModelState([np.inf])

    def test_values_immutable(self):
        s = ModelState([1.0])
        with pytest.raises(ValueError):
            s.values[0] = 2.0


class TestComputeDelta:
    def test_identity_case(self):
        d = compute_delta(ModelState([1.0, 2.0]), ModelState([1.0, 2.0]))
        assert np.array_equal(d.values, [0.0, 0.0])

    def test_exact_binary_arithmetic(self):
        d = compute_delta(ModelState([3.0, 0.5]), ModelState([1.0, 1.0]))
        assert np.array_equal(d.values, [2.0, -0.5])

    def test_ieee754_single_precision_result(self):
        # oracle: exact rational difference of the two float32 values,
        # rounded once to float32
        from fractions import Fraction

        exact = Fraction(float(np.float32(0.1))) - Fraction(float(np.float32(0.3)))
        expected = np.float32(float(exact))
        assert f32_bits(expected) == 0xBE4CCCCE  # frozen from the oracle
        d = compute_delta(ModelState([0.1]), ModelState([0.3]))
        assert d.values[0].view(np.uint32) == f32_bits(expected)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            compute_delta(ModelState([1.0]), ModelState([1.0, 2.0]))


class TestApplyDelta:
    def test_zero_delta(self):
        s = apply_delta(ModelState([1.0]), DeltaVector([0.0]))
        assert np.array_equal(s.values, [1.0])

    def test_exact_arithmetic(self):
        s = apply_delta(ModelState([1.0, -2.0]), DeltaVector([0.5, 2.0]))
        assert np.array_equal(s.values, [1.5, 0.0])

    def test_segments_copied_from_shadow(self):
        shadow = ModelState([1.0, 2.0], [("a", 0, 1), ("b", 1, 1)])
        s = apply_delta(shadow, DeltaVector([1.0, 1.0]))
        assert s.segments == shadow.segments

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            apply_delta(ModelState([1.0]), DeltaVector([1.0, 2.0]))

    # dyadic rationals sharing a scale make the subtraction exact, so the
    # round trip must be bitwise
    @given(
        st.lists(
            st.tuples(
                st.integers(-(2**20), 2**20), st.integers(-(2**20), 2**20)
            ),
            min_size=1,
            max_size=64,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_roundtrip_when_subtraction_exact(self, pairs):
        cur = ModelState([a / 1024.0 for a, _ in pairs])
        sh = ModelState([b / 1024.0 for _, b in pairs])
        back = apply_delta(sh, compute_delta(cur, sh))
        assert back.bitwise_equal(cur)


class TestReconstruct:
    def test_empty_chain(self):
        out = reconstruct(ModelState([1.0]), [])
        assert np.array_equal(out.values, [1.0])

    def test_two_step_chain(self):
        out = reconstruct(ModelState([0.0]), [DeltaVector([1.0]), DeltaVector([2.0])])
        assert np.array_equal(out.values, [3.0])

    def test_matches_encoder_shadow_on_random_chain(self):
        # the encoder folds deltas one at a time; reconstruct must agree
        # bit-for-bit on a 1000-element, 20-step chain
        rng = np.random.default_rng(3)
        shadow = ModelState(rng.normal(size=1000).astype(np.float32))
        initial = shadow
        deltas = []
        for _ in range(20):
            d = DeltaVector(rng.normal(scale=0.1, size=1000).astype(np.float32))
            deltas.append(d)
            shadow = apply_delta(shadow, d)
        assert reconstruct(initial, deltas).bitwise_equal(shadow)

    def test_length_mismatch_in_chain(self):
        with pytest.raises(ShapeError):
            reconstruct(ModelState([1.0]), [DeltaVector([1.0, 2.0])])
