"""Exponent/sign bucket quantization with x-bit priority promotion.

Stage one groups delta elements by the (sign, unbiased exponent) of their
IEEE-754 bit pattern and replaces each group with the midrange of its
members, so every element keeps its sign and binary order of magnitude.
Stage two ("promotion") keeps only the 2^x - 1 buckets of largest exponent
and collapses everything else into a bucket whose value is exactly 0.0:
small updates are deferred until they grow, and indices then fit in x bits.

Buckets are kept in a canonical order (exponent descending, positive sign
before negative, zero bucket last) so every downstream artifact is
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CorruptionError, DomainError
from .state import DeltaVector

_EXP_FIELD = 0xFF

# Values whose stored exponent field is zero (exact zeros and subnormals)
# fold into a single class reported with this conventional exponent.
ZERO_EXPONENT = -127

BucketKey = tuple[int, int]  # (sign in {+1,-1}, unbiased exponent)


@dataclass(frozen=True)
class FloatDecomposition:
    """Sign / exponent / mantissa split of one float32 value."""

    sign: int
    exponent: int
    mantissa: float

    def recompose(self) -> float:
        return self.sign * self.mantissa * 2.0**self.exponent


def decompose(v: float) -> FloatDecomposition:
    """Split a finite float32 into (-1)^s * m * 2^e from its bit pattern.

    Zeros and subnormals report exponent -127 (the zero class).
    """
    f = np.float32(v)
    if not np.isfinite(f):
        raise DomainError("cannot decompose NaN or Inf")
    pattern = int(f.view(np.uint32))
    sign = -1 if pattern >> 31 else 1
    stored = (pattern >> 23) & _EXP_FIELD
    if stored == 0:
        exponent = ZERO_EXPONENT
        mantissa = abs(float(f)) * 2.0**127
    else:
        exponent = stored - 127
        mantissa = abs(float(f)) / 2.0**exponent
    return FloatDecomposition(sign, exponent, mantissa)


def unbiased_exponents(values) -> np.ndarray:
    """Vectorized exponent extraction; zero class reports -127."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    bits = arr.view(np.uint32)
    stored = ((bits >> 23) & _EXP_FIELD).astype(np.int16)
    if np.any(stored == _EXP_FIELD):
        raise DomainError("non-finite element")
    exps = stored - np.int16(127)
    exps[stored == 0] = ZERO_EXPONENT
    return exps


class BucketTable:
    """Ordered bucket set: one representative value per bucket.

    Keys are (sign, exponent) for exponent buckets, None for the zero
    bucket and for rate-distortion intervals (which have no bit-pattern
    class). The zero bucket's representative is exactly 0.0.
    """

    __slots__ = ("keys", "representatives", "counts", "zero_bucket_index")

    def __init__(
        self,
        keys: Sequence[Optional[BucketKey]],
        representatives,
        counts,
        zero_bucket_index: Optional[int] = None,
    ) -> None:
        reps = np.array(representatives, dtype=np.float32, copy=True).reshape(-1)
        cnts = np.array(counts, dtype=np.int64, copy=True).reshape(-1)
        keys = tuple(keys)
        if not (len(keys) == reps.size == cnts.size):
            raise DomainError("bucket table fields disagree on bucket count")
        if reps.size == 0:
            raise DomainError("bucket table must hold at least one bucket")
        named = [k for k in keys if k is not None]
        if len(named) != len(set(named)):
            raise DomainError("bucket keys must be unique")
        if np.any(cnts < 0):
            raise DomainError("bucket counts must be nonnegative")
        if zero_bucket_index is not None:
            if not 0 <= zero_bucket_index < reps.size:
                raise DomainError("zero bucket index out of range")
            if reps[zero_bucket_index] != np.float32(0.0):
                raise DomainError("zero bucket representative must be exactly 0.0")
        reps.setflags(write=False)
        cnts.setflags(write=False)
        self.keys = keys
        self.representatives = reps
        self.counts = cnts
        self.zero_bucket_index = zero_bucket_index

    def __len__(self) -> int:
        return int(self.representatives.size)

    @property
    def buckets(self) -> list[tuple[Optional[BucketKey], float, int]]:
        return [
            (self.keys[i], float(self.representatives[i]), int(self.counts[i]))
            for i in range(len(self))
        ]

    def __repr__(self) -> str:
        return f"BucketTable(k={len(self)}, zero={self.zero_bucket_index})"


class QuantizedDelta:
    """Bucket table plus one bucket index per delta element."""

    __slots__ = ("table", "indices", "promotion_bits", "pre_promotion_buckets")

    def __init__(
        self,
        table: BucketTable,
        indices,
        promotion_bits: int = 0,
        pre_promotion_buckets: Optional[int] = None,
    ) -> None:
        idx = np.array(indices, dtype=np.uint32, copy=True).reshape(-1)
        if idx.size == 0:
            raise DomainError("quantized delta must cover at least one element")
        if int(idx.max()) >= len(table):
            raise DomainError("bucket index out of range")
        if promotion_bits < 0:
            raise DomainError("promotion bits must be nonnegative")
        if promotion_bits > 0 and len(table) > (1 << promotion_bits):
            raise DomainError(
                f"{len(table)} buckets do not fit in {promotion_bits}-bit indices"
            )
        idx.setflags(write=False)
        self.table = table
        self.indices = idx
        self.promotion_bits = int(promotion_bits)
        self.pre_promotion_buckets = int(
            len(table) if pre_promotion_buckets is None else pre_promotion_buckets
        )

    def __len__(self) -> int:
        return int(self.indices.size)

    def bucket_frequencies(self) -> np.ndarray:
        """Occupancy count per bucket (including empty buckets)."""
        return np.bincount(self.indices, minlength=len(self.table))

    def __repr__(self) -> str:
        return (
            f"QuantizedDelta(n={len(self)}, k={len(self.table)}, "
            f"x={self.promotion_bits})"
        )


def quantize(delta: DeltaVector) -> QuantizedDelta:
    """Group elements by (sign, exponent); representative = midrange.

    Exact zeros and subnormals always land in the zero bucket, whose
    representative is exactly 0.0. No promotion is applied.
    """
    vals = delta.values
    bits = vals.view(np.uint32)
    stored = (bits >> 23) & _EXP_FIELD
    if np.any(stored == _EXP_FIELD):
        raise DomainError("cannot quantize non-finite deltas")
    negative = (bits >> 31).astype(np.int32)
    # Orderable class code: zero class 0, normals 2*stored + (1 if positive).
    # Sorting codes descending yields the canonical bucket order.
    codes = np.where(stored == 0, 0, 2 * stored.astype(np.int32) + (1 - negative))
    uniq, inverse = np.unique(codes, return_inverse=True)
    order = np.argsort(uniq)[::-1]
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[order] = np.arange(uniq.size)
    bucket_ids = rank[inverse.reshape(-1)]

    k = int(uniq.size)
    counts = np.bincount(bucket_ids, minlength=k)
    mins = np.full(k, np.inf)
    maxs = np.full(k, -np.inf)
    vals64 = vals.astype(np.float64)
    np.minimum.at(mins, bucket_ids, vals64)
    np.maximum.at(maxs, bucket_ids, vals64)
    reps = ((mins + maxs) / 2.0).astype(np.float32)

    keys: list[Optional[BucketKey]] = []
    zero_index: Optional[int] = None
    for pos, code in enumerate(uniq[order]):
        if code == 0:
            zero_index = pos
            keys.append(None)
        else:
            keys.append((1 if code % 2 else -1, int(code // 2) - 127))
    if zero_index is not None:
        reps = reps.copy()
        reps[zero_index] = np.float32(0.0)

    table = BucketTable(keys, reps, counts, zero_index)
    return QuantizedDelta(table, bucket_ids, 0, k)


def promote(q: QuantizedDelta, x: int) -> QuantizedDelta:
    """Keep the 2^x - 1 buckets of largest exponent; merge the rest into 0.0.

    Ranking ignores sign; when a cutoff splits buckets of equal exponent,
    the positive-sign bucket is kept first. The output always carries a
    zero bucket (possibly empty) in the last position, so promote is
    idempotent for a fixed x.
    """
    if x < 1:
        raise DomainError("promotion needs at least one index bit")
    table = q.table
    nonzero = [i for i in range(len(table)) if i != table.zero_bucket_index]
    if any(table.keys[i] is None for i in nonzero):
        raise DomainError("promotion requires exponent-keyed buckets")
    nonzero.sort(key=lambda i: (-table.keys[i][1], -table.keys[i][0]))

    keep = nonzero[: (1 << x) - 1]
    k_new = len(keep) + 1
    remap = np.full(len(table), k_new - 1, dtype=np.int64)
    if keep:
        remap[np.asarray(keep, dtype=np.int64)] = np.arange(len(keep))

    indices = remap[q.indices]
    reps = np.append(table.representatives[keep], np.float32(0.0)).astype(np.float32)
    merged_count = int(table.counts.sum() - table.counts[keep].sum())
    counts = np.append(table.counts[keep], merged_count)
    keys = [table.keys[i] for i in keep] + [None]

    new_table = BucketTable(keys, reps, counts, k_new - 1)
    return QuantizedDelta(new_table, indices, x, q.pre_promotion_buckets)


def dequantize(q: QuantizedDelta) -> DeltaVector:
    """Replace each element by its bucket representative."""
    reps = q.table.representatives
    if int(q.indices.max()) >= reps.size:
        raise CorruptionError("bucket index out of range")
    return DeltaVector(reps[q.indices])


def quantized_size_bits(n: int, k: int, b: int = 32) -> int:
    """Size of the quantized form: n index fields plus k stored floats.

    Index fields are whole bits, ceil(log2 k) each (k=1 needs none).
    """
    if n < 1:
        raise DomainError("element count must be at least 1")
    if k < 1:
        raise DomainError("bucket count must be at least 1")
    if b not in (32, 64):
        raise DomainError("float width must be 32 or 64 bits")
    index_bits = (k - 1).bit_length()
    return n * index_bits + k * b


def raw_compression_rate(n: int, k: int, b: int = 32) -> float:
    """Ratio of the raw size n*b to the quantized size."""
    return (n * b) / quantized_size_bits(n, k, b)


def index_bits_for(k: int) -> int:
    """Whole bits needed to index k buckets."""
    if k < 1:
        raise DomainError("bucket count must be at least 1")
    return (k - 1).bit_length()


def bucket_mse(delta: DeltaVector, q: QuantizedDelta) -> float:
    """Mean squared error of the quantized delta against the original."""
    approx = dequantize(q).values.astype(np.float64)
    orig = delta.values.astype(np.float64)
    return float(np.mean((orig - approx) ** 2))
