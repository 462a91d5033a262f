"""Model states, deltas, and shadow-state reconstruction.

The codec never stores a model state directly after the initial snapshot;
it stores lossy deltas and maintains a "shadow" copy that a decoder can
rebuild exactly. Everything here is elementwise float32 applied in fixed
index order, so encoder and decoder reach bit-identical states on any
IEEE-754 machine.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ShapeError

# (name, offset, length); segments tile the flat vector exactly.
Segment = tuple[str, int, int]


def _frozen_f32(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float32, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


class ModelState:
    """Flat float32 parameter vector with named segments tiling it exactly.

    Immutable after construction; safe to share across threads. NaN/Inf are
    rejected up front because a single NaN would poison every later delta.
    """

    __slots__ = ("values", "segments")

    def __init__(self, values, segments: Iterable[Segment] | None = None) -> None:
        arr = _frozen_f32(values)
        if arr.size == 0:
            raise DomainError("model state must hold at least one parameter")
        if not np.isfinite(arr).all():
            raise DomainError("model state contains NaN or Inf")
        if segments is None:
            segs: tuple[Segment, ...] = (("all", 0, int(arr.size)),)
        else:
            segs = tuple((str(n), int(o), int(ln)) for n, o, ln in segments)
            cursor = 0
            for name, off, length in segs:
                if off != cursor or length <= 0:
                    raise DomainError(
                        f"segment {name!r} breaks the exact tiling at offset {cursor}"
                    )
                cursor += length
            if cursor != arr.size:
                raise DomainError("segments do not cover the full vector")
        self.values = arr
        self.segments = segs

    def __len__(self) -> int:
        return int(self.values.size)

    def __repr__(self) -> str:
        return f"ModelState(n={len(self)}, segments={[s[0] for s in self.segments]})"

    def segment(self, name: str) -> np.ndarray:
        """View of one named segment."""
        for seg_name, off, length in self.segments:
            if seg_name == name:
                return self.values[off : off + length]
        raise KeyError(name)

    def bitwise_equal(self, other: "ModelState") -> bool:
        """Exact equality on the underlying bit patterns (distinguishes -0.0)."""
        return len(self) == len(other) and bool(
            np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32))
        )


class DeltaVector:
    """Dense float32 difference between a model state and the shadow state."""

    __slots__ = ("values",)

    def __init__(self, values) -> None:
        arr = _frozen_f32(values)
        if arr.size == 0:
            raise DomainError("delta must hold at least one element")
        self.values = arr

    def __len__(self) -> int:
        return int(self.values.size)

    def __repr__(self) -> str:
        return f"DeltaVector(n={len(self)})"


def compute_delta(current: ModelState, shadow: ModelState) -> DeltaVector:
    """Elementwise IEEE-754 float32 subtraction current - shadow."""
    if len(current) != len(shadow):
        raise ShapeError(f"state length {len(current)} != shadow length {len(shadow)}")
    return DeltaVector(np.subtract(current.values, shadow.values))


def apply_delta(shadow: ModelState, delta: DeltaVector) -> ModelState:
    """Elementwise float32 addition; segments are carried over from the shadow."""
    if len(shadow) != len(delta):
        raise ShapeError(f"shadow length {len(shadow)} != delta length {len(delta)}")
    return ModelState(np.add(shadow.values, delta.values), shadow.segments)


def reconstruct(initial: ModelState, deltas: Sequence[DeltaVector]) -> ModelState:
    """Left-fold apply_delta over the chain, in order.

    The fold order is fixed (chain order, index order within each add), so
    the result is reproducible bit-for-bit and equals the encoder's shadow
    state after the last encoded step.
    """
    state = initial
    for delta in deltas:
        state = apply_delta(state, delta)
    return state
