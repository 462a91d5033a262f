"""Bit-exact checkpoint container format and chained persistence.

Every artifact (delta chunk, base snapshot, merged super-step) shares one
little-endian framing:

    magic "LCCK" | version u8 | flags u8 | quantizer u8 | promo_bits u8
    step u64 | n u64 | k u16 | k_pre u16
    representatives f32[k]
    code table: symbol_count u16, then one u8 length per symbol
                (0 marks a symbol that never occurs)
    segment table, only when flags carry FULL_STATE:
        count u16, per segment: name_len u16, name utf-8, offset u64, len u64
    payload: bit_length u64, then ceil(bit_length/8) bytes
    crc32 u32 over everything above (polynomial 0xEDB88320)

Delta chunks carry a Huffman-coded index stream; RAW artifacts (base and
merged snapshots) carry the dense float32 state. Merged super-steps store
the resulting shadow state rather than an accumulated delta: float32
addition does not reassociate, so only a stored state can guarantee that
recovery through a merge is bit-identical to chunk-by-chunk recovery.

A chain directory holds base-<step>.lcc / delta-<step>.lcc /
super-<from>-<to>.lcc plus a MANIFEST text file appended after each
commit. Files land via write-to-temp-then-rename, so a crash leaves either
the previous chain or the new artifact, never a torn file; anything not
reachable from the MANIFEST is treated as uncommitted.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Sequence

import numpy as np

from .errors import ChainError, CorruptionError, DomainError, StorageError
from .expquant import BucketTable, QuantizedDelta, dequantize, quantized_size_bits
from .huffman import (
    BitStream,
    CodeTable,
    CodeTableCache,
    build_code_table,
    decode,
    encode,
)
from .state import ModelState, apply_delta, reconstruct

MAGIC = b"LCCK"
VERSION = 1

QUANT_RAW = 0
QUANT_EXP = 1
QUANT_RD = 2

FLAG_FULL_STATE = 0x01
FLAG_MERGED = 0x02

_HEADER = struct.Struct("<4sBBBBQQHH")
MANIFEST_NAME = "MANIFEST"


class SimulatedCrash(RuntimeError):
    """Raised by fault-injection points; used by crash-consistency tests."""


def _crc(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def _frequencies(q: QuantizedDelta) -> list[tuple[int, int]]:
    counts = q.bucket_frequencies()
    return [(int(s), int(c)) for s, c in enumerate(counts) if c > 0]


def serialize_chunk(
    q: QuantizedDelta,
    step: int,
    quantizer: int,
    *,
    cache: Optional[CodeTableCache] = None,
) -> bytes:
    """Serialize a quantized delta; same input yields identical bytes."""
    if quantizer not in (QUANT_EXP, QUANT_RD):
        raise DomainError("delta chunks must use the EXP or RD quantizer")
    k = len(q.table)
    if k > 0xFFFF or q.pre_promotion_buckets > 0xFFFF:
        raise DomainError("bucket count exceeds the u16 format field")

    freqs = _frequencies(q)
    if cache is not None:
        table, _ = cache.lookup_or_build(freqs)
    else:
        table = build_code_table(freqs)
    stream = encode(q.indices, table)

    out = bytearray()
    out += _HEADER.pack(
        MAGIC,
        VERSION,
        0,
        quantizer,
        q.promotion_bits,
        step,
        len(q),
        k,
        q.pre_promotion_buckets,
    )
    out += q.table.representatives.astype("<f4").tobytes()
    lengths = np.zeros(k, dtype=np.uint8)
    for sym, ln in zip(table.symbols, table.lengths):
        lengths[sym] = ln
    out += struct.pack("<H", k)
    out += lengths.tobytes()
    out += struct.pack("<Q", stream.bit_length)
    out += stream.payload
    out += struct.pack("<I", _crc(bytes(out)))
    return bytes(out)


def serialize_state(state: ModelState, step: int, *, merged: bool = False) -> bytes:
    """Serialize a full state snapshot (RAW, uncompressed float32)."""
    flags = FLAG_FULL_STATE | (FLAG_MERGED if merged else 0)
    out = bytearray()
    out += _HEADER.pack(MAGIC, VERSION, flags, QUANT_RAW, 0, step, len(state), 0, 0)
    out += struct.pack("<H", 0)  # empty code table
    out += struct.pack("<H", len(state.segments))
    for name, off, length in state.segments:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw))
        out += raw
        out += struct.pack("<QQ", off, length)
    values = state.values.astype("<f4").tobytes()
    out += struct.pack("<Q", len(state) * 32)
    out += values
    out += struct.pack("<I", _crc(bytes(out)))
    return bytes(out)


@dataclass
class Record:
    """One parsed artifact."""

    kind: str  # "delta" | "state"
    merged: bool
    quantizer: int
    step: int
    quantized: Optional[QuantizedDelta]
    state: Optional[ModelState]
    byte_size: int


class _Reader:
    def __init__(self, data: bytes, origin: str = "") -> None:
        self.data = data
        self.pos = 0
        self.origin = origin

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CorruptionError(
                f"{self.origin}truncated record at byte {self.pos} "
                f"(wanted {size} more bytes)"
            )
        piece = self.data[self.pos : self.pos + size]
        self.pos += size
        return piece

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))


_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")
_SEG = struct.Struct("<QQ")


def parse_record(data: bytes, *, origin: str = "") -> tuple[Record, int]:
    """Parse one record from the head of data; returns (record, bytes used)."""
    r = _Reader(data, origin)
    magic, version, flags, quantizer, promo, step, n, k, k_pre = r.unpack(_HEADER)
    if magic != MAGIC:
        raise CorruptionError(f"{origin}bad magic at byte 0: {magic!r}")
    if version != VERSION:
        raise CorruptionError(f"{origin}unsupported version {version}")
    if n < 1:
        raise CorruptionError(f"{origin}element count must be at least 1")

    reps = np.frombuffer(r.take(4 * k), dtype="<f4").astype(np.float32)
    (sym_count,) = r.unpack(_U16)
    lengths = np.frombuffer(r.take(sym_count), dtype=np.uint8)

    segments = None
    if flags & FLAG_FULL_STATE:
        (seg_count,) = r.unpack(_U16)
        segments = []
        for _ in range(seg_count):
            (name_len,) = r.unpack(_U16)
            name = r.take(name_len).decode("utf-8")
            off, length = r.unpack(_SEG)
            segments.append((name, off, length))

    (bit_length,) = r.unpack(_U64)
    payload = r.take((bit_length + 7) // 8)
    body_end = r.pos
    (crc_stored,) = r.unpack(_U32)
    if _crc(data[:body_end]) != crc_stored:
        raise CorruptionError(f"{origin}checksum mismatch at byte {body_end}")

    if flags & FLAG_FULL_STATE:
        if quantizer != QUANT_RAW or bit_length != n * 32:
            raise CorruptionError(f"{origin}malformed full-state record")
        values = np.frombuffer(payload, dtype="<f4").astype(np.float32)
        state = ModelState(values, segments or None)
        record = Record(
            "state", bool(flags & FLAG_MERGED), quantizer, step, None, state, r.pos
        )
        return record, r.pos

    if quantizer not in (QUANT_EXP, QUANT_RD) or k < 1:
        raise CorruptionError(f"{origin}malformed delta record")
    pairs = [(int(s), int(ln)) for s, ln in enumerate(lengths) if ln > 0]
    if not pairs:
        raise CorruptionError(f"{origin}delta record with empty code table")
    table = CodeTable(pairs)
    indices = decode(BitStream(payload, bit_length), table, n)
    counts = np.bincount(indices, minlength=k)
    zero_index = k - 1 if promo > 0 else None
    buckets = BucketTable([None] * k, reps, counts, zero_index)
    q = QuantizedDelta(buckets, indices, promo, k_pre)
    record = Record("delta", False, quantizer, step, q, None, r.pos)
    return record, r.pos


def write_chunk(
    q: QuantizedDelta,
    step: int,
    sink: BinaryIO,
    *,
    quantizer: int = QUANT_EXP,
    cache: Optional[CodeTableCache] = None,
) -> int:
    """Serialize a delta chunk to a byte stream; returns bytes written."""
    blob = serialize_chunk(q, step, quantizer, cache=cache)
    try:
        sink.write(blob)
    except OSError as exc:
        raise StorageError(f"chunk write failed: {exc}") from exc
    return len(blob)


def read_chunk(source: BinaryIO | bytes) -> tuple[QuantizedDelta, int]:
    """Exact inverse of write_chunk."""
    data = source if isinstance(source, bytes) else source.read()
    record, _ = parse_record(data)
    if record.kind != "delta":
        raise CorruptionError("expected a delta chunk, found a full-state record")
    return record.quantized, record.step


def write_state_chunk(
    state: ModelState, step: int, sink: BinaryIO, *, merged: bool = False
) -> int:
    blob = serialize_state(state, step, merged=merged)
    try:
        sink.write(blob)
    except OSError as exc:
        raise StorageError(f"state write failed: {exc}") from exc
    return len(blob)


def read_state_chunk(source: BinaryIO | bytes) -> tuple[ModelState, int, bool]:
    data = source if isinstance(source, bytes) else source.read()
    record, _ = parse_record(data)
    if record.kind != "state":
        raise CorruptionError("expected a full-state record, found a delta chunk")
    return record.state, record.step, record.merged


def merge_chunks(
    base: ModelState, chunks: Sequence[tuple[int, QuantizedDelta]]
) -> ModelState:
    """Fold a contiguous run of chunks onto a base state.

    Application replays exactly the encoder's shadow updates, so the
    result is bit-identical to applying the chunks one by one.
    """
    last = None
    for step, _ in chunks:
        if last is not None and step <= last:
            raise ChainError(f"chunk steps must increase, got {step} after {last}")
        last = step
    return reconstruct(base, [dequantize(q) for _, q in chunks])


@dataclass(frozen=True)
class ManifestEntry:
    kind: str  # "base" | "delta" | "super"
    step: int  # committed step (super: the end of its range)
    from_step: int  # super only; equals step otherwise
    filename: str


def _format_entry(e: ManifestEntry) -> str:
    if e.kind == "super":
        return f"super {e.from_step} {e.step} {e.filename}"
    return f"{e.kind} {e.step} {e.filename}"


def _parse_manifest(text: str, origin: str) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    # every committed line ends with a newline, so the piece after the last
    # newline is either empty or a torn append: drop it
    complete = text.split("\n")[:-1]
    for lineno, line in enumerate(complete, start=1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            if parts[0] == "super" and len(parts) == 4:
                entries.append(
                    ManifestEntry("super", int(parts[2]), int(parts[1]), parts[3])
                )
            elif parts[0] in ("base", "delta") and len(parts) == 3:
                entries.append(
                    ManifestEntry(parts[0], int(parts[1]), int(parts[1]), parts[2])
                )
            else:
                raise ValueError(line)
        except (ValueError, IndexError) as exc:
            raise CorruptionError(
                f"{origin}malformed manifest line {lineno}: {line!r}"
            ) from exc
    return entries


class ChainStore:
    """Single-writer checkpoint chain rooted at a directory.

    Readers may open the same directory concurrently; they only ever see
    committed artifacts because the MANIFEST is appended after the rename.
    """

    def __init__(self, root, *, create: bool = False) -> None:
        self.root = Path(root)
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
        if not self.root.is_dir():
            raise StorageError(f"chain directory {self.root} does not exist")
        self.failpoints: set[str] = set()
        self._entries = self._load_manifest()

    # -- manifest ---------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def _load_manifest(self) -> list[ManifestEntry]:
        if not self.manifest_path.exists():
            return []
        text = self.manifest_path.read_text(encoding="utf-8")
        return _parse_manifest(text, f"{self.manifest_path}: ")

    def entries(self) -> list[ManifestEntry]:
        return list(self._entries)

    def committed_steps(self) -> list[int]:
        """Steps recoverable from this chain, in commit order."""
        return [e.step for e in self._entries if e.kind in ("base", "delta")]

    def last_step(self) -> Optional[int]:
        steps = self.committed_steps()
        return steps[-1] if steps else None

    # -- commit protocol --------------------------------------------------

    def _maybe_fail(self, point: str) -> None:
        if point in self.failpoints:
            raise SimulatedCrash(point)

    def _commit(self, filename: str, blob: bytes, entry: ManifestEntry) -> int:
        final = self.root / filename
        tmp = self.root / f".tmp-{filename}"
        try:
            self._maybe_fail("before-temp")
            with open(tmp, "wb") as fh:
                fh.write(blob)
                fh.flush()
                os.fsync(fh.fileno())
            self._maybe_fail("after-temp")
            os.replace(tmp, final)
            self._maybe_fail("after-rename")
            with open(self.manifest_path, "a", encoding="utf-8") as fh:
                fh.write(_format_entry(entry) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._maybe_fail("after-manifest")
        except OSError as exc:
            tmp.unlink(missing_ok=True)
            raise StorageError(f"commit of {filename} failed: {exc}") from exc
        self._entries.append(entry)
        return len(blob)

    def _require_new_step(self, step: int) -> None:
        last = self.last_step()
        if last is not None and step <= last:
            raise ChainError(f"step {step} is not after the last committed step {last}")

    # -- writers ----------------------------------------------------------

    def write_base(self, state: ModelState, step: int) -> int:
        self._require_new_step(step)
        name = f"base-{step}.lcc"
        return self._commit(
            name, serialize_state(state, step), ManifestEntry("base", step, step, name)
        )

    def append_delta(
        self,
        q: QuantizedDelta,
        step: int,
        *,
        quantizer: int = QUANT_EXP,
        cache: Optional[CodeTableCache] = None,
    ) -> int:
        if not any(e.kind == "base" for e in self._entries):
            raise ChainError("chain has no base snapshot yet")
        self._require_new_step(step)
        name = f"delta-{step}.lcc"
        blob = serialize_chunk(q, step, quantizer, cache=cache)
        return self._commit(name, blob, ManifestEntry("delta", step, step, name))

    def write_super(self, to_step: int, from_step: Optional[int] = None) -> int:
        """Merge the run of deltas ending at to_step into one snapshot.

        The run starts right after the latest snapshot at or before
        to_step; passing from_step asserts that expectation and fails with
        a chain error when the committed steps disagree (a gap).
        """
        snap = self._latest_snapshot(to_step)
        if snap is None:
            raise ChainError("no snapshot precedes the merge range")
        run = [
            e.step
            for e in self._entries
            if e.kind == "delta" and snap.step < e.step <= to_step
        ]
        if not run or run[-1] != to_step:
            raise ChainError(f"no committed delta at step {to_step}")
        if from_step is not None and run[0] != from_step:
            raise ChainError(
                f"merge range starts at {run[0]}, not {from_step}: gap in chain"
            )
        state = self.recover(to_step)
        name = f"super-{run[0]}-{to_step}.lcc"
        blob = serialize_state(state, to_step, merged=True)
        return self._commit(
            name, blob, ManifestEntry("super", to_step, run[0], name)
        )

    # -- readers ----------------------------------------------------------

    def _read_record(self, entry: ManifestEntry) -> Record:
        path = self.root / entry.filename
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise ChainError(
                f"missing artifact for step {entry.step}: {entry.filename}"
            ) from None
        except OSError as exc:
            raise StorageError(f"cannot read {path}: {exc}") from exc
        record, _ = parse_record(data, origin=f"{path}: ")
        return record

    def read_delta(self, step: int) -> QuantizedDelta:
        for e in self._entries:
            if e.kind == "delta" and e.step == step:
                return self._read_record(e).quantized
        raise ChainError(f"no committed delta at step {step}")

    def _latest_snapshot(self, limit: int) -> Optional[ManifestEntry]:
        best = None
        for e in self._entries:
            if e.kind in ("base", "super") and e.step <= limit:
                if best is None or e.step >= best.step:
                    best = e
        return best

    def recover(self, target_step: int) -> ModelState:
        """Rebuild the shadow state at target_step, bit-for-bit.

        Starts from the latest snapshot at or before the target and folds
        the committed deltas in step order.
        """
        snap = self._latest_snapshot(target_step)
        if snap is None:
            raise ChainError(f"no snapshot at or before step {target_step}")
        state = self._read_record(snap).state
        if snap.step == target_step:
            return state
        run = sorted(
            (
                e
                for e in self._entries
                if e.kind == "delta" and snap.step < e.step <= target_step
            ),
            key=lambda e: e.step,
        )
        if not run or run[-1].step != target_step:
            raise ChainError(f"no committed checkpoint at step {target_step}")
        for entry in run:
            record = self._read_record(entry)
            state = apply_delta(state, dequantize(record.quantized))
        return state

    # -- statistics -------------------------------------------------------

    def chunk_stats(self) -> list["ChunkStats"]:
        rows = []
        for e in self._entries:
            path = self.root / e.filename
            size = path.stat().st_size
            if e.kind in ("base", "super"):
                rows.append(
                    ChunkStats(e.kind, e.step, None, None, None, None, None, None, size)
                )
                continue
            q = self._read_record(e).quantized
            k = len(q.table)
            k_pre = q.pre_promotion_buckets
            counts = q.bucket_frequencies()
            probs = counts[counts > 0] / counts.sum()
            entropy = float(np.sum(probs * np.log2(1.0 / probs)))
            bits_e = quantized_size_bits(len(q), k_pre)
            bits_ep = quantized_size_bits(len(q), k)
            rows.append(
                ChunkStats(
                    "delta",
                    e.step,
                    k_pre,
                    k,
                    q.promotion_bits,
                    entropy,
                    bits_e,
                    bits_ep,
                    size,
                )
            )
        return rows


@dataclass(frozen=True)
class ChunkStats:
    """Per-artifact compression accounting.

    bits_e / bits_ep are the analytic sizes of the quantized form before
    and after promotion (index fields plus stored representatives); the
    on-disk size includes the container framing.
    """

    kind: str
    step: int
    k_pre: Optional[int]
    k: Optional[int]
    promotion_bits: Optional[int]
    entropy: Optional[float]
    bits_e: Optional[int]
    bits_ep: Optional[int]
    file_bytes: int

    @property
    def bits_on_disk(self) -> int:
        return self.file_bytes * 8
