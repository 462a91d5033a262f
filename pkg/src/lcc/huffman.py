"""Canonical Huffman coding for bucket-index streams.

Code lengths come from a deterministic Huffman build (merge the two
lowest-count nodes, ties broken by smallest contained symbol id); the
per-symbol assignment then gives the shortest lengths to the most frequent
symbols (equal counts resolved by symbol id), and codes are assigned
canonically in (length, symbol) order. A decoder therefore needs only the
length table, and two frequency vectors with the same sorted counts yield
byte-identical streams, which is what makes table caching transparent.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CorruptionError, DomainError, EncodingError

_MAX_CODE_LEN = 64


@dataclass(frozen=True)
class BitStream:
    """MSB-first packed bit sequence; padding bits in the last byte are zero."""

    payload: bytes
    bit_length: int

    def __post_init__(self) -> None:
        if self.bit_length < 0:
            raise DomainError("bit length must be nonnegative")
        if len(self.payload) != (self.bit_length + 7) // 8:
            raise DomainError("payload length disagrees with bit_length")
        if self.bit_length % 8:
            tail_mask = (1 << (8 - self.bit_length % 8)) - 1
            if self.payload[-1] & tail_mask:
                raise DomainError("padding bits must be zero")


def _normalize(frequencies) -> list[tuple[int, int]]:
    if isinstance(frequencies, Mapping):
        items = [(int(s), int(c)) for s, c in frequencies.items()]
    else:
        items = [(int(s), int(c)) for s, c in frequencies]
    if not items:
        raise DomainError("frequency list is empty")
    if any(c < 1 for _, c in items):
        raise DomainError("frequency counts must be positive")
    if len({s for s, _ in items}) != len(items):
        raise DomainError("duplicate symbols in frequency list")
    return items


def _huffman_lengths(items: list[tuple[int, int]]) -> list[int]:
    # heap entries: (count, smallest symbol id in subtree, node id)
    heap = [(c, s, i) for i, (s, c) in enumerate(items)]
    heapq.heapify(heap)
    children: dict[int, tuple[int, int]] = {}
    next_id = len(items)
    while len(heap) > 1:
        c1, m1, n1 = heapq.heappop(heap)
        c2, m2, n2 = heapq.heappop(heap)
        children[next_id] = (n1, n2)
        heapq.heappush(heap, (c1 + c2, min(m1, m2), next_id))
        next_id += 1
    lengths = [0] * len(items)
    stack = [(heap[0][2], 0)]
    while stack:
        node, depth = stack.pop()
        if node < len(items):
            lengths[node] = max(1, depth)
        else:
            left, right = children[node]
            stack.append((left, depth + 1))
            stack.append((right, depth + 1))
    return lengths


class CodeTable:
    """Prefix code defined by per-symbol lengths, with canonical codes."""

    __slots__ = ("symbols", "lengths", "codes", "_len_by_symbol", "_code_by_symbol")

    def __init__(self, pairs: Iterable[tuple[int, int]]) -> None:
        entries = sorted((int(s), int(ln)) for s, ln in pairs)
        if not entries:
            raise DomainError("code table is empty")
        if any(ln < 1 or ln > _MAX_CODE_LEN for _, ln in entries):
            raise DomainError("code lengths must be in [1, 64]")
        if any(s < 0 for s, _ in entries):
            raise DomainError("symbols must be nonnegative")
        if len({s for s, _ in entries}) != len(entries):
            raise DomainError("duplicate symbols in code table")
        symbols = tuple(s for s, _ in entries)
        lengths = tuple(ln for _, ln in entries)
        max_len = max(lengths)
        if len(entries) >= 2:
            kraft = sum(1 << (max_len - ln) for ln in lengths)
            if kraft != 1 << max_len:
                raise DomainError("code lengths violate Kraft equality")

        # canonical assignment in (length, symbol) order
        codes = {}
        code = 0
        prev_len = 0
        for ln, sym in sorted(zip(lengths, symbols)):
            code <<= ln - prev_len
            codes[sym] = code
            code += 1
            prev_len = ln
        self.symbols = symbols
        self.lengths = lengths
        self.codes = tuple(codes[s] for s in symbols)

        width = symbols[-1] + 1
        len_by_symbol = np.zeros(width, dtype=np.uint8)
        code_by_symbol = np.zeros(width, dtype=np.uint64)
        for s, ln, c in zip(symbols, lengths, self.codes):
            len_by_symbol[s] = ln
            code_by_symbol[s] = c
        self._len_by_symbol = len_by_symbol
        self._code_by_symbol = code_by_symbol

    def __len__(self) -> int:
        return len(self.symbols)

    def length_of(self, symbol: int) -> int:
        if 0 <= symbol < self._len_by_symbol.size and self._len_by_symbol[symbol]:
            return int(self._len_by_symbol[symbol])
        raise EncodingError(f"symbol {symbol} not in code table")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CodeTable)
            and self.symbols == other.symbols
            and self.lengths == other.lengths
        )

    def __hash__(self) -> int:
        return hash((self.symbols, self.lengths))

    def __repr__(self) -> str:
        return f"CodeTable({dict(zip(self.symbols, self.lengths))})"


def build_code_table(frequencies) -> CodeTable:
    """Optimal deterministic prefix code for the given (symbol, count) pairs.

    Single-symbol alphabets use a 1-bit code: zero-bit codes would break
    stream framing.
    """
    items = _normalize(frequencies)
    if len(items) == 1:
        return CodeTable([(items[0][0], 1)])
    lengths = _huffman_lengths(items)
    by_rank = sorted(items, key=lambda t: (-t[1], t[0]))
    ranked_lengths = sorted(lengths)
    return CodeTable((sym, ln) for (sym, _), ln in zip(by_rank, ranked_lengths))


def encode(indices, table: CodeTable) -> BitStream:
    """Concatenate canonical codes for the symbol sequence, MSB-first."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        return BitStream(b"", 0)
    if int(idx.min()) < 0 or int(idx.max()) >= table._len_by_symbol.size:
        raise EncodingError("symbol outside code table range")
    lengths = table._len_by_symbol[idx].astype(np.int64)
    if np.any(lengths == 0):
        missing = int(idx[lengths == 0][0])
        raise EncodingError(f"symbol {missing} not in code table")
    codes = table._code_by_symbol[idx]

    total = int(lengths.sum())
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    bits = np.zeros(total, dtype=np.uint8)
    for pos in range(int(lengths.max())):
        mask = lengths > pos
        shift = (lengths[mask] - 1 - pos).astype(np.uint64)
        bits[starts[mask] + pos] = ((codes[mask] >> shift) & np.uint64(1)).astype(
            np.uint8
        )
    payload = np.packbits(bits).tobytes()
    return BitStream(payload, total)


def decode(stream: BitStream, table: CodeTable, n: int) -> np.ndarray:
    """Read exactly n symbols; the stream must then be fully consumed."""
    if n < 0:
        raise DomainError("symbol count must be nonnegative")
    if n == 0:
        if stream.bit_length:
            raise CorruptionError("trailing bits after final symbol")
        return np.zeros(0, dtype=np.int64)

    ordered = sorted(zip(table.lengths, table.symbols))
    max_len = ordered[-1][0]
    syms_sorted = [s for _, s in ordered]
    # canonical decode tables: first code value and first rank per length
    first_code = [0] * (max_len + 1)
    first_rank = [0] * (max_len + 1)
    count = [0] * (max_len + 1)
    code = 0
    prev_len = 0
    for rank, (ln, _) in enumerate(ordered):
        code <<= ln - prev_len
        if count[ln] == 0:
            first_code[ln] = code
            first_rank[ln] = rank
        count[ln] += 1
        code += 1
        prev_len = ln

    bits = np.unpackbits(np.frombuffer(stream.payload, dtype=np.uint8))
    bits = bits[: stream.bit_length].tolist()
    out = np.empty(n, dtype=np.int64)
    pos = 0
    total = stream.bit_length
    for produced in range(n):
        acc = 0
        ln = 0
        while True:
            if pos >= total:
                raise CorruptionError(
                    f"bitstream ended early at symbol {produced} of {n}"
                )
            acc = (acc << 1) | bits[pos]
            pos += 1
            ln += 1
            if ln > max_len:
                raise CorruptionError("no code matches the next bits")
            if count[ln] and first_code[ln] <= acc < first_code[ln] + count[ln]:
                out[produced] = syms_sorted[first_rank[ln] + (acc - first_code[ln])]
                break
    if pos != total:
        raise CorruptionError("trailing bits after final symbol")
    return out


def encoded_bit_count(frequencies, table: CodeTable) -> int:
    """Total bits the table spends on a multiset with these frequencies."""
    return sum(c * table.length_of(s) for s, c in _normalize(frequencies))


class CodeTableCache:
    """Reuses code tables across encoding steps.

    mode="exact" keys on the sorted count vector, which preserves both
    optimality and byte-identical output versus a fresh build. mode="rank"
    keys on the bucket count alone (reassigning lengths by frequency rank),
    trading optimality for reuse; it exists for fidelity experiments.
    """

    def __init__(self, mode: str = "exact") -> None:
        if mode not in ("exact", "rank"):
            raise DomainError(f"unknown cache mode {mode!r}")
        self.mode = mode
        self.hits = 0
        self.misses = 0
        self._ranked_lengths: dict[object, tuple[int, ...]] = {}

    def lookup_or_build(self, frequencies) -> tuple[CodeTable, bool]:
        items = _normalize(frequencies)
        by_rank = sorted(items, key=lambda t: (-t[1], t[0]))
        key: object
        if self.mode == "exact":
            key = tuple(c for _, c in by_rank)
        else:
            key = len(items)
        cached = self._ranked_lengths.get(key)
        if cached is None:
            self.misses += 1
            table = build_code_table(items)
            self._ranked_lengths[key] = tuple(
                table.length_of(s) for s, _ in by_rank
            )
            return table, False
        self.hits += 1
        table = CodeTable(
            (sym, ln) for (sym, _), ln in zip(by_rank, cached)
        )
        return table, True


def cache_lookup_or_build(frequencies, cache: CodeTableCache) -> tuple[CodeTable, bool]:
    return cache.lookup_or_build(frequencies)
