"""Asynchronous encode pipeline with in-order commit.

Only delta computation must stay on the training critical path. Inside
submit() the delta is quantized and the shadow state updated (the next
delta is computed against the post-update shadow, so this cannot lag);
Huffman coding, serialization, and disk I/O then run on worker threads.
Completed blobs pass through a reordering buffer and a single committer
writes them in step order, so the on-disk chain is always a valid prefix.

When the encode queue is full the policy is either to block the submitter
or to drop the oldest unwritten jobs. Dropping a quantized delta would
orphan every later chunk (the shadow already absorbed it), so the drop
policy discards the whole backlog and enqueues one fresh full snapshot of
the current shadow instead: compression degrades under overload, chain
validity never does.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .errors import DomainError, PipelineError
from .expquant import QuantizedDelta, dequantize, promote, quantize
from .huffman import CodeTableCache
from .rd import RDConfig, rd_quantize
from .state import DeltaVector, ModelState, apply_delta, compute_delta
from .store import (
    QUANT_EXP,
    QUANT_RD,
    ChainStore,
    ManifestEntry,
    serialize_chunk,
    serialize_state,
)

POLICY_BLOCK = "block"
POLICY_DROP = "drop_oldest_unwritten"


@dataclass(frozen=True)
class PipelineBudget:
    """Backpressure contract for the encode pipeline.

    queue_depth 0 means fully synchronous operation (no worker threads).
    """

    max_inflight: int = 2
    queue_depth: int = 4
    policy: str = POLICY_BLOCK

    def __post_init__(self) -> None:
        if self.max_inflight < 1:
            raise DomainError("max_inflight must be at least 1")
        if self.queue_depth < 0:
            raise DomainError("queue_depth must be nonnegative")
        if self.policy not in (POLICY_BLOCK, POLICY_DROP):
            raise DomainError(f"unknown queue policy {self.policy!r}")


class Ticket:
    """Completion handle for one submitted step."""

    __slots__ = ("step", "status", "error", "bytes_written", "_done")

    def __init__(self, step: int) -> None:
        self.step = step
        self.status = "pending"  # pending | committed | dropped | failed
        self.error: Optional[BaseException] = None
        self.bytes_written = 0
        self._done = threading.Event()

    def _finish(self, status: str, error: Optional[BaseException] = None) -> None:
        self.status = status
        self.error = error
        self._done.set()

    def wait(self, timeout: Optional[float] = None) -> str:
        if not self._done.wait(timeout):
            raise PipelineError(f"timed out waiting on step {self.step}")
        return self.status

    def result(self, timeout: Optional[float] = None) -> int:
        """Bytes written; raises if the step failed."""
        status = self.wait(timeout)
        if status == "failed":
            raise PipelineError(f"step {self.step} failed") from self.error
        return self.bytes_written


@dataclass
class _Job:
    step: int
    ticket: Ticket
    quantized: Optional[QuantizedDelta]  # None for snapshot jobs
    snapshot: Optional[ModelState]
    quantizer: int


class CheckpointEncoder:
    """Owns the shadow state and feeds the chain store.

    One encoder is the single writer of its chain. submit() may be called
    from one thread only (the training loop); the shadow property reflects
    every submitted step because quantization happens inside submit().
    """

    def __init__(
        self,
        store: ChainStore,
        initial: ModelState,
        *,
        start_step: int = 0,
        quantizer: str = "exp",
        promotion_bits: int = 2,
        rd_config: Optional[RDConfig] = None,
        budget: Optional[PipelineBudget] = None,
        merge_every: int = 0,
        cache_mode: str = "exact",
    ) -> None:
        if quantizer not in ("exp", "rd"):
            raise DomainError(f"unknown quantizer {quantizer!r}")
        if quantizer == "rd" and rd_config is None:
            raise DomainError("rd quantizer needs an RDConfig")
        if promotion_bits < 0:
            raise DomainError("promotion_bits must be nonnegative")
        self.store = store
        self.quantizer = quantizer
        self.promotion_bits = promotion_bits
        self.rd_config = rd_config
        self.budget = budget or PipelineBudget(queue_depth=0)
        self.merge_every = merge_every
        self._cache = CodeTableCache(cache_mode)
        self._cache_lock = threading.Lock()

        self._shadow = initial
        self._deltas_since_snapshot = 0
        self._failure: Optional[BaseException] = None
        self._closed = False

        store.write_base(initial, start_step)

        self._async = self.budget.queue_depth > 0
        if self._async:
            self._lock = threading.Condition()
            self._queue: deque[_Job] = deque()
            self._ready: dict[int, tuple[_Job, bytes]] = {}
            self._commit_order: deque[int] = deque()
            self._stop = False
            self._workers = [
                threading.Thread(target=self._encode_loop, daemon=True, name=f"lcc-enc-{i}")
                for i in range(self.budget.max_inflight)
            ]
            self._committer = threading.Thread(
                target=self._commit_loop, daemon=True, name="lcc-commit"
            )
            for w in self._workers:
                w.start()
            self._committer.start()

    # -- public surface ----------------------------------------------------

    @property
    def shadow(self) -> ModelState:
        """Decoder-reproducible state after the last submitted step."""
        return self._shadow

    def submit(self, state: ModelState, step: int) -> Ticket:
        """Checkpoint a full model state (delta is taken against the shadow)."""
        return self.submit_delta(compute_delta(state, self._shadow), step)

    def submit_delta(self, delta: DeltaVector, step: int) -> Ticket:
        """Quantize, update the shadow, and hand off encoding + persistence.

        The caller owns the delta snapshot. On return the shadow already
        reflects this step, so the next delta can be computed immediately.
        """
        self._check_alive()
        quantized, qid = self._quantize(delta)
        self._shadow = apply_delta(self._shadow, dequantize(quantized))
        ticket = Ticket(step)
        job = _Job(step, ticket, quantized, None, qid)
        if not self._async:
            self._commit_sync(job)
            return ticket
        with self._lock:
            if len(self._queue) >= self.budget.queue_depth:
                if self.budget.policy == POLICY_BLOCK:
                    while len(self._queue) >= self.budget.queue_depth:
                        if self._failure is not None:
                            raise PipelineError("pipeline failed") from self._failure
                        self._lock.wait()
                else:
                    self._drop_backlog_locked()
                    job = _Job(step, ticket, None, self._shadow, QUANT_EXP)
            self._queue.append(job)
            self._commit_order.append(step)
            self._lock.notify_all()
        return ticket

    def flush(self, timeout: Optional[float] = None) -> None:
        """Block until every submitted step is committed, dropped, or failed."""
        if not self._async:
            self._raise_failure()
            return
        with self._lock:
            deadline_ok = self._lock.wait_for(
                lambda: (not self._queue and not self._ready and not self._commit_order)
                or self._failure is not None,
                timeout,
            )
        if not deadline_ok:
            raise PipelineError("flush timed out")
        self._raise_failure()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._async:
            try:
                self.flush()
            finally:
                with self._lock:
                    self._stop = True
                    self._lock.notify_all()
                for w in self._workers:
                    w.join()
                self._committer.join()

    def __enter__(self) -> "CheckpointEncoder":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:  # do not mask the active exception with flush errors
            self._closed = True
            if self._async:
                with self._lock:
                    self._stop = True
                    self._lock.notify_all()

    # -- internals ----------------------------------------------------------

    def _check_alive(self) -> None:
        if self._closed:
            raise PipelineError("encoder is closed")
        self._raise_failure()

    def _raise_failure(self) -> None:
        if self._failure is not None:
            raise PipelineError("pipeline failed") from self._failure

    def _quantize(self, delta: DeltaVector) -> tuple[QuantizedDelta, int]:
        if self.quantizer == "rd":
            return rd_quantize(delta, self.rd_config), QUANT_RD
        q = quantize(delta)
        if self.promotion_bits > 0:
            q = promote(q, self.promotion_bits)
        return q, QUANT_EXP

    def _serialize(self, job: _Job) -> bytes:
        if job.snapshot is not None:
            return serialize_state(job.snapshot, job.step)
        with self._cache_lock:
            return serialize_chunk(
                job.quantized, job.step, job.quantizer, cache=self._cache
            )

    def _commit_blob(self, job: _Job, blob: bytes) -> None:
        if job.snapshot is not None:
            name = f"base-{job.step}.lcc"
            entry = ManifestEntry("base", job.step, job.step, name)
        else:
            name = f"delta-{job.step}.lcc"
            entry = ManifestEntry("delta", job.step, job.step, name)
        self.store._require_new_step(job.step)
        job.ticket.bytes_written = self.store._commit(name, blob, entry)
        job.ticket._finish("committed")
        if job.snapshot is not None:
            self._deltas_since_snapshot = 0
        else:
            self._deltas_since_snapshot += 1
            if self.merge_every and self._deltas_since_snapshot >= self.merge_every:
                self.store.write_super(job.step)
                self._deltas_since_snapshot = 0

    def _commit_sync(self, job: _Job) -> None:
        try:
            self._commit_blob(job, self._serialize(job))
        except BaseException as exc:
            self._failure = exc
            job.ticket._finish("failed", exc)
            raise

    def _drop_backlog_locked(self) -> None:
        for stale in self._queue:
            stale.ticket._finish("dropped")
        dropped_steps = {stale.step for stale in self._queue}
        self._queue.clear()
        for step, (stale_job, _) in list(self._ready.items()):
            stale_job.ticket._finish("dropped")
            dropped_steps.add(step)
            del self._ready[step]
        self._commit_order = deque(
            s for s in self._commit_order if s not in dropped_steps
        )

    def _encode_loop(self) -> None:
        while True:
            with self._lock:
                while True:
                    if self._failure is not None:
                        return
                    if self._queue:
                        job = self._queue.popleft()
                        self._lock.notify_all()
                        break
                    if self._stop:
                        return
                    self._lock.wait()
            try:
                blob = self._serialize(job)
            except BaseException as exc:
                self._fail(exc, job)
                return
            with self._lock:
                if self._failure is not None:
                    job.ticket._finish("failed", self._failure)
                    return
                if job.ticket.status == "dropped":
                    continue
                self._ready[job.step] = (job, blob)
                self._lock.notify_all()

    def _commit_loop(self) -> None:
        while True:
            with self._lock:
                while True:
                    if self._failure is not None:
                        return
                    if self._commit_order and self._commit_order[0] in self._ready:
                        step = self._commit_order.popleft()
                        job, blob = self._ready.pop(step)
                        break
                    if self._stop:
                        return
                    self._lock.wait()
            try:
                self._commit_blob(job, blob)
            except BaseException as exc:
                self._fail(exc, job)
                return
            with self._lock:
                self._lock.notify_all()

    def _fail(self, exc: BaseException, job: Optional[_Job] = None) -> None:
        with self._lock:
            self._failure = exc
            if job is not None:
                job.ticket._finish("failed", exc)
            for pending in self._queue:
                pending.ticket._finish("failed", exc)
            self._queue.clear()
            for step, (stale_job, _) in list(self._ready.items()):
                stale_job.ticket._finish("failed", exc)
            self._ready.clear()
            self._commit_order.clear()
            self._lock.notify_all()


def async_encode_submit(
    encoder: CheckpointEncoder, delta: DeltaVector, step: int
) -> Ticket:
    """Submit one delta snapshot to an encoder session."""
    return encoder.submit_delta(delta, step)
