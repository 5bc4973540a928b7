"""Helper-thread flushing: flush_init / flush_async / flush_barrier.

One worker thread drains a FIFO of flush jobs. Work done by a job is charged
to the worker timeline of the shared :class:`SimClock`; a job starts at
``max(enqueue stamp, worker free)``. A barrier moves the main timeline up to
the job's completion stamp, and whatever part of the flush was not hidden
behind main-context compute is reported as exposed.
"""
from __future__ import annotations

import itertools
import queue
import threading
from dataclasses import dataclass, field
from typing import Callable

from .core import PersistentMemory
from .errors import NotFound


@dataclass
class OverlapStats:
    flush_cycles: int = 0
    exposed_cycles: int = 0
    overlapped_cycles: int = 0

    def __iadd__(self, other: OverlapStats):
        self.flush_cycles += other.flush_cycles
        self.exposed_cycles += other.exposed_cycles
        self.overlapped_cycles += other.overlapped_cycles
        return self

    @property
    def overlapped_fraction(self) -> float:
        return self.overlapped_cycles / self.flush_cycles if self.flush_cycles else 0.0


@dataclass
class FlushRequest:
    ticket: int
    object_id: int | None
    region: int | None
    strategy: object
    job: Callable[[], object] = field(repr=False)
    on_barrier: Callable[[], object] | None = field(default=None, repr=False)
    enqueue_stamp: int = 0
    start_stamp: int = 0
    done_stamp: int = 0
    error: BaseException | None = None
    done: threading.Event = field(default_factory=threading.Event, repr=False)

    @property
    def flush_cycles(self) -> int:
        return self.done_stamp - self.start_stamp


_STOP = object()


class AsyncFlushEngine:
    def __init__(self, mem: PersistentMemory):
        self.mem = mem
        self._fifo: queue.Queue = queue.Queue()
        self._pending: dict[int, FlushRequest] = {}
        self._tickets = itertools.count(1)
        self.completed: list[FlushRequest] = []
        self.stats = OverlapStats()
        self._thread = threading.Thread(target=self._worker, name="flush-worker", daemon=True)
        self._thread.start()

    def _worker(self):
        clock = self.mem.clock
        while True:
            req = self._fifo.get()
            if req is _STOP:
                return
            with clock.on_worker():
                clock.advance_worker_to(req.enqueue_stamp)
                req.start_stamp = clock.worker
                try:
                    req.job()
                except BaseException as exc:  # re-raised on the main context at the barrier
                    req.error = exc
                req.done_stamp = clock.worker
            self.completed.append(req)
            req.done.set()

    def submit(self, job: Callable[[], object], *, object_id=None, region=None, strategy=None,
               on_barrier: Callable[[], object] | None = None) -> int:
        """Queue an arbitrary persistence job (a flush or an asynchronous checkpoint copy)."""
        ticket = next(self._tickets)
        req = FlushRequest(ticket, object_id, region, strategy, job, on_barrier,
                           enqueue_stamp=self.mem.clock.main)
        self._pending[ticket] = req
        self._fifo.put(req)
        return ticket

    def request(self, ticket: int) -> FlushRequest:
        try:
            return self._pending[ticket]
        except KeyError:
            raise NotFound(f"unknown or already waited ticket {ticket}") from None

    def wait(self, ticket: int) -> OverlapStats:
        """Block until ``ticket`` completes and settle the timelines; no commit hook runs."""
        req = self._pending.pop(ticket, None)
        if req is None:
            raise NotFound(f"unknown or already waited ticket {ticket}")
        req.done.wait()
        clock = self.mem.clock
        entry = clock.main
        flush = req.flush_cycles
        exposed = min(flush, max(0, req.done_stamp - entry))
        clock.advance_main_to(req.done_stamp)
        stats = OverlapStats(flush, exposed, flush - exposed)
        self.stats += stats
        if req.error is not None:
            raise req.error
        return stats

    def flush_barrier(self, ticket: int) -> OverlapStats:
        req = self.request(ticket)
        stats = self.wait(ticket)
        if req.on_barrier is not None:
            req.on_barrier()
        return stats

    @property
    def idle(self) -> bool:
        return not self._pending

    def shutdown(self):
        if self._thread.is_alive():
            self._fifo.put(_STOP)
            self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()

