"""Cache flush strategies: per-line, parallel per-line, whole-cache, bypass."""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .core import PersistentMemory
from .errors import InvalidArgument, RangeError

MAX_FLUSH_THREADS = 16
WHOLE_CACHE_FACTOR = 10


class FlushKind(enum.Enum):
    PER_LINE = "per_line"
    PER_LINE_PARALLEL = "per_line_parallel"
    WHOLE_CACHE = "whole_cache"
    BYPASS = "bypass"


@dataclass(frozen=True)
class FlushStrategy:
    kind: FlushKind
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise InvalidArgument(f"workers must be >= 1, got {self.workers}")

    @classmethod
    def per_line(cls) -> FlushStrategy:
        return cls(FlushKind.PER_LINE)

    @classmethod
    def parallel(cls, workers: int) -> FlushStrategy:
        return cls(FlushKind.PER_LINE_PARALLEL, workers)

    @classmethod
    def whole_cache(cls) -> FlushStrategy:
        return cls(FlushKind.WHOLE_CACHE)

    @classmethod
    def bypass(cls) -> FlushStrategy:
        return cls(FlushKind.BYPASS)

    def __str__(self):
        if self.kind is FlushKind.PER_LINE_PARALLEL:
            return f"{self.kind.value}({self.workers})"
        return self.kind.value


def _line_bounds(mem: PersistentMemory, rid: int, offset: int, length: int) -> range:
    size = mem.region_length(rid)
    if offset < 0 or length < 0 or offset + length > size:
        raise RangeError(f"[{offset}, {offset + length}) outside region {rid} of {size} bytes")
    if length == 0:
        return range(0)
    ls = mem.config.line_size
    return range(offset // ls, (offset + length - 1) // ls + 1)


def _flush_lines(mem: PersistentMemory, rid: int, lines: range) -> int:
    cycles = 0
    for idx in lines:
        cycles += mem.config.flush_cost(mem.writeback_invalidate(rid, idx))
    return cycles


def flush_line(mem: PersistentMemory, rid: int, idx: int) -> int:
    """clflush analog: write back if Dirty, invalidate, pay the per-state cost."""
    state = mem.writeback_invalidate(rid, idx)
    return mem.clock.charge(mem.config.flush_cost(state), "cpu_flush")


def flush_range(mem: PersistentMemory, rid: int, offset: int, length: int) -> int:
    lines = _line_bounds(mem, rid, offset, length)
    return mem.clock.charge(_flush_lines(mem, rid, lines), "cpu_flush")


def flush_range_parallel(mem: PersistentMemory, rid: int, offset: int, length: int, workers: int) -> int:
    """Same effect as :func:`flush_range`; cost is the serial cost split across up to 16 threads.

    Lines are processed serially here; only the attributed cycles model the
    contiguous-block partitioning.
    """
    if workers < 1:
        raise InvalidArgument(f"workers must be >= 1, got {workers}")
    lines = _line_bounds(mem, rid, offset, length)
    serial = _flush_lines(mem, rid, lines)
    threads = min(workers, MAX_FLUSH_THREADS)
    return mem.clock.charge(-(-serial // threads), "cpu_flush")


def flush_whole_cache(mem: PersistentMemory) -> int:
    """WBINVD analog: write back and invalidate every cached line of every region.

    No fixed broadcast latency is charged, only per-line costs.
    """
    cycles = 0
    for rid, idx in mem.cached_keys():
        cycles += mem.config.flush_cost(mem.writeback_invalidate(rid, idx))
    return mem.clock.charge(cycles, "cpu_flush")


def choose_strategy(total_object_bytes: int, cache_capacity_bytes: int,
                    factor: int = WHOLE_CACHE_FACTOR) -> FlushStrategy:
    if total_object_bytes <= 0 or cache_capacity_bytes <= 0:
        raise InvalidArgument("object and cache sizes must be positive")
    if total_object_bytes >= factor * cache_capacity_bytes:
        return FlushStrategy.whole_cache()
    return FlushStrategy.per_line()


def apply_strategy(mem: PersistentMemory, strategy: FlushStrategy, rid: int) -> int:
    """Make every cached line of region ``rid`` durable using ``strategy``."""
    length = mem.region_length(rid)
    if strategy.kind is FlushKind.PER_LINE:
        return flush_range(mem, rid, 0, length)
    if strategy.kind is FlushKind.PER_LINE_PARALLEL:
        return flush_range_parallel(mem, rid, 0, length, strategy.workers)
    if strategy.kind is FlushKind.WHOLE_CACHE:
        return flush_whole_cache(mem)
    raise InvalidArgument("bypass strategy has nothing to flush; data must be written non-temporally")
