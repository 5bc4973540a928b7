"""In-place versioning: two versions per object with alternating roles.

Writes always go to the working version. At each persistence establishment
point the working version is flushed, a recovery marker naming it is
committed, and the roles swap, so the freshly flushed data becomes the
consistent version that the next iteration reads from. No data is copied.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

from .asyncflush import AsyncFlushEngine, OverlapStats
from .checkpoint import dram_flush
from .core import PersistentMemory
from .errors import (AlreadyInitialized, ContractViolation, InvalidArgument, NotFound,
                     NotInitialized, RangeError)
from .flush import FlushKind, FlushStrategy, apply_strategy


class Version(enum.Enum):
    WORKING = "working"
    CONSISTENT = "consistent"


class Slot(enum.IntEnum):
    A = 0
    B = 1

    @property
    def other(self) -> Slot:
        return Slot(1 - self)


class EstablishMode(enum.Enum):
    SYNC = "sync"
    ASYNC = "async"


@dataclass
class VersionedObject:
    object_id: int
    region_a: int
    region_b: int
    element_size: int
    element_count: int
    working: Slot = Slot.B
    epoch: int = 0
    in_flight: bool = False

    @property
    def consistent(self) -> Slot:
        return self.working.other

    @property
    def nbytes(self) -> int:
        return self.element_size * self.element_count

    def region(self, slot: Slot) -> int:
        return self.region_a if slot is Slot.A else self.region_b

    def region_for(self, version: Version) -> int:
        return self.region(self.working if version is Version.WORKING else self.consistent)


class IPVRuntime:
    def __init__(self, mem: PersistentMemory, *, object_ids=None):
        self.mem = mem
        self.objects: dict[int, VersionedObject] = {}
        self.engine: AsyncFlushEngine | None = None
        self._ids = object_ids if object_ids is not None else itertools.count(1)

    # -- allocation ----------------------------------------------------------

    def ipv_alloc(self, element_count: int, element_size: int, init: bytes,
                  object_id: int | None = None) -> VersionedObject:
        if element_count <= 0 or element_size <= 0:
            raise InvalidArgument("element count and size must be > 0")
        nbytes = element_count * element_size
        if len(init) != nbytes:
            raise InvalidArgument(f"init is {len(init)} bytes, expected {nbytes}")
        oid = next(self._ids) if object_id is None else object_id
        if oid in self.objects:
            raise InvalidArgument(f"object {oid} already allocated")
        cacheable = self.mem.dram_enabled
        a = self.mem.region_create(nbytes, dram_cacheable=cacheable)
        b = self.mem.region_create(nbytes, dram_cacheable=cacheable)
        obj = VersionedObject(oid, a, b, element_size, element_count)
        self.mem.mem_write(a, 0, init)
        apply_strategy(self.mem, FlushStrategy.per_line(), a)
        if self.mem.dram_enabled:
            dram_flush(self.mem, a)
        self.mem.markers.commit(oid, Slot.A, 0)
        self.objects[oid] = obj
        return obj

    def attach(self, object_id: int, region_a: int, region_b: int,
               element_count: int, element_size: int) -> VersionedObject:
        """Register an object whose regions already exist (e.g. loaded from files)."""
        obj = VersionedObject(object_id, region_a, region_b, element_size, element_count)
        self.objects[object_id] = obj
        return obj

    # -- element access ------------------------------------------------------

    def _span(self, obj: VersionedObject, lo: int, hi: int) -> tuple[int, int]:
        if not 0 <= lo <= hi <= obj.element_count:
            raise RangeError(f"elements [{lo}, {hi}) outside object {obj.object_id}")
        return lo * obj.element_size, (hi - lo) * obj.element_size

    def write_range(self, obj: VersionedObject, lo: int, data: bytes,
                    version: Version = Version.WORKING, category: str = "compute") -> int:
        if version is not Version.WORKING:
            raise ContractViolation(f"write to consistent version of object {obj.object_id}")
        if obj.in_flight:
            raise ContractViolation(f"write to object {obj.object_id} while its flush is in flight")
        if len(data) % obj.element_size:
            raise InvalidArgument("data is not a whole number of elements")
        offset, _ = self._span(obj, lo, lo + len(data) // obj.element_size)
        return self.mem.mem_write(obj.region_for(version), offset, data, category=category)

    def read_range(self, obj: VersionedObject, lo: int, hi: int, version: Version,
                   category: str = "compute") -> bytes:
        offset, length = self._span(obj, lo, hi)
        data, _ = self.mem.mem_read(obj.region_for(version), offset, length, category=category)
        return data

    def write_elem(self, obj: VersionedObject, index: int, data: bytes,
                   version: Version = Version.WORKING) -> int:
        if len(data) != obj.element_size:
            raise InvalidArgument(f"element is {obj.element_size} bytes, got {len(data)}")
        if not 0 <= index < obj.element_count:
            raise RangeError(f"index {index} outside object {obj.object_id}")
        return self.write_range(obj, index, data, version)

    def read_elem(self, obj: VersionedObject, index: int, version: Version) -> bytes:
        if not 0 <= index < obj.element_count:
            raise RangeError(f"index {index} outside object {obj.object_id}")
        return self.read_range(obj, index, index + 1, version)

    # -- persistence establishment -------------------------------------------

    def _flush_working(self, obj: VersionedObject, strategy: FlushStrategy) -> int:
        rid = obj.region(obj.working)
        cycles = apply_strategy(self.mem, strategy, rid)
        if self.mem.dram_enabled:
            cycles += dram_flush(self.mem, rid)
        return cycles

    def _commit(self, obj: VersionedObject) -> int:
        cycles = self.mem.markers.commit(obj.object_id, obj.working, obj.epoch + 1)
        obj.epoch += 1
        obj.working = obj.working.other
        obj.in_flight = False
        return cycles

    def persist_establish(self, obj: VersionedObject, strategy: FlushStrategy,
                          mode: EstablishMode = EstablishMode.SYNC):
        """Sync: flush, commit marker, swap roles; returns cycles. Async: returns a ticket."""
        if strategy.kind is FlushKind.BYPASS:
            raise InvalidArgument("in-place versioning needs a flushing strategy, not bypass")
        if obj.in_flight:
            raise ContractViolation(f"object {obj.object_id} already has a flush in flight")
        if mode is EstablishMode.ASYNC:
            return self.flush_async(obj, strategy)
        cycles = self._flush_working(obj, strategy)
        return cycles + self._commit(obj)

    def flush_init(self) -> AsyncFlushEngine:
        if self.engine is not None:
            raise AlreadyInitialized("flush engine already initialized")
        self.engine = AsyncFlushEngine(self.mem)
        return self.engine

    def flush_shutdown(self):
        if self.engine is not None:
            self.engine.shutdown()
            self.engine = None

    def _require_engine(self) -> AsyncFlushEngine:
        if self.engine is None:
            raise NotInitialized("flush_init() has not been called")
        return self.engine

    def flush_async(self, obj: VersionedObject, strategy: FlushStrategy) -> int:
        """Hand the working version to the helper thread; the caller must not write it until the barrier."""
        engine = self._require_engine()
        obj.in_flight = True
        return engine.submit(lambda: self._flush_working(obj, strategy),
                             object_id=obj.object_id, region=obj.working, strategy=strategy,
                             on_barrier=lambda: self._commit(obj))

    def flush_barrier(self, ticket: int) -> OverlapStats:
        """Wait for the flush, then commit the marker and swap roles on the main context."""
        return self._require_engine().flush_barrier(ticket)

    # -- recovery ------------------------------------------------------------

    def recover_object(self, object_id: int) -> tuple[int, bytes]:
        if object_id not in self.objects:
            raise NotFound(f"unknown object {object_id}")
        obj = self.objects[object_id]
        marker = self.mem.markers.latest(object_id)
        return marker.epoch, self.mem.recover(obj.region(Slot(marker.region)))

    def restart(self, object_id: int) -> VersionedObject:
        """Reset roles from the durable marker after a crash; the consistent version is used in place."""
        self.mem.markers.reload()
        obj = self.objects[object_id]
        marker = self.mem.markers.latest(object_id)
        obj.working = Slot(marker.region).other
        obj.epoch = marker.epoch
        obj.in_flight = False
        return obj
