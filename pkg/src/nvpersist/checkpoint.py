"""Copy-based checkpointing into local NVM, the baselines in-place versioning is compared to."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .core import PersistentMemory
from .errors import InvalidArgument, UnsupportedOperation
from .flush import FlushKind, FlushStrategy, apply_strategy, flush_range, flush_range_parallel


@dataclass
class CheckpointBreakdown:
    dram_cache_flush: int = 0
    data_copy: int = 0
    cpu_cache_flush: int = 0

    @property
    def total(self) -> int:
        return self.dram_cache_flush + self.data_copy + self.cpu_cache_flush

    def __iadd__(self, other: CheckpointBreakdown):
        self.dram_cache_flush += other.dram_cache_flush
        self.data_copy += other.data_copy
        self.cpu_cache_flush += other.cpu_cache_flush
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def dram_flush(mem: PersistentMemory, rid: int) -> int:
    """Write back the DRAM-resident blocks of ``rid`` without evicting them."""
    if not mem.dram_enabled:
        raise UnsupportedOperation("DRAM cache layer is disabled")
    blocks = mem.dram_writeback(rid)
    return mem.clock.charge(blocks * mem.config.block_writeback_cost, "dram_flush")


def checkpoint_copy(mem: PersistentMemory, src: int, dst: int, strategy: FlushStrategy) -> CheckpointBreakdown:
    """Copy the logical contents of ``src`` into ``dst`` and make them durable."""
    if src == dst:
        raise InvalidArgument("checkpoint source and destination must differ")
    length = mem.region_length(src)
    if mem.region_length(dst) < length:
        raise InvalidArgument(f"destination region {dst} smaller than source {src}")
    before = mem.clock.snapshot()
    if mem.dram_enabled:
        dram_flush(mem, src)
    data, _ = mem.mem_read(src, 0, length, category="copy")
    if strategy.kind is FlushKind.BYPASS:
        mem.nt_write(dst, 0, data, category="copy")
    else:
        mem.mem_write(dst, 0, data, category="copy")
        if strategy.kind is FlushKind.PER_LINE:
            flush_range(mem, dst, 0, length)
        elif strategy.kind is FlushKind.PER_LINE_PARALLEL:
            flush_range_parallel(mem, dst, 0, length, strategy.workers)
        else:
            apply_strategy(mem, strategy, dst)
        if mem.dram_enabled:
            dram_flush(mem, dst)
    after = mem.clock.snapshot()

    def delta(cat):
        return after.get(cat, 0) - before.get(cat, 0)

    return CheckpointBreakdown(delta("dram_flush"), delta("copy"), delta("cpu_flush"))


class CheckpointStore:
    """Two alternating checkpoint slots plus a recovery marker.

    A crash in the middle of writing one slot leaves the other slot and its
    marker intact, so recovery always finds a complete checkpoint.
    """

    def __init__(self, mem: PersistentMemory, src: int, strategy: FlushStrategy, object_id: int):
        self.mem = mem
        self.src = src
        self.strategy = strategy
        self.object_id = object_id
        length = mem.region_length(src)
        self.slots = (mem.region_create(length), mem.region_create(length))
        self.epoch: int | None = None
        self.slot: int | None = None
        self.breakdown = CheckpointBreakdown()

    @property
    def next_slot(self) -> int:
        return 0 if self.slot is None else 1 - self.slot

    def checkpoint(self, epoch: int) -> CheckpointBreakdown:
        bd = self.copy()
        self.commit(epoch)
        return bd

    def copy(self) -> CheckpointBreakdown:
        """Write the next slot without committing it."""
        bd = checkpoint_copy(self.mem, self.src, self.slots[self.next_slot], self.strategy)
        self.breakdown += bd
        return bd

    def commit(self, epoch: int) -> int:
        if self.epoch is not None and epoch <= self.epoch:
            raise InvalidArgument(f"checkpoint epoch {epoch} not after {self.epoch}")
        slot = self.next_slot
        cycles = self.mem.markers.commit(self.object_id, slot, epoch)
        self.epoch, self.slot = epoch, slot
        return cycles

    def latest(self) -> tuple[int, bytes]:
        marker = self.mem.markers.latest(self.object_id)
        return marker.epoch, self.mem.recover(self.slots[marker.region])

    def restore(self) -> int:
        """After a crash: copy the newest durable checkpoint back into the source region."""
        self.mem.markers.reload()
        marker = self.mem.markers.latest(self.object_id)
        data = self.mem.recover(self.slots[marker.region])
        self.mem.nt_write(self.src, 0, data[:self.mem.region_length(self.src)], category="recovery")
        self.epoch, self.slot = marker.epoch, marker.region
        return marker.epoch
