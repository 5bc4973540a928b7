from __future__ import annotations

import pytest

from nvpersist.checkpoint import CheckpointStore, checkpoint_copy, dram_flush
from nvpersist.core import MemoryConfig, PersistentMemory
from nvpersist.errors import InvalidArgument, SimulatedCrash, UnsupportedOperation
from nvpersist.flush import FlushStrategy

N = 64 * 16


def fresh(**kw):
    mem = PersistentMemory(MemoryConfig(**kw))
    src = mem.region_create(N)
    mem.nt_write(src, 0, bytes(range(256)) * (N // 256))
    return mem, src


@pytest.mark.parametrize("strategy", [FlushStrategy.per_line(), FlushStrategy.parallel(4),
                                      FlushStrategy.bypass(), FlushStrategy.whole_cache()])
def test_copy_is_durable_for_every_strategy(strategy):
    mem, src = fresh()
    dst = mem.region_create(N)
    mem.mem_write(src, 0, b"new")
    bd = checkpoint_copy(mem, src, dst, strategy)
    mem.crash()
    assert mem.recover(dst) == b"new" + (bytes(range(256)) * 4)[3:]
    assert bd.total == bd.data_copy + bd.cpu_cache_flush + bd.dram_cache_flush


def test_breakdown_numbers_for_cold_source():
    mem, src = fresh()
    dst = mem.region_create(N)
    bd = checkpoint_copy(mem, src, dst, FlushStrategy.per_line())
    # 16 read misses + 16 write misses; then 16 dirty flushes
    assert bd.data_copy == 32 * 100
    assert bd.cpu_cache_flush == 16 * 228
    mem2, src2 = fresh()
    bd2 = checkpoint_copy(mem2, src2, mem2.region_create(N), FlushStrategy.bypass())
    assert bd2.data_copy == 16 * 100 + 16 * 80
    assert bd2.cpu_cache_flush == 0


def test_copy_argument_errors():
    mem, src = fresh()
    with pytest.raises(InvalidArgument):
        checkpoint_copy(mem, src, src, FlushStrategy.bypass())
    with pytest.raises(InvalidArgument):
        checkpoint_copy(mem, src, mem.region_create(N // 2), FlushStrategy.bypass())
    with pytest.raises(UnsupportedOperation):
        dram_flush(mem, src)


def test_dram_flush_is_charged_when_enabled():
    mem = PersistentMemory(MemoryConfig(dram_cache_bytes=8 * 4096))
    src = mem.region_create(N, dram_cacheable=True)
    dst = mem.region_create(N, dram_cacheable=True)
    mem.mem_write(src, 0, b"z" * N)
    bd = checkpoint_copy(mem, src, dst, FlushStrategy.per_line())
    assert bd.dram_cache_flush > 0
    mem.crash()
    assert mem.recover(dst) == b"z" * N


def test_store_alternates_slots_and_restores_latest():
    mem, src = fresh()
    store = CheckpointStore(mem, src, FlushStrategy.bypass(), object_id=3)
    store.checkpoint(0)
    mem.mem_write(src, 0, b"one")
    store.checkpoint(2)
    first_slot = store.slot
    mem.mem_write(src, 0, b"two")
    store.checkpoint(5)
    assert store.slot != first_slot
    mem.mem_write(src, 0, b"xxx")
    mem.crash()
    assert store.restore() == 5
    assert mem.recover(src)[:3] == b"two"
    with pytest.raises(InvalidArgument):
        store.commit(5)


def test_crash_during_copy_keeps_previous_checkpoint():
    for k in range(0, 80, 7):
        mem, src = fresh()
        store = CheckpointStore(mem, src, FlushStrategy.per_line(), object_id=1)
        store.checkpoint(0)
        base = mem.recover(src)
        mem.mem_write(src, 0, b"later")
        mem.arm_crash(mem.events + k)
        try:
            store.checkpoint(1)
            mem.disarm_crash()
        except SimulatedCrash:
            pass
        epoch, data = store.latest()
        assert data == (base if epoch == 0 else b"later" + base[5:])
