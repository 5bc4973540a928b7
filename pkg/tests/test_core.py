from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvpersist.core import LineState, MemoryConfig, PersistentMemory, SimClock
from nvpersist.errors import InvalidArgument, NotFound, RangeError, SimulatedCrash
from nvpersist.flush import flush_range

REGION = 1024

op = st.one_of(
    st.tuples(st.just("w"), st.integers(0, REGION - 1), st.binary(min_size=1, max_size=200)),
    st.tuples(st.just("nt"), st.integers(0, REGION - 1), st.binary(min_size=1, max_size=200)),
    st.tuples(st.just("r"), st.integers(0, REGION - 1), st.integers(1, 200)),
    st.tuples(st.just("f"), st.integers(0, REGION - 1), st.integers(1, 200)),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(op, max_size=40), st.integers(1, 8))
def test_logical_contents_follow_a_flat_shadow(ops, capacity):
    mem = PersistentMemory(MemoryConfig(capacity_lines=capacity))
    rid = mem.region_create(REGION)
    shadow = bytearray(REGION)
    for kind, off, arg in ops:
        if kind in ("w", "nt"):
            data = arg[:REGION - off]
            (mem.mem_write if kind == "w" else mem.nt_write)(rid, off, data)
            shadow[off:off + len(data)] = data
        elif kind == "r":
            n = min(arg, REGION - off)
            data, _ = mem.mem_read(rid, off, n)
            assert data == bytes(shadow[off:off + n])
        else:
            flush_range(mem, rid, off, min(arg, REGION - off))
        assert mem.cached_line_count() <= capacity
    assert mem.logical_bytes(rid) == bytes(shadow)
    flush_range(mem, rid, 0, REGION)
    assert mem.recover(rid) == bytes(shadow)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, REGION - 1), st.binary(min_size=1, max_size=64)), max_size=20))
def test_crash_keeps_only_durable_bytes(writes):
    mem = PersistentMemory(MemoryConfig(capacity_lines=4))
    rid = mem.region_create(REGION)
    for off, data in writes:
        mem.mem_write(rid, off, data[:REGION - off])
    durable = mem.recover(rid)
    mem.crash()
    assert mem.cached_line_count() == 0
    assert mem.logical_bytes(rid) == durable
    mem.crash()
    assert mem.recover(rid) == durable


def test_hit_and_miss_costs(mem):
    rid = mem.region_create(256)
    assert mem.mem_write(rid, 0, b"x") == 100
    assert mem.mem_write(rid, 1, b"y") == 1
    assert mem.mem_write(rid, 60, b"z" * 8) == 1 + 100
    assert mem.hits == 2 and mem.misses == 2


def test_lru_eviction_writes_back_dirty_lines(small_mem):
    rid = small_mem.region_create(64 * 8)
    for i in range(5):
        small_mem.mem_write(rid, i * 64, bytes([i + 1]) * 64)
    assert small_mem.line_state(rid, 0) is LineState.NOT_PRESENT
    assert small_mem.recover(rid)[:64] == b"\x01" * 64
    assert small_mem.recover(rid)[64:128] == bytes(64)


def test_nt_write_is_cache_neutral_and_durable(mem):
    rid = mem.region_create(512)
    other = mem.region_create(512)
    mem.mem_write(other, 0, b"a" * 128)
    before = mem.cached_keys()
    hits, misses = mem.hits, mem.misses
    cost = mem.nt_write(rid, 0, b"q" * 512)
    assert cost == 8 * 80
    assert mem.cached_keys() == before
    assert (mem.hits, mem.misses) == (hits, misses)
    assert mem.recover(rid) == b"q" * 512


def test_nt_write_preserves_unwritten_bytes_of_a_dirty_line(mem):
    rid = mem.region_create(128)
    mem.mem_write(rid, 0, b"d" * 64)
    mem.nt_write(rid, 8, b"n" * 8)
    assert mem.line_state(rid, 0) is LineState.NOT_PRESENT
    assert mem.recover(rid)[:24] == b"d" * 8 + b"n" * 8 + b"d" * 8


def test_armed_crash_fires_before_the_event(mem):
    rid = mem.region_create(64 * 4)
    mem.arm_crash(mem.events + 2)
    with pytest.raises(SimulatedCrash) as info:
        mem.mem_write(rid, 0, b"z" * 256)
    assert info.value.event == 2
    assert mem.cached_line_count() == 0
    assert mem.recover(rid) == bytes(256)
    mem.mem_write(rid, 0, b"ok")


def test_determinism_of_costs_and_events():
    def trace():
        mem = PersistentMemory(MemoryConfig(capacity_lines=3))
        rid = mem.region_create(4096)
        out = []
        for i in range(200):
            out.append(mem.mem_write(rid, (i * 97) % 4000, bytes([i % 256]) * 40))
        out.append(flush_range(mem, rid, 0, 4096))
        return out, mem.events, mem.clock.main
    assert trace() == trace()


def test_bounds_and_arguments(mem):
    rid = mem.region_create(100)
    with pytest.raises(RangeError):
        mem.mem_write(rid, 90, b"x" * 20)
    with pytest.raises(RangeError):
        mem.mem_read(rid, -1, 4)
    with pytest.raises(NotFound):
        mem.mem_read(rid + 99, 0, 1)
    with pytest.raises(InvalidArgument):
        mem.region_create(0)
    with pytest.raises(InvalidArgument):
        MemoryConfig(line_size=48)


def test_bandwidth_factor_scales_data_movement():
    mem = PersistentMemory(MemoryConfig(bandwidth_factor=8))
    rid = mem.region_create(64)
    assert mem.nt_write(rid, 0, b"x" * 64) == 80 * 8
    assert mem.config.flush_cost(LineState.DIRTY) == 228 * 8


def test_dump_and_load_round_trip(tmp_path, mem):
    rid = mem.region_create(300)
    mem.nt_write(rid, 0, b"p" * 300)
    mem.markers.commit(7, 1, 3)
    mem.mem_write(rid, 0, b"volatile")
    mem.dump(tmp_path)
    assert (tmp_path / f"{rid}.img").read_bytes() == b"p" * 300
    loaded = PersistentMemory.load(tmp_path)
    assert loaded.recover(rid) == b"p" * 300
    marker = loaded.markers.latest(7)
    assert (marker.region, marker.epoch) == (1, 3)


def test_load_of_empty_directory_fails(tmp_path):
    with pytest.raises(NotFound):
        PersistentMemory.load(tmp_path)


def test_clock_worker_timeline_is_separate():
    clock = SimClock()
    clock.charge(10, "compute")
    with clock.on_worker():
        clock.charge(5, "cpu_flush")
    assert (clock.main, clock.worker) == (10, 5)
    assert clock.attributed == 15
    with pytest.raises(InvalidArgument):
        clock.charge(-1, "compute")


class TestDramLayer:
    def config(self):
        return MemoryConfig(capacity_lines=2, dram_cache_bytes=2 * 4096)

    def test_write_back_lands_in_dram_not_nvm(self):
        mem = PersistentMemory(self.config())
        rid = mem.region_create(3 * 4096, dram_cacheable=True)
        mem.mem_write(rid, 0, b"a" * 64)
        flush_range(mem, rid, 0, 64)
        assert mem.recover(rid)[:64] == bytes(64)
        assert mem.logical_bytes(rid)[:64] == b"a" * 64
        assert mem.dram_resident_blocks(rid) == [0]
        mem.crash()
        assert mem.logical_bytes(rid)[:64] == bytes(64)

    def test_dram_writeback_keeps_blocks_resident(self):
        mem = PersistentMemory(self.config())
        rid = mem.region_create(3 * 4096, dram_cacheable=True)
        mem.mem_write(rid, 4096, b"b" * 64)
        flush_range(mem, rid, 4096, 64)
        assert mem.dram_writeback(rid) == 1
        assert mem.recover(rid)[4096:4160] == b"b" * 64
        assert mem.dram_resident_blocks(rid) == [1]

    def test_block_eviction_writes_to_nvm(self):
        mem = PersistentMemory(self.config())
        rid = mem.region_create(3 * 4096, dram_cacheable=True)
        for blk in range(3):
            mem.mem_write(rid, blk * 4096, bytes([blk + 1]) * 64)
            flush_range(mem, rid, blk * 4096, 64)
        assert mem.recover(rid)[:64] == b"\x01" * 64
        assert mem.dram_resident_blocks(rid) == [1, 2]

    def test_non_cacheable_regions_skip_dram(self):
        mem = PersistentMemory(self.config())
        rid = mem.region_create(4096)
        mem.mem_write(rid, 0, b"c" * 64)
        flush_range(mem, rid, 0, 64)
        assert mem.recover(rid)[:64] == b"c" * 64
        assert mem.dram_resident_blocks(rid) == []
