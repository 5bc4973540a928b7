"""Emulated non-volatile main memory behind a finite volatile cache.

Every region has a durable image. Stores land in a fully associative LRU
cache of fixed-size lines and only reach the image through write-back
(eviction or an explicit flush) or through non-temporal writes. ``crash()``
drops everything volatile. All costs are deterministic cycle counts charged
to a :class:`SimClock`.
"""
from __future__ import annotations

import contextlib
import enum
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgument, NotFound, RangeError, SimulatedCrash, UnsupportedOperation


class LineState(enum.Enum):
    DIRTY = "dirty"
    CLEAN = "clean"
    NOT_PRESENT = "not_present"


# clflush cycles per cache block by line state.
DEFAULT_COST_TABLE = {
    LineState.DIRTY: 228,
    LineState.CLEAN: 254,
    LineState.NOT_PRESENT: 350,
}

BANDWIDTH_FACTORS = (1, 8, 32)


@dataclass
class MemoryConfig:
    """Cache geometry and cost knobs.

    ``hit_cost``, ``miss_cost``, ``nt_cost_per_line`` and ``writeback_cost``
    are calibration knobs with no measured provenance. ``bandwidth_factor``
    models NVM at 1/factor of DRAM bandwidth and multiplies every cost that
    moves data into NVM (flushes, write-backs, non-temporal stores, DRAM
    cache write-back).
    """

    line_size: int = 64
    capacity_lines: int = 32
    hit_cost: int = 1
    miss_cost: int = 100
    nt_cost_per_line: int = 80
    writeback_cost: int = 0
    bandwidth_factor: int = 1
    cost_table: dict = field(default_factory=lambda: dict(DEFAULT_COST_TABLE))
    dram_cache_bytes: int | None = None
    dram_block_size: int = 4096
    dram_writeback_cost: int | None = None

    def __post_init__(self):
        if self.line_size <= 0 or self.line_size & (self.line_size - 1):
            raise InvalidArgument(f"line_size must be a power of two, got {self.line_size}")
        if self.capacity_lines < 1:
            raise InvalidArgument("capacity_lines must be >= 1")
        if self.bandwidth_factor < 1:
            raise InvalidArgument("bandwidth_factor must be >= 1")
        if self.dram_cache_bytes is not None:
            if self.dram_block_size % self.line_size:
                raise InvalidArgument("dram_block_size must be a multiple of line_size")
            if self.dram_cache_bytes < self.dram_block_size:
                raise InvalidArgument("dram cache smaller than one block")

    @property
    def cache_bytes(self) -> int:
        return self.line_size * self.capacity_lines

    @property
    def dram_enabled(self) -> bool:
        return self.dram_cache_bytes is not None

    @property
    def dram_capacity_blocks(self) -> int:
        return (self.dram_cache_bytes or 0) // self.dram_block_size

    @property
    def block_writeback_cost(self) -> int:
        if self.dram_writeback_cost is not None:
            return self.dram_writeback_cost * self.bandwidth_factor
        return self.miss_cost * self.bandwidth_factor

    def flush_cost(self, state: LineState) -> int:
        return self.cost_table[state] * self.bandwidth_factor


class SimClock:
    """Two deterministic timelines (main context, flush worker) plus per-category totals."""

    def __init__(self):
        self._lock = threading.Lock()
        self._local = threading.local()
        self.reset()

    def reset(self):
        with self._lock:
            self.main = 0
            self.worker = 0
            self.totals: dict[str, int] = {}

    @property
    def in_worker(self) -> bool:
        return getattr(self._local, "worker", False)

    @contextlib.contextmanager
    def on_worker(self):
        """Charges made by the current thread inside this block go to the worker timeline."""
        prev = self.in_worker
        self._local.worker = True
        try:
            yield self
        finally:
            self._local.worker = prev

    def now(self) -> int:
        return self.worker if self.in_worker else self.main

    def charge(self, cycles: int, category: str) -> int:
        if cycles < 0:
            raise InvalidArgument("negative cycle charge")
        with self._lock:
            if self.in_worker:
                self.worker += cycles
            else:
                self.main += cycles
            self.totals[category] = self.totals.get(category, 0) + cycles
        return cycles

    def advance_main_to(self, stamp: int):
        with self._lock:
            self.main = max(self.main, stamp)

    def advance_worker_to(self, stamp: int):
        with self._lock:
            self.worker = max(self.worker, stamp)

    def category(self, name: str) -> int:
        return self.totals.get(name, 0)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self.totals)

    @property
    def attributed(self) -> int:
        return sum(self.totals.values())


class _Line:
    __slots__ = ("payload", "dirty")

    def __init__(self, payload: bytearray, dirty: bool = False):
        self.payload = payload
        self.dirty = dirty


class PersistentMemory:
    """Byte-addressable NVM regions fronted by a volatile LRU cache.

    Safe for use from the main context and one flush worker; every public
    operation runs under a single re-entrant lock.
    """

    def __init__(self, config: MemoryConfig | None = None, *, log_writebacks: bool = False):
        self.config = config or MemoryConfig()
        self.clock = SimClock()
        self._lock = threading.RLock()
        self._images: dict[int, bytearray] = {}
        self._cacheable: set[int] = set()
        self._lines: OrderedDict[tuple[int, int], _Line] = OrderedDict()
        self._dram: OrderedDict[tuple[int, int], bytearray] = OrderedDict()
        self._next_id = 0
        self._crash_at: int | None = None
        self._markers = None
        self.marker_region: int | None = None
        self.events = 0
        self.crashes = 0
        self.hits = 0
        self.misses = 0
        self.writebacks = 0
        self.writeback_log: list[tuple[int, int]] | None = [] if log_writebacks else None

    # -- regions -----------------------------------------------------------

    def region_create(self, length: int, fill: int = 0, *, dram_cacheable: bool = False) -> int:
        if length <= 0:
            raise InvalidArgument(f"region length must be > 0, got {length}")
        if not 0 <= fill <= 0xFF:
            raise InvalidArgument(f"fill must be a byte value, got {fill}")
        with self._lock:
            rid = self._next_id
            self._next_id += 1
            self._images[rid] = bytearray([fill]) * length
            if dram_cacheable:
                self._cacheable.add(rid)
            return rid

    def regions(self) -> list[int]:
        return sorted(self._images)

    def region_length(self, rid: int) -> int:
        return len(self._image(rid))

    def line_count(self, rid: int) -> int:
        return -(-self.region_length(rid) // self.config.line_size)

    def _image(self, rid: int) -> bytearray:
        try:
            return self._images[rid]
        except KeyError:
            raise NotFound(f"unknown region {rid}") from None

    def _check(self, rid: int, offset: int, length: int):
        size = len(self._image(rid))
        if offset < 0 or length < 0 or offset + length > size:
            raise RangeError(f"[{offset}, {offset + length}) outside region {rid} of {size} bytes")

    def _line_span(self, rid: int, idx: int) -> tuple[int, int]:
        start = idx * self.config.line_size
        return start, min(start + self.config.line_size, len(self._images[rid]))

    def _block_span(self, rid: int, blk: int) -> tuple[int, int]:
        start = blk * self.config.dram_block_size
        return start, min(start + self.config.dram_block_size, len(self._images[rid]))

    # -- crash injection ---------------------------------------------------

    def arm_crash(self, at_event: int):
        """Crash right before line-level event number ``at_event`` executes."""
        with self._lock:
            self._crash_at = at_event

    def disarm_crash(self):
        with self._lock:
            self._crash_at = None

    def _tick(self):
        if self._crash_at is not None and self.events >= self._crash_at:
            event = self.events
            self._drop_volatile()
            raise SimulatedCrash(event)
        self.events += 1

    def crash(self):
        """Discard all cache lines and DRAM-cache contents without write-back."""
        with self._lock:
            self._drop_volatile()

    def _drop_volatile(self):
        self._lines.clear()
        self._dram.clear()
        self._crash_at = None
        self.crashes += 1

    def recover(self, rid: int) -> bytes:
        with self._lock:
            return bytes(self._image(rid))

    def logical_bytes(self, rid: int) -> bytes:
        """What a program would read now (cache over DRAM over image), with no cost or side effects."""
        with self._lock:
            out = bytearray(self._image(rid))
            bs = self.config.dram_block_size
            for (r, blk), block in self._dram.items():
                if r == rid:
                    out[blk * bs:blk * bs + len(block)] = block
            ls = self.config.line_size
            for (r, idx), line in self._lines.items():
                if r == rid:
                    out[idx * ls:idx * ls + len(line.payload)] = line.payload
            return bytes(out)

    # -- line machinery ----------------------------------------------------

    def _fetch(self, rid: int, idx: int) -> bytearray:
        start, end = self._line_span(rid, idx)
        if self._dram:
            blk = start // self.config.dram_block_size
            block = self._dram.get((rid, blk))
            if block is not None:
                self._dram.move_to_end((rid, blk))
                bstart = blk * self.config.dram_block_size
                return bytearray(block[start - bstart:end - bstart])
        return self._images[rid][start:end]

    def _writeback(self, key: tuple[int, int], payload: bytearray):
        rid, idx = key
        start, end = self._line_span(rid, idx)
        self.writebacks += 1
        if self.writeback_log is not None:
            self.writeback_log.append(key)
        if self.config.dram_enabled and rid in self._cacheable:
            blk = start // self.config.dram_block_size
            block = self._dram_install(rid, blk)
            bstart = blk * self.config.dram_block_size
            block[start - bstart:end - bstart] = payload
        else:
            self._images[rid][start:end] = payload

    def _dram_install(self, rid: int, blk: int) -> bytearray:
        key = (rid, blk)
        block = self._dram.get(key)
        if block is not None:
            self._dram.move_to_end(key)
            return block
        while len(self._dram) >= self.config.dram_capacity_blocks:
            (vrid, vblk), victim = self._dram.popitem(last=False)
            start, end = self._block_span(vrid, vblk)
            self._images[vrid][start:end] = victim
            self.clock.charge(self.config.block_writeback_cost, "dram_flush")
        start, end = self._block_span(rid, blk)
        block = self._images[rid][start:end]
        self._dram[key] = block
        return block

    def _touch(self, rid: int, idx: int) -> tuple[_Line, int]:
        key = (rid, idx)
        line = self._lines.get(key)
        if line is not None:
            self._lines.move_to_end(key)
            self.hits += 1
            return line, self.config.hit_cost
        cost = self.config.miss_cost
        self.misses += 1
        while len(self._lines) >= self.config.capacity_lines:
            vkey, victim = self._lines.popitem(last=False)
            if victim.dirty:
                self._writeback(vkey, victim.payload)
                cost += self.config.writeback_cost * self.config.bandwidth_factor
        line = _Line(self._fetch(rid, idx))
        self._lines[key] = line
        return line, cost

    # -- load/store paths --------------------------------------------------

    def mem_write(self, rid: int, offset: int, data: bytes, category: str = "compute") -> int:
        with self._lock:
            n = len(data)
            self._check(rid, offset, n)
            if n == 0:
                return 0
            ls = self.config.line_size
            view = memoryview(data)
            cycles = 0
            for idx in range(offset // ls, (offset + n - 1) // ls + 1):
                self._tick()
                line, cost = self._touch(rid, idx)
                cycles += cost
                base = idx * ls
                lo = max(offset, base)
                hi = min(offset + n, base + len(line.payload))
                line.payload[lo - base:hi - base] = view[lo - offset:hi - offset]
                line.dirty = True
            return self.clock.charge(cycles, category)

    def mem_read(self, rid: int, offset: int, length: int, category: str = "compute") -> tuple[bytes, int]:
        with self._lock:
            self._check(rid, offset, length)
            if length == 0:
                return b"", 0
            ls = self.config.line_size
            parts = []
            cycles = 0
            for idx in range(offset // ls, (offset + length - 1) // ls + 1):
                self._tick()
                line, cost = self._touch(rid, idx)
                cycles += cost
                base = idx * ls
                lo = max(offset, base)
                hi = min(offset + length, base + len(line.payload))
                parts.append(line.payload[lo - base:hi - base])
            self.clock.charge(cycles, category)
            return b"".join(parts), cycles

    def nt_write(self, rid: int, offset: int, data: bytes, category: str = "copy") -> int:
        """Non-temporal store: straight to the image, covering lines are invalidated.

        A Dirty line that is only partly overwritten is written back first so
        its other bytes are not lost.
        """
        with self._lock:
            n = len(data)
            self._check(rid, offset, n)
            if n == 0:
                return 0
            cfg = self.config
            ls = cfg.line_size
            image = self._images[rid]
            cycles = 0
            for idx in range(offset // ls, (offset + n - 1) // ls + 1):
                self._tick()
                line = self._lines.pop((rid, idx), None)
                if line is not None and line.dirty:
                    self._writeback((rid, idx), line.payload)
                    cycles += cfg.writeback_cost * cfg.bandwidth_factor
                cycles += cfg.nt_cost_per_line * cfg.bandwidth_factor
            image[offset:offset + n] = data
            if self._dram:
                self._nt_update_dram(rid, offset, data)
            return self.clock.charge(cycles, category)

    def _nt_update_dram(self, rid: int, offset: int, data: bytes):
        bs = self.config.dram_block_size
        n = len(data)
        for blk in range(offset // bs, (offset + n - 1) // bs + 1):
            block = self._dram.get((rid, blk))
            if block is None:
                continue
            base = blk * bs
            lo = max(offset, base)
            hi = min(offset + n, base + len(block))
            block[lo - base:hi - base] = data[lo - offset:hi - offset]

    # -- hooks used by the flush engine -------------------------------------

    def line_state(self, rid: int, idx: int) -> LineState:
        with self._lock:
            line = self._lines.get((rid, idx))
            if line is None:
                return LineState.NOT_PRESENT
            return LineState.DIRTY if line.dirty else LineState.CLEAN

    def writeback_invalidate(self, rid: int, idx: int) -> LineState:
        """Write back (if Dirty) and drop one line; returns its prior state. Charges nothing."""
        with self._lock:
            self._image(rid)
            if not 0 <= idx < self.line_count(rid):
                raise RangeError(f"line {idx} outside region {rid}")
            self._tick()
            line = self._lines.pop((rid, idx), None)
            if line is None:
                return LineState.NOT_PRESENT
            if line.dirty:
                self._writeback((rid, idx), line.payload)
                return LineState.DIRTY
            return LineState.CLEAN

    def cached_keys(self) -> list[tuple[int, int]]:
        with self._lock:
            return list(self._lines)

    def cached_line_count(self) -> int:
        return len(self._lines)

    @property
    def miss_rate(self) -> float:
        total = self.hits + self.misses
        return self.misses / total if total else 0.0

    # -- DRAM cache layer ----------------------------------------------------

    @property
    def dram_enabled(self) -> bool:
        return self.config.dram_enabled

    def dram_resident_blocks(self, rid: int) -> list[int]:
        with self._lock:
            return sorted(blk for (r, blk) in self._dram if r == rid)

    def dram_writeback(self, rid: int) -> int:
        """Write every resident block of ``rid`` to its image, keeping residency."""
        if not self.dram_enabled:
            raise UnsupportedOperation("DRAM cache layer is disabled")
        with self._lock:
            self._image(rid)
            blocks = self.dram_resident_blocks(rid)
            for blk in blocks:
                self._tick()
                start, end = self._block_span(rid, blk)
                self._images[rid][start:end] = self._dram[(rid, blk)]
            return len(blocks)

    # -- recovery markers and file backing -----------------------------------

    @property
    def markers(self):
        from .markers import MarkerLog

        with self._lock:
            if self._markers is None:
                self._markers = MarkerLog.create(self)
            return self._markers

    def dump(self, directory: str | os.PathLike):
        """Write durable state as ``<rid>.img`` files plus ``markers.bin``."""
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        with self._lock:
            for rid, image in self._images.items():
                if rid == self.marker_region:
                    continue
                (path / f"{rid}.img").write_bytes(bytes(image))
            markers = self._markers.durable_bytes() if self._markers is not None else b""
            (path / "markers.bin").write_bytes(markers)

    @classmethod
    def load(cls, directory: str | os.PathLike, config: MemoryConfig | None = None) -> PersistentMemory:
        from .markers import MarkerLog

        path = Path(directory)
        mem = cls(config)
        images = {}
        for f in path.glob("*.img"):
            try:
                images[int(f.stem)] = bytearray(f.read_bytes())
            except ValueError:
                continue
        if not images and not (path / "markers.bin").exists():
            raise NotFound(f"no persistent images under {path}")
        mem._images.update(images)
        mem._next_id = max(images, default=-1) + 1
        marker_file = path / "markers.bin"
        if marker_file.exists():
            mem._markers = MarkerLog.from_bytes(mem, marker_file.read_bytes())
        return mem
