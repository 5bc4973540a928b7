"""Append-only recovery marker log kept in its own persistent region.

Record layout (little-endian, 21 bytes, no padding)::

    object_id: u64 | region: u8 | epoch: u64 | crc32: u32

The checksum covers the first 17 bytes, so a record torn across two cache
lines by a crash is rejected and the previous record for that object wins.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

from .errors import InvalidArgument, NotFound, PersistError
from .flush import flush_range

RECORD = struct.Struct("<QBQI")
_BODY = struct.Struct("<QBQ")
DEFAULT_CAPACITY = 16384


@dataclass(frozen=True)
class RecoveryMarker:
    object_id: int
    region: int
    epoch: int


def encode(marker: RecoveryMarker) -> bytes:
    body = _BODY.pack(marker.object_id, marker.region, marker.epoch)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(raw: bytes) -> RecoveryMarker | None:
    object_id, region, epoch, crc = RECORD.unpack(raw)
    if zlib.crc32(raw[:_BODY.size]) != crc:
        return None
    return RecoveryMarker(object_id, region, epoch)


def scan(data: bytes) -> tuple[dict[int, RecoveryMarker], int]:
    """Parse a log image: last valid record per object, and the next free slot.

    Appends always resume right after the last valid record, so nothing valid
    can follow an invalid slot and the scan stops there.
    """
    latest: dict[int, RecoveryMarker] = {}
    slots = len(data) // RECORD.size
    for slot in range(slots):
        marker = decode(data[slot * RECORD.size:(slot + 1) * RECORD.size])
        if marker is None:
            return latest, slot
        latest[marker.object_id] = marker
    return latest, slots


class MarkerLog:
    def __init__(self, mem, rid: int, capacity: int):
        self.mem = mem
        self.rid = rid
        self.capacity = capacity
        self.commit_started_at: int | None = None
        self._committed, self._next = scan(mem.recover(rid))

    @classmethod
    def create(cls, mem, capacity: int = DEFAULT_CAPACITY) -> MarkerLog:
        rid = mem.region_create(capacity * RECORD.size)
        mem.marker_region = rid
        return cls(mem, rid, capacity)

    @classmethod
    def from_bytes(cls, mem, data: bytes, capacity: int = DEFAULT_CAPACITY) -> MarkerLog:
        capacity = max(capacity, len(data) // RECORD.size)
        rid = mem.region_create(capacity * RECORD.size)
        mem.nt_write(rid, 0, data[:len(data) - len(data) % RECORD.size], category="setup")
        mem.marker_region = rid
        return cls(mem, rid, capacity)

    def reload(self):
        """Re-read the durable log; needed after a crash discards volatile state."""
        self._committed, self._next = scan(self.mem.recover(self.rid))

    def commit(self, object_id: int, region: int, epoch: int) -> int:
        """Append and flush one record. Returns cycles (charged as cpu_flush)."""
        prev = self._committed.get(object_id)
        if prev is not None and epoch <= prev.epoch:
            raise InvalidArgument(f"marker epoch {epoch} not after committed epoch {prev.epoch}")
        if self._next >= self.capacity:
            raise PersistError("marker log full")
        marker = RecoveryMarker(object_id, region, epoch)
        offset = self._next * RECORD.size
        self.commit_started_at = self.mem.events
        cycles = self.mem.mem_write(self.rid, offset, encode(marker), category="cpu_flush")
        cycles += flush_range(self.mem, self.rid, offset, RECORD.size)
        self._committed[object_id] = marker
        self._next += 1
        return cycles

    def latest(self, object_id: int) -> RecoveryMarker:
        """Last durable marker for ``object_id`` (reads the image, never the cache)."""
        committed, _ = scan(self.mem.recover(self.rid))
        try:
            return committed[object_id]
        except KeyError:
            raise NotFound(f"no committed marker for object {object_id}") from None

    def durable_bytes(self) -> bytes:
        _, used = scan(self.mem.recover(self.rid))
        return self.mem.recover(self.rid)[:used * RECORD.size]
