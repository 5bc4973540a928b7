from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvpersist.errors import InvalidArgument, NotFound, SimulatedCrash
from nvpersist.markers import RECORD, RecoveryMarker, decode, encode, scan


@given(st.integers(0, 2**64 - 1), st.integers(0, 255), st.integers(0, 2**64 - 1))
def test_encode_decode_round_trip(oid, region, epoch):
    m = RecoveryMarker(oid, region, epoch)
    raw = encode(m)
    assert len(raw) == RECORD.size == 21
    assert decode(raw) == m


def test_corrupt_record_is_rejected():
    raw = bytearray(encode(RecoveryMarker(1, 0, 5)))
    raw[9] ^= 0xFF
    assert decode(bytes(raw)) is None


def test_scan_keeps_last_record_per_object():
    data = b"".join(encode(RecoveryMarker(o, r, e)) for o, r, e in [(1, 0, 1), (2, 1, 1), (1, 1, 2)])
    latest, nxt = scan(data + bytes(RECORD.size))
    assert latest[1] == RecoveryMarker(1, 1, 2)
    assert latest[2].epoch == 1
    assert nxt == 3


def test_commit_is_durable_and_monotonic(mem):
    log = mem.markers
    log.commit(4, 1, 1)
    mem.crash()
    log.reload()
    assert log.latest(4) == RecoveryMarker(4, 1, 1)
    with pytest.raises(InvalidArgument):
        log.commit(4, 0, 1)
    with pytest.raises(NotFound):
        log.latest(5)


def test_crash_inside_commit_keeps_previous_marker(mem):
    log = mem.markers
    log.commit(9, 0, 1)
    # the second record fits in one line: one write event, one flush event
    for k in range(2):
        mem.arm_crash(mem.events + k)
        with pytest.raises(SimulatedCrash):
            log.commit(9, 1, 2)
        log.reload()
        assert log.latest(9).epoch == 1
    log.commit(9, 1, 2)
    assert log.latest(9).epoch == 2
