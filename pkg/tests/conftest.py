from __future__ import annotations

import pytest

from nvpersist.core import MemoryConfig, PersistentMemory


@pytest.fixture
def mem():
    return PersistentMemory(MemoryConfig())


@pytest.fixture
def small_mem():
    return PersistentMemory(MemoryConfig(capacity_lines=4))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
