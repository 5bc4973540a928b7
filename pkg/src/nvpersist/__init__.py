"""Emulated NVM persistence for iterative kernels: checkpointing and in-place versioning."""
from __future__ import annotations

from .asyncflush import AsyncFlushEngine, OverlapStats
from .bench import KernelSpec, RunConfig, RunReport, report_emit, run, run_with_crash
from .checkpoint import CheckpointBreakdown, CheckpointStore, checkpoint_copy, dram_flush
from .core import LineState, MemoryConfig, PersistentMemory, SimClock
from .errors import (AlreadyInitialized, ContractViolation, InvalidArgument, NotFound, NotInitialized,
                     PersistError, RangeError, SimulatedCrash, UnsupportedOperation)
from .flush import (FlushKind, FlushStrategy, apply_strategy, choose_strategy, flush_line, flush_range,
                    flush_range_parallel, flush_whole_cache)
from .ipv import EstablishMode, IPVRuntime, Slot, Version, VersionedObject
from .kernels import KERNELS, get_kernel
from .markers import MarkerLog, RecoveryMarker
from .trace import Classification, TransformPlan, classify, record_trace, verify_plan

__version__ = "0.1.0"
