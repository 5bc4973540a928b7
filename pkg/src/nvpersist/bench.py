"""Kernel runs under each persistence mode, crash injection, and reporting."""
from __future__ import annotations

import csv
import functools
import hashlib
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .asyncflush import AsyncFlushEngine, OverlapStats
from .checkpoint import CheckpointStore
from .core import MemoryConfig, PersistentMemory
from .errors import InvalidArgument, SimulatedCrash
from .flush import FlushStrategy, choose_strategy
from .ipv import EstablishMode, IPVRuntime
from .kernels import ELEM_SIZE, RegionAccessor, VersionedAccessor, get_kernel
from .trace import classify, record_trace

MODES = ("native", "chkp-clflush", "chkp-par", "chkp-bypass", "ipv", "ipv-async")
MODE_ALIASES = {"ipv-sync": "ipv"}
PHASES = ("mid-compute", "mid-flush", "at-barrier")
CATEGORIES = ("compute", "copy", "cpu_flush", "dram_flush", "recovery")

# object id used for the kernel's target array in the marker log
TARGET_OBJECT = 1


def canonical_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise InvalidArgument(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    return mode


@dataclass(frozen=True)
class KernelSpec:
    name: str = "jacobi1d"
    size: int = 4096
    iterations: int = 10
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    """Run geometry. The defaults put a 4096-element int64 object (32 KiB) at 16x a
    2 KiB cache, so the whole-cache strategy is selected for in-place versioning,
    and give each iteration enough non-target compute to hide about half of that flush.
    """

    cache_lines: int = 32
    line_size: int = 64
    dram_cache: int | None = None
    bandwidth_factor: int = 1
    workers: int = 16
    threshold_factor: int = 10
    every: int = 1
    elem_cycles: int = 2
    aux_cycles_per_elem: int = 1
    chunk_lines: int = 8

    def memory_config(self) -> MemoryConfig:
        return MemoryConfig(line_size=self.line_size, capacity_lines=self.cache_lines,
                            bandwidth_factor=self.bandwidth_factor, dram_cache_bytes=self.dram_cache)


@dataclass
class CrashOutcome:
    injected_at: dict
    recoverable: bool
    recovered_epoch: int | None
    recomputed_iterations: int | None
    output_matches_oracle: bool


@dataclass
class RunReport:
    mode: str
    kernel: str
    size: int
    iterations: int
    seed: int
    strategy: str
    classification: str | None
    total_cycles: int
    breakdown: dict
    overhead_vs_native: float
    overlapped_fraction: float
    overlap_per_iteration: list = field(default_factory=list)
    miss_rate: float = 0.0
    output_sha256: str = ""
    crash: CrashOutcome | None = None

    @property
    def persistence_overhead(self) -> int:
        b = self.breakdown
        return b["copy"] + b["cpu_flush"] + b["dram_flush"]

    def to_dict(self) -> dict:
        return asdict(self)


class _Execution:
    """One run of one kernel in one mode on a fresh emulated memory."""

    def __init__(self, spec: KernelSpec, mode: str, config: RunConfig):
        self.spec = spec
        self.mode = canonical_mode(mode)
        self.config = config
        self.kernel = get_kernel(spec.name)
        self.kernel.check_size(spec.size)
        if spec.iterations < 1:
            raise InvalidArgument("iterations must be >= 1")
        if config.every < 1:
            raise InvalidArgument("--every must be >= 1")
        self.mem = mem = PersistentMemory(config.memory_config())
        self.chunk = max(1, config.chunk_lines * config.line_size // ELEM_SIZE)
        self.label = self.mode
        self.plan = None
        self.store: CheckpointStore | None = None
        self.runtime: IPVRuntime | None = None
        self.engine: AsyncFlushEngine | None = None
        self.obj = None
        self.rid: int | None = None
        self.boundaries: dict[int, tuple] = {}
        self.overlap = OverlapStats()
        self.overlap_per_iteration: list[float] = []
        self.current = 0

        init = self.kernel.init(spec.size, spec.seed).tobytes()
        nbytes = len(init)
        cacheable = mem.dram_enabled
        self.is_async = self.mode == "ipv-async"
        if self.mode.startswith("ipv"):
            if config.every != 1:
                raise InvalidArgument("in-place versioning establishes persistence every iteration; use --every 1")
            self.plan = classify(record_trace(self.kernel, self.kernel.objects, spec.size, spec.seed))
        if self.mode.startswith("ipv") and self.plan.fallback is None:
            self.strategy = choose_strategy(nbytes, mem.config.cache_bytes, config.threshold_factor)
            self.runtime = IPVRuntime(mem, object_ids=iter(range(TARGET_OBJECT, TARGET_OBJECT + 1)))
            self.obj = self.runtime.ipv_alloc(spec.size, ELEM_SIZE, init)
            if self.is_async:
                self.engine = self.runtime.flush_init()
        elif self.mode != "native":
            if self.mode == "chkp-clflush":
                self.strategy = FlushStrategy.per_line()
            elif self.mode == "chkp-par":
                self.strategy = FlushStrategy.parallel(config.workers)
            else:
                self.strategy = FlushStrategy.bypass()
            if self.mode.startswith("ipv"):
                self.label = f"{self.mode}(fallback)"
                if self.is_async:
                    self.engine = AsyncFlushEngine(mem)
            self.rid = mem.region_create(nbytes, dram_cacheable=cacheable)
            mem.nt_write(self.rid, 0, init)
            self.store = CheckpointStore(mem, self.rid, self.strategy, TARGET_OBJECT)
            self.store.checkpoint(0)
        else:
            self.strategy = None
            self.rid = mem.region_create(nbytes, dram_cacheable=cacheable)
            mem.nt_write(self.rid, 0, init)
        mem.clock.reset()
        mem.hits = mem.misses = 0

    # -- iteration phases ----------------------------------------------------

    def _accessor(self):
        if self.obj is not None:
            return VersionedAccessor(self.runtime, self.obj, self.plan.site_versions)
        return RegionAccessor(self.mem, self.rid)

    def _update(self, it: int):
        size = self.spec.size
        self.kernel.iteration(self._accessor(), size, it, self.spec.seed, self.chunk)
        self.mem.clock.charge(self.config.elem_cycles * size, "compute")

    def _aux(self):
        self.mem.clock.charge(self.config.aux_cycles_per_elem * self.spec.size, "compute")

    def _persist_sync(self, it: int):
        if self.obj is not None:
            self.runtime.persist_establish(self.obj, self.strategy, EstablishMode.SYNC)
        else:
            self.store.checkpoint(it)

    def _persist_async(self, it: int) -> OverlapStats:
        if self.obj is not None:
            ticket = self.runtime.persist_establish(self.obj, self.strategy, EstablishMode.ASYNC)
            self._aux()
            return self.runtime.flush_barrier(ticket)
        store = self.store
        ticket = self.engine.submit(store.copy, object_id=TARGET_OBJECT, strategy=self.strategy,
                                    on_barrier=lambda: store.commit(it))
        self._aux()
        return self.engine.flush_barrier(ticket)

    def _iterations(self, first: int, last: int):
        mem = self.mem
        for it in range(first, last + 1):
            self.current = it
            start = mem.events
            self._update(it)
            compute_end = mem.events
            persist_end = None
            if self.mode == "native" or it % self.config.every:
                self._aux()
            elif self.is_async:
                stats = self._persist_async(it)
                self.overlap += stats
                self.overlap_per_iteration.append(round(stats.overlapped_fraction, 6))
                persist_end = mem.markers.commit_started_at
            else:
                self._aux()
                self._persist_sync(it)
                persist_end = mem.markers.commit_started_at
            self.boundaries[it] = (start, compute_end, persist_end, mem.events)

    # -- recovery ------------------------------------------------------------

    def _recover(self) -> int | None:
        if self.mode == "native":
            return None
        if self.obj is not None:
            if self.is_async:
                self.runtime.flush_shutdown()
                self.engine = self.runtime.flush_init()
            return self.runtime.restart(self.obj.object_id).epoch
        if self.engine is not None:
            self.engine.shutdown()
            self.engine = AsyncFlushEngine(self.mem)
        return self.store.restore()

    def output(self) -> bytes:
        if self.obj is not None:
            return self.mem.logical_bytes(self.obj.region(self.obj.consistent))
        return self.mem.logical_bytes(self.rid)

    def execute(self, crash_event: int | None = None) -> dict | None:
        """Run all iterations; with ``crash_event`` armed, crash there, recover and finish."""
        last = self.spec.iterations
        crash = None
        try:
            if crash_event is not None:
                self.mem.arm_crash(crash_event)
            try:
                self._iterations(1, last)
                self.mem.disarm_crash()
            except SimulatedCrash as exc:
                crashed_at = self.current
                epoch = self._recover()
                crash = {"iteration": crashed_at, "event": exc.event, "recovered_epoch": epoch}
                if epoch is not None:
                    self._iterations(epoch + 1, last)
        finally:
            if self.runtime is not None:
                self.runtime.flush_shutdown()
            elif self.engine is not None:
                self.engine.shutdown()
        return crash

    def report(self, native_cycles: int | None) -> RunReport:
        clock = self.mem.clock
        breakdown = {c: clock.category(c) for c in CATEGORIES}
        breakdown["exposed_flush"] = self.overlap.exposed_cycles
        breakdown["overlapped_flush"] = self.overlap.overlapped_cycles
        total = clock.main
        overhead = total / native_cycles if native_cycles else 1.0
        return RunReport(
            mode=self.label, kernel=self.spec.name, size=self.spec.size,
            iterations=self.spec.iterations, seed=self.spec.seed,
            strategy=str(self.strategy) if self.strategy is not None else "none",
            classification=self.plan.classification.value if self.plan is not None else None,
            total_cycles=total, breakdown=breakdown, overhead_vs_native=round(overhead, 9),
            overlapped_fraction=round(self.overlap.overlapped_fraction, 9),
            overlap_per_iteration=self.overlap_per_iteration,
            miss_rate=round(self.mem.miss_rate, 9),
            output_sha256=hashlib.sha256(self.output()).hexdigest(),
        )


@functools.lru_cache(maxsize=64)
def native_cycles(spec: KernelSpec, config: RunConfig) -> int:
    ex = _Execution(spec, "native", config)
    ex.execute()
    return ex.mem.clock.main


def run(spec: KernelSpec, mode: str, config: RunConfig = RunConfig()) -> RunReport:
    ex = _Execution(spec, mode, config)
    ex.execute()
    return ex.report(native_cycles(spec, config))


def run_output(spec: KernelSpec, mode: str, config: RunConfig = RunConfig()) -> np.ndarray:
    """Final kernel output of an uncrashed run, as int64 elements."""
    ex = _Execution(spec, mode, config)
    ex.execute()
    return np.frombuffer(ex.output(), dtype=np.int64).copy()


@dataclass
class OracleRun:
    """An uncrashed run kept as the reference for crash injection."""

    spec: KernelSpec
    mode: str
    config: RunConfig
    output: bytes
    boundaries: dict

    @classmethod
    def prepare(cls, spec: KernelSpec, mode: str, config: RunConfig = RunConfig()) -> OracleRun:
        ex = _Execution(spec, mode, config)
        ex.execute()
        return cls(spec, ex.mode, config, ex.output(), dict(ex.boundaries))

    def crash_event(self, iteration: int, phase: str, position: float) -> int:
        """Map (iteration, phase, position in [0, 1)) to a line-event index."""
        if phase not in PHASES:
            raise InvalidArgument(f"unknown crash phase {phase!r}; choose from {', '.join(PHASES)}")
        if iteration not in self.boundaries:
            raise InvalidArgument(f"iteration {iteration} outside 1..{self.spec.iterations}")
        if not 0.0 <= position < 1.0:
            raise InvalidArgument("position must be in [0, 1)")
        start, compute_end, persist_end, _ = self.boundaries[iteration]
        if persist_end is None or phase == "mid-compute":
            lo, hi = start, compute_end
        elif phase == "at-barrier":
            return persist_end
        else:
            lo, hi = compute_end, persist_end
            if hi <= lo:
                return persist_end
        return lo + int(position * (hi - lo))


def run_with_crash(spec: KernelSpec, mode: str, crash_at: tuple[int, str],
                   config: RunConfig = RunConfig(), *, position: float | None = None,
                   oracle: OracleRun | None = None) -> RunReport:
    """Inject one crash at ``crash_at = (iteration, phase)``, recover, finish, compare to the oracle."""
    mode = canonical_mode(mode)
    if oracle is None:
        oracle = OracleRun.prepare(spec, mode, config)
    iteration, phase = crash_at
    if position is None:
        position = random.Random(f"{spec.seed}:{iteration}:{phase}").random()
    event = oracle.crash_event(iteration, phase, position)
    ex = _Execution(spec, mode, config)
    info = ex.execute(crash_event=event)
    report = ex.report(native_cycles(spec, config))
    injected = {"iteration": iteration, "phase": phase, "event": event}
    if info is None:
        # the armed event was never reached; the run completed uncrashed
        report.crash = CrashOutcome(injected, True, spec.iterations, 0, ex.output() == oracle.output)
        return report
    epoch = info["recovered_epoch"]
    if epoch is None:
        report.crash = CrashOutcome(injected, False, None, None, False)
    else:
        report.crash = CrashOutcome(injected, True, epoch, info["iteration"] - epoch,
                                    ex.output() == oracle.output)
    return report


def sample_crash_points(spec: KernelSpec, count: int, seed: int = 0) -> list[tuple[int, str, float]]:
    rng = random.Random(seed)
    return [(rng.randint(1, spec.iterations), rng.choice(PHASES), rng.random()) for _ in range(count)]


SUMMARY_FIELDS = ("mode", "kernel", "total_cycles", "overhead_vs_native", "overlapped_fraction", "crash_outcome")


def _crash_outcome(report: RunReport) -> str:
    c = report.crash
    if c is None:
        return "none"
    if not c.recoverable:
        return "unrecoverable"
    return (f"epoch={c.recovered_epoch};recomputed={c.recomputed_iterations};"
            f"match={'yes' if c.output_matches_oracle else 'no'}")


def report_emit(reports: list[RunReport], out_dir) -> tuple[Path, Path]:
    """Write ``report.json`` and ``summary.csv`` under ``out_dir``."""
    if not reports:
        raise InvalidArgument("no reports to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    csv_path = out / "summary.csv"
    json_path.write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n")
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in reports:
            w.writerow([r.mode, r.kernel, r.total_cycles, f"{r.overhead_vs_native:.6f}",
                        f"{r.overlapped_fraction:.6f}", _crash_outcome(r)])
    return json_path, csv_path
