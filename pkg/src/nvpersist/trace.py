"""First-iteration access traces and the version-routing classifier.

Each kernel iteration is profiled once, element by element. From the trace
we find every element's first write and the index coverage of each segment
that writes the object, then decide per read site whether it must see the
consistent (pre-update) or working (post-update) version.
"""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, UnsupportedOperation
from .ipv import IPVRuntime, Version
from .kernels import ELEM_SIZE, ArrayAccessor, RegionAccessor, VersionedAccessor


class Op(enum.Enum):
    READ = "R"
    WRITE = "W"


@dataclass(frozen=True)
class TraceRecord:
    site: str
    segment: int
    op: Op
    object_id: str
    index: int


class Classification(enum.Enum):
    BASIC_RULE = "basic_rule"
    POST_UPDATE_SWITCH = "post_update_switch"
    NONUNIFORM = "nonuniform"


CHECKPOINT_BYPASS = "checkpoint_bypass"


@dataclass
class TransformPlan:
    object_id: str
    classification: Classification
    site_versions: dict[str, Version] = field(default_factory=dict)
    fallback: str | None = None
    reason: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "object": self.object_id,
            "classification": self.classification.value,
            "site_versions": {s: v.value for s, v in sorted(self.site_versions.items())},
            "fallback": self.fallback,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> TransformPlan:
        raw = json.loads(text)
        return cls(raw["object"], Classification(raw["classification"]),
                   {s: Version(v) for s, v in raw["site_versions"].items()},
                   raw.get("fallback"))


class AccessTrace(list):
    """Program-ordered list of :class:`TraceRecord`."""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for r in self:
            w.writerow([r.site, r.segment, r.op.value, r.object_id, r.index])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> AccessTrace:
        return cls(TraceRecord(site, int(seg), Op(op), obj, int(idx))
                   for site, seg, op, obj, idx in csv.reader(io.StringIO(text)))


def record_trace(kernel, object_ids=("u",), size: int = 64, seed: int = 0) -> AccessTrace:
    """Run iteration 1 of ``kernel`` element by element and record every access."""
    if not callable(getattr(kernel, "iteration", None)):
        raise UnsupportedOperation(f"{kernel!r} has no instrumented iteration")
    records: list[TraceRecord] = []
    u = kernel.init(size, seed)
    kernel.iteration(ArrayAccessor(u, trace=records), size, 1, seed, chunk=1)
    wanted = set(object_ids)
    return AccessTrace(r for r in records if r.object_id in wanted)


def classify(trace, object_id: str = "u") -> TransformPlan:
    records = [r for r in trace if r.object_id == object_id]
    first_write: dict[int, int] = {}
    coverage: dict[int, set[int]] = {}
    read_sites: dict[str, set[bool]] = {}
    write_sites: set[str] = set()
    touched: set[int] = set()
    for pos, r in enumerate(records):
        touched.add(r.index)
        if r.op is Op.WRITE:
            first_write.setdefault(r.index, pos)
            coverage.setdefault(r.segment, set()).add(r.index)
            write_sites.add(r.site)
    for pos, r in enumerate(records):
        if r.op is Op.READ:
            fw = first_write.get(r.index)
            read_sites.setdefault(r.site, set()).add(fw is not None and fw < pos)

    def fallback(reason: str) -> TransformPlan:
        return TransformPlan(object_id, Classification.NONUNIFORM, {}, CHECKPOINT_BYPASS, reason)

    if not write_sites:
        return fallback("object is never written")
    covers = list(coverage.values())
    if any(c != covers[0] for c in covers[1:]):
        return fallback("write segments cover different index sets")
    if covers[0] != touched or len(covers[0]) != max(touched) + 1:
        # an element left unwritten would keep a stale value in the working version
        return fallback("writes do not cover the whole object")
    mixed = sorted(s for s, kinds in read_sites.items() if len(kinds) == 2)
    if mixed:
        return fallback(f"read sites see both updated and stale elements: {', '.join(mixed)}")

    versions = {s: Version.WORKING for s in write_sites}
    post = False
    for site, kinds in read_sites.items():
        after = True in kinds
        versions[site] = Version.WORKING if after else Version.CONSISTENT
        post = post or after
    kind = Classification.POST_UPDATE_SWITCH if post else Classification.BASIC_RULE
    return TransformPlan(object_id, kind, versions)


def _single_buffer(kernel, size, iterations, seed) -> np.ndarray:
    u = kernel.init(size, seed)
    for it in range(1, iterations + 1):
        kernel.iteration(ArrayAccessor(u), size, it, seed, chunk=1)
    return u


def run_versioned(kernel, plan: TransformPlan, iterations: int, size: int, seed: int = 0) -> np.ndarray:
    """Execute ``kernel`` dual-versioned under ``plan`` on a fresh emulated memory."""
    from .checkpoint import CheckpointStore
    from .core import PersistentMemory
    from .flush import FlushStrategy

    mem = PersistentMemory()
    init = kernel.init(size, seed)
    if plan.fallback == CHECKPOINT_BYPASS:
        rid = mem.region_create(size * ELEM_SIZE)
        mem.nt_write(rid, 0, init.tobytes())
        store = CheckpointStore(mem, rid, FlushStrategy.bypass(), object_id=1)
        store.checkpoint(0)
        for it in range(1, iterations + 1):
            kernel.iteration(RegionAccessor(mem, rid), size, it, seed, chunk=1)
            store.checkpoint(it)
        _, data = store.latest()
    else:
        rt = IPVRuntime(mem)
        obj = rt.ipv_alloc(size, ELEM_SIZE, init.tobytes())
        strategy = FlushStrategy.per_line()
        for it in range(1, iterations + 1):
            kernel.iteration(VersionedAccessor(rt, obj, plan.site_versions), size, it, seed, chunk=1)
            rt.persist_establish(obj, strategy)
        _, data = rt.recover_object(obj.object_id)
    return np.frombuffer(data, dtype=np.int64).copy()


def verify_plan(kernel, plan: TransformPlan, iterations: int, size: int, seed: int = 0) -> bool:
    """True iff the plan reproduces single-buffer results bit for bit."""
    expected = _single_buffer(kernel, size, iterations, seed)
    try:
        got = run_versioned(kernel, plan, iterations, size, seed)
    except ContractViolation:
        return False
    return expected.tobytes() == got.tobytes()
