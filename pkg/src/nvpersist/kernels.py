"""Instrumented iterative kernels and the accessors they run against.

A kernel iteration is written once against an accessor that exposes
``begin_segment``, ``load(site, lo, hi)`` and ``store(site, lo, hi, values)``
over a single target array ``u`` of int64. The same body then runs
single-buffered (original semantics), traced element by element, or
dual-versioned under a transform plan, depending on the accessor.

Values are integers so outputs can be compared bit for bit.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractViolation, InvalidArgument, NotFound

DTYPE = np.dtype("<i8")
ELEM_SIZE = DTYPE.itemsize


# -- accessors -----------------------------------------------------------------

class ArrayAccessor:
    """Single-buffer execution over a numpy array; optionally records a trace."""

    def __init__(self, u: np.ndarray, trace: list | None = None, object_id: str = "u"):
        self.u = u
        self.trace = trace
        self.object_id = object_id
        self.segment = 0

    def begin_segment(self, segment: int):
        self.segment = segment

    def load(self, site: str, lo: int, hi: int) -> np.ndarray:
        if self.trace is not None:
            from .trace import Op, TraceRecord
            self.trace.extend(TraceRecord(site, self.segment, Op.READ, self.object_id, i)
                              for i in range(lo, hi))
        return self.u[lo:hi].copy()

    def store(self, site: str, lo: int, hi: int, values: np.ndarray):
        if self.trace is not None:
            from .trace import Op, TraceRecord
            self.trace.extend(TraceRecord(site, self.segment, Op.WRITE, self.object_id, i)
                              for i in range(lo, hi))
        self.u[lo:hi] = values


class RegionAccessor:
    """Single-buffer execution in place on one persistent region."""

    def __init__(self, mem, rid: int):
        self.mem = mem
        self.rid = rid

    def begin_segment(self, segment: int):
        pass

    def load(self, site: str, lo: int, hi: int) -> np.ndarray:
        data, _ = self.mem.mem_read(self.rid, lo * ELEM_SIZE, (hi - lo) * ELEM_SIZE)
        return np.frombuffer(data, dtype=DTYPE).copy()

    def store(self, site: str, lo: int, hi: int, values: np.ndarray):
        self.mem.mem_write(self.rid, lo * ELEM_SIZE, np.asarray(values, dtype=DTYPE).tobytes())


class VersionedAccessor:
    """Dual-version execution: loads routed per plan site, stores to the working version."""

    def __init__(self, runtime, obj, site_versions: dict):
        self.runtime = runtime
        self.obj = obj
        self.site_versions = site_versions

    def begin_segment(self, segment: int):
        pass

    def _version(self, site: str):
        try:
            return self.site_versions[site]
        except KeyError:
            raise ContractViolation(f"plan has no version for access site {site!r}") from None

    def load(self, site: str, lo: int, hi: int) -> np.ndarray:
        data = self.runtime.read_range(self.obj, lo, hi, self._version(site))
        return np.frombuffer(data, dtype=DTYPE).copy()

    def store(self, site: str, lo: int, hi: int, values: np.ndarray):
        self.runtime.write_range(self.obj, lo, np.asarray(values, dtype=DTYPE).tobytes(),
                                 self._version(site))


# -- kernels -------------------------------------------------------------------

def _chunks(lo: int, hi: int, chunk: int):
    for start in range(lo, hi, chunk):
        yield start, min(start + chunk, hi)


class Kernel:
    name = ""
    pattern = ""
    objects = ("u",)
    min_size = 3

    def check_size(self, size: int):
        if size < self.min_size:
            raise InvalidArgument(f"{self.name} needs at least {self.min_size} elements")

    def init(self, size: int, seed: int) -> np.ndarray:
        self.check_size(size)
        rng = np.random.default_rng(seed)
        return rng.integers(0, 1 << 20, size, dtype=np.int64)

    def coefficients(self, size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([seed, 0xC0EF])
        return (rng.integers(1, 1 << 10, size, dtype=np.int64),
                rng.integers(1, 1 << 10, size, dtype=np.int64))

    def iteration(self, acc, size: int, it: int, seed: int, chunk: int = 1):
        raise NotImplementedError

    def reference(self, u: np.ndarray, it: int, seed: int) -> np.ndarray:
        """Vectorized single-buffer oracle for one iteration."""
        raise NotImplementedError


class Jacobi1D(Kernel):
    """u[i] <- (u[i-1] + u[i] + u[i+1]) // 3, boundaries held fixed.

    Runs in place: old neighbour values are carried forward in locals, so
    each element is read before it is overwritten and every element is
    written once per iteration (boundaries rewrite their old value).
    """

    name = "jacobi1d"
    pattern = "basic_rule"

    def iteration(self, acc, size, it, seed, chunk=1):
        acc.begin_segment(0)
        last = size - 1
        carried = acc.load("jacobi.prime", 0, 1)   # old u[lo]
        left = None                                # old u[lo - 1]
        for lo, hi in _chunks(0, size, chunk):
            right = acc.load("jacobi.right", lo + 1, min(hi + 1, size)) if lo + 1 < size else carried[:0]
            old = np.concatenate([carried, right])  # old u[lo .. min(hi, last)]
            n = hi - lo
            # ext[k] is old u[lo + k - 1]; out-of-range slots are padding and never used
            ext = np.zeros(n + 2, dtype=DTYPE)
            ext[1:len(old) + 1] = old
            if left is not None:
                ext[0] = left
            new = old[:n].copy()
            idx = np.arange(lo, hi)
            interior = (idx > 0) & (idx < last)
            new[interior] = ((ext[:n] + ext[1:n + 1] + ext[2:]) // 3)[interior]
            acc.store("jacobi.store", lo, hi, new)
            left = old[n - 1]
            carried = old[n:n + 1]

    def reference(self, u, it, seed):
        out = u.copy()
        out[1:-1] = (u[:-2] + u[1:-1] + u[2:]) // 3
        return out


class DoubleUpdate(Kernel):
    """Two sequential updates of each element in one loop body.

    The second statement must see the first statement's result.
    """

    name = "double_update"
    pattern = "post_update_switch"

    def iteration(self, acc, size, it, seed, chunk=1):
        e, f = self.coefficients(size, seed)
        acc.begin_segment(0)
        for lo, hi in _chunks(0, size, chunk):
            a = acc.load("double.first_read", lo, hi)
            acc.store("double.first_write", lo, hi, a + e[lo:hi])
            b = acc.load("double.second_read", lo, hi)
            acc.store("double.second_write", lo, hi, b - (b >> 3) + f[lo:hi])

    def reference(self, u, it, seed):
        e, f = self.coefficients(len(u), seed)
        a = u + e
        return a - (a >> 3) + f


class BoundaryStencil(Kernel):
    """Interior-only update followed by a full-range update.

    Elements 0 and N-1 miss the first loop, so the second loop reads a mix
    of updated and not-yet-updated elements.
    """

    name = "boundary_stencil"
    pattern = "nonuniform"

    def iteration(self, acc, size, it, seed, chunk=1):
        e, f = self.coefficients(size, seed)
        acc.begin_segment(0)
        for lo, hi in _chunks(1, size - 1, chunk):
            a = acc.load("boundary.interior_read", lo, hi)
            acc.store("boundary.interior_write", lo, hi, a + e[lo:hi])
        acc.begin_segment(1)
        for lo, hi in _chunks(0, size, chunk):
            b = acc.load("boundary.full_read", lo, hi)
            acc.store("boundary.full_write", lo, hi, b - (b >> 2) + f[lo:hi])

    def reference(self, u, it, seed):
        e, f = self.coefficients(len(u), seed)
        a = u.copy()
        a[1:-1] += e[1:-1]
        return a - (a >> 2) + f


KERNELS = {k.name: k for k in (Jacobi1D(), DoubleUpdate(), BoundaryStencil())}


def get_kernel(name: str) -> Kernel:
    try:
        return KERNELS[name]
    except KeyError:
        raise NotFound(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}") from None


def reference_run(kernel: Kernel, size: int, iterations: int, seed: int) -> np.ndarray:
    u = kernel.init(size, seed)
    for it in range(1, iterations + 1):
        u = kernel.reference(u, it, seed)
    return u
