"""Command-line entry point: ``nvpersist --kernel jacobi1d --mode all --out results``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .bench import MODES, PHASES, KernelSpec, RunConfig, canonical_mode, report_emit, run, run_with_crash
from .core import BANDWIDTH_FACTORS
from .errors import PersistError
from .kernels import KERNELS, get_kernel
from .trace import classify, record_trace

EXIT_RECOVERY_FAILED = 2


def _modes(text: str) -> list[str]:
    if text == "all":
        return list(MODES)
    try:
        return [canonical_mode(m.strip()) for m in text.split(",") if m.strip()]
    except PersistError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _dram(text: str) -> int | None:
    if text.lower() == "off":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a byte count or 'off'") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("DRAM cache size must be positive")
    return value


def _crash_at(text: str) -> tuple[int, str]:
    it, sep, phase = text.partition(":")
    if not sep or not it.isdigit() or phase not in PHASES:
        raise argparse.ArgumentTypeError(f"expected <iteration>:<{'|'.join(PHASES)}>")
    return int(it), phase


def _positive(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    defaults = RunConfig()
    spec = KernelSpec()
    p = argparse.ArgumentParser(prog="nvpersist",
                                description="Run iterative kernels under NVM persistence modes on an emulated memory.")
    p.add_argument("--kernel", choices=sorted(KERNELS), default=spec.name)
    p.add_argument("--mode", type=_modes, default=list(MODES),
                   help=f"comma list of {', '.join(MODES)} (ipv-sync = ipv), or 'all'")
    p.add_argument("--size", type=_positive, default=spec.size, help="elements (int64)")
    p.add_argument("--iterations", type=_positive, default=spec.iterations)
    p.add_argument("--seed", type=int, default=spec.seed)
    p.add_argument("--cache-lines", type=_positive, default=defaults.cache_lines)
    p.add_argument("--line-size", type=_positive, default=defaults.line_size)
    p.add_argument("--dram-cache", type=_dram, default=None, metavar="BYTES|off")
    p.add_argument("--bandwidth-factor", type=int, choices=BANDWIDTH_FACTORS, default=defaults.bandwidth_factor)
    p.add_argument("--workers", type=_positive, default=defaults.workers)
    p.add_argument("--threshold-factor", type=_positive, default=defaults.threshold_factor,
                   help="whole-cache flush once the object is this many times the cache size")
    p.add_argument("--crash-at", type=_crash_at, default=None, metavar="ITER:PHASE")
    p.add_argument("--every", type=_positive, default=defaults.every,
                   help="establish persistence every N iterations (checkpoint modes)")
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("--dump-plan", action="store_true",
                   help="also write the first-iteration trace (CSV) and the transform plan (JSON)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = KernelSpec(args.kernel, args.size, args.iterations, args.seed)
    config = replace(RunConfig(), cache_lines=args.cache_lines, line_size=args.line_size,
                     dram_cache=args.dram_cache, bandwidth_factor=args.bandwidth_factor,
                     workers=args.workers, threshold_factor=args.threshold_factor, every=args.every)
    reports = []
    failed = False
    try:
        for mode in dict.fromkeys(args.mode):
            if args.crash_at is None:
                reports.append(run(spec, mode, config))
                continue
            report = run_with_crash(spec, mode, args.crash_at, config)
            reports.append(report)
            # native has nothing to recover from; that outcome is expected, not a failure
            if mode != "native" and not (report.crash.recoverable and report.crash.output_matches_oracle):
                failed = True
        json_path, csv_path = report_emit(reports, args.out)
        if args.dump_plan:
            kernel = get_kernel(spec.name)
            trace = record_trace(kernel, kernel.objects, spec.size, spec.seed)
            (args.out / "trace.csv").write_text(trace.to_csv())
            (args.out / "plan.json").write_text(classify(trace).to_json() + "\n")
    except PersistError as exc:
        print(f"nvpersist: error: {exc}", file=sys.stderr)
        return 1
    for r in reports:
        line = f"{r.mode:22s} {r.kernel:16s} cycles={r.total_cycles:>12d} overhead={r.overhead_vs_native:8.4f}"
        if r.crash is not None:
            c = r.crash
            line += (f" recovered_epoch={c.recovered_epoch} recomputed={c.recomputed_iterations}"
                     f" match={c.output_matches_oracle}")
        print(line)
    print(f"wrote {json_path} and {csv_path}")
    if failed:
        print("nvpersist: recovery verification failed", file=sys.stderr)
        return EXIT_RECOVERY_FAILED
    return 0


if __name__ == "__main__":
    sys.exit(main())
