from __future__ import annotations

import csv
import json

import pytest

from nvpersist.bench import (MODES, KernelSpec, OracleRun, RunConfig, report_emit, run, run_output,
                             run_with_crash)
from nvpersist.cli import main
from nvpersist.errors import InvalidArgument
from nvpersist.kernels import get_kernel, reference_run

SMALL = KernelSpec("jacobi1d", size=512, iterations=4, seed=3)


@pytest.mark.parametrize("kernel", ["jacobi1d", "double_update", "boundary_stencil"])
def test_every_mode_computes_the_reference_output(kernel):
    spec = KernelSpec(kernel, size=300, iterations=3, seed=1)
    expected = reference_run(get_kernel(kernel), 300, 3, 1)
    for mode in MODES:
        assert run_output(spec, mode).tolist() == expected.tolist(), mode


def test_native_breakdown_is_compute_only():
    r = run(SMALL, "native")
    assert r.breakdown["compute"] == r.total_cycles
    assert r.persistence_overhead == 0
    assert r.overhead_vs_native == 1.0


@pytest.mark.parametrize("mode", MODES)
def test_total_is_categories_minus_overlap(mode):
    r = run(SMALL, mode)
    b = r.breakdown
    attributed = b["compute"] + b["copy"] + b["cpu_flush"] + b["dram_flush"] + b["recovery"]
    assert r.total_cycles == attributed - b["overlapped_flush"]


def test_fallback_label_and_alias():
    spec = KernelSpec("boundary_stencil", size=128, iterations=2)
    assert run(spec, "ipv-sync").mode == "ipv(fallback)"
    assert run(spec, "ipv-async").mode == "ipv-async(fallback)"
    with pytest.raises(InvalidArgument):
        run(spec, "bogus")


def test_ipv_rejects_sparse_persistence():
    with pytest.raises(InvalidArgument):
        run(SMALL, "ipv", RunConfig(every=2))


def test_every_n_checkpoints_recover_within_n():
    cfg = RunConfig(every=3)
    spec = KernelSpec("jacobi1d", size=256, iterations=7)
    r = run_with_crash(spec, "chkp-bypass", (5, "mid-compute"), cfg)
    assert r.crash.recovered_epoch == 3 and r.crash.recomputed_iterations == 2
    assert r.crash.output_matches_oracle


@pytest.mark.parametrize("phase", ["mid-compute", "mid-flush", "at-barrier"])
def test_ipv_crash_at_iteration_seven(phase):
    spec = KernelSpec("jacobi1d", size=512, iterations=9)
    r = run_with_crash(spec, "ipv", (7, phase))
    assert (r.crash.recovered_epoch, r.crash.recomputed_iterations) == (6, 1)
    assert r.crash.output_matches_oracle


def test_async_and_fallback_recover():
    spec = KernelSpec("double_update", size=512, iterations=5)
    assert run_with_crash(spec, "ipv-async", (3, "mid-flush")).crash.output_matches_oracle
    spec = KernelSpec("boundary_stencil", size=512, iterations=5)
    assert run_with_crash(spec, "ipv", (4, "mid-flush")).crash.output_matches_oracle


def test_native_crash_is_unrecoverable():
    r = run_with_crash(SMALL, "native", (2, "mid-compute"))
    assert not r.crash.recoverable and r.crash.recovered_epoch is None


def test_crash_point_validation():
    oracle = OracleRun.prepare(SMALL, "ipv")
    with pytest.raises(InvalidArgument):
        oracle.crash_event(99, "mid-compute", 0.5)
    with pytest.raises(InvalidArgument):
        oracle.crash_event(1, "sometime", 0.5)


def test_report_emit(tmp_path):
    reports = [run(SMALL, m) for m in MODES]
    json_path, csv_path = report_emit(reports, tmp_path)
    data = json.loads(json_path.read_text())
    assert data[0]["breakdown"]["copy"] == 0
    rows = list(csv.DictReader(csv_path.open()))
    assert [r["mode"] for r in rows] == list(MODES)
    with pytest.raises(InvalidArgument):
        report_emit([], tmp_path)


def test_cli_is_deterministic(tmp_path, capsys):
    args = ["--size", "256", "--iterations", "3", "--mode", "all", "--dump-plan"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("report.json", "summary.csv", "plan.json", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_crash_and_options(tmp_path, capsys):
    code = main(["--kernel", "double_update", "--size", "256", "--iterations", "4", "--mode", "ipv-sync,chkp-par",
                 "--crash-at", "2:mid-flush", "--dram-cache", "16384", "--bandwidth-factor", "8",
                 "--out", str(tmp_path)])
    assert code == 0
    assert "recovered_epoch=1" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(["--crash-at", "3:later"])
    with pytest.raises(SystemExit):
        main(["--bandwidth-factor", "5"])


def test_cli_reports_failed_recovery(tmp_path, monkeypatch):
    import nvpersist.cli as cli
    real = cli.run_with_crash

    def broken(*a, **kw):
        r = real(*a, **kw)
        r.crash.output_matches_oracle = False
        return r
    monkeypatch.setattr(cli, "run_with_crash", broken)
    assert main(["--size", "64", "--iterations", "2", "--mode", "ipv", "--crash-at", "1:mid-compute",
                 "--out", str(tmp_path)]) == 2
