"""End-to-end command-line interface behavior and exit codes."""

import os

import pytest

from marionette.cli import main
from marionette.corpus import kernel_path

VECADD = kernel_path("vecadd")


def _compile(tmp_path, *extra):
    out = str(tmp_path / "k.bs")
    rc = main(["compile", VECADD, "--out", out, *extra])
    return rc, out


def test_compile_summary(tmp_path, capsys):
    rc, out = _compile(tmp_path)
    assert rc == 0
    assert os.path.exists(out)
    text = capsys.readouterr().out
    assert "vecadd: II=1, PEs=4, waste=0" in text


def test_run_with_oracle_check(tmp_path, capsys):
    _, bs = _compile(tmp_path)
    rc = main(["run", bs, "--check-oracle"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "check=ok" in text
    assert "cycles=" in text


def test_run_writes_trace(tmp_path):
    _, bs = _compile(tmp_path)
    trace_path = str(tmp_path / "t.txt")
    rc = main(["run", bs, "--trace", trace_path])
    assert rc == 0
    with open(trace_path) as f:
        first = f.readline().split()
    assert len(first) >= 3 and first[0].isdigit()


def test_run_custom_memory(tmp_path, capsys):
    _, bs = _compile(tmp_path)
    mem = tmp_path / "m.txt"
    mem.write_text(
        "A: " + ",".join(str(i) for i in range(8)) + "\n"
        "B: " + ",".join("1" for _ in range(8)) + "\n"
        "C: " + ",".join("0" for _ in range(8)) + "\n")
    rc = main(["run", bs, "--mem", str(mem), "--check-oracle"])
    assert rc == 0
    assert "check=ok" in capsys.readouterr().out


def test_run_bad_memory_is_domain_error(tmp_path, capsys):
    _, bs = _compile(tmp_path)
    mem = tmp_path / "m.txt"
    mem.write_text("A: 1,2\n")      # wrong shape
    rc = main(["run", bs, "--mem", str(mem)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_missing_kernel_exit_1(capsys):
    rc = main(["compile", "no_such_kernel"])
    assert rc == 1
    assert "kernel not found" in capsys.readouterr().err


def test_unknown_strategy_exit_2(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["compile", VECADD, "--strategy", "speculation"])
    assert ei.value.code == 2


def test_unmappable_exit_1(tmp_path, capsys):
    arch = tmp_path / "a.ini"
    arch.write_text("rows = 1\ncols = 1\n")
    rc = main(["compile", kernel_path("gemm"), "--arch", str(arch),
               "--out", str(tmp_path / "g.bs")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_compare_csv_and_determinism(tmp_path, capsys):
    out1 = tmp_path / "r1.csv"
    out2 = tmp_path / "r2.csv"
    rc = main(["compare", "vecadd", "--out", str(out1)])
    assert rc == 0
    text = capsys.readouterr().out
    assert text.startswith("kernel,model,strategy,cycles")
    assert "geomean marionette vs predication" in text
    rc = main(["compare", "vecadd", "--out", str(out2)])
    assert rc == 0
    capsys.readouterr()
    assert out1.read_bytes() == out2.read_bytes()


def test_sweep_unknown_parameter_exit_2(capsys):
    rc = main(["sweep", "warp_speed", "1,2", "--kernel", VECADD])
    assert rc == 2
    assert "unknown ArchConfig parameter" in capsys.readouterr().err


def test_sweep_bad_values_exit_2(capsys):
    rc = main(["sweep", "ccu_roundtrip", "1,two", "--kernel", VECADD])
    assert rc == 2
    capsys.readouterr()


def test_sweep_runs_and_reports(tmp_path, capsys):
    rc = main(["sweep", "ccu_roundtrip", "2,4,8", "--kernel",
               kernel_path("merge"), "--strategy", "switch-config",
               "--out", str(tmp_path / "s.csv")])
    assert rc == 0
    text = capsys.readouterr().out
    lines = [l for l in text.splitlines() if l.startswith("merge[")]
    assert len(lines) == 3
    cycles = [int(l.split(",")[3]) for l in lines]
    assert cycles == sorted(cycles)     # larger roundtrip never helps
