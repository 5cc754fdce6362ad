"""Metric definitions on synthetic traces and CSV formatting."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marionette.metrics import (CSV_HEADER, MetricsRow, pe_utilization,
                                rows_to_csv, speedup, speedup_table)
from marionette.simulator import SimTrace


def _trace(entries, n_pes=4, total=10, mapped=None):
    act = {(pe, cyc): (a, 0) for pe, cyc, a in entries}
    mapped = mapped if mapped is not None else {pe for pe, _, _ in entries}
    return SimTrace(n_pes=n_pes, total_cycles=total, act=act,
                    mapped_pes=mapped, ccu_windows=[])


def test_pe_utilization_definition():
    # 2 mapped PEs x 10 cycles = 20 slots; 5 compute entries -> 0.25
    entries = [(0, c, "compute") for c in range(3)] + \
              [(1, c, "compute") for c in range(2)] + \
              [(1, c, "stall-data") for c in range(2, 6)]
    t = _trace(entries, mapped={0, 1})
    assert pe_utilization(t) == pytest.approx(5 / 20)


def test_pe_utilization_ignores_unmapped_pes():
    entries = [(0, 0, "compute"), (3, 0, "compute")]
    t = _trace(entries, mapped={0})
    assert pe_utilization(t) == pytest.approx(1 / 10)


def test_pe_utilization_empty():
    t = _trace([], mapped=set())
    assert pe_utilization(t) == 0.0


def test_speedup_reciprocal():
    assert speedup(200, 100) == 2.0
    assert speedup(100, 200) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10 ** 6), st.integers(1, 10 ** 6))
def test_speedup_inverse_property(a, b):
    assert speedup(a, b) * speedup(b, a) == pytest.approx(1.0)


def _row(kernel, strategy, cycles, outer=None):
    model = {"marionette": "marionette", "predication": "von-neumann",
             "switch-config": "von-neumann",
             "dataflow": "dataflow"}[strategy]
    return MetricsRow(kernel=kernel, model=model, strategy=strategy,
                      cycles=cycles, pe_util=0.5, outer_bb_util=outer,
                      pipe_util=0.75, ii_min=1, ii_max=2)


def test_speedup_table_geomean():
    rows = [_row("k1", "predication", 400), _row("k1", "marionette", 100),
            _row("k2", "predication", 200), _row("k2", "marionette", 200)]
    pairs, geo, warns = speedup_table(rows, "predication", "marionette")
    assert dict(pairs) == {"k1": 4.0, "k2": 1.0}
    assert geo == pytest.approx(2.0)


def test_speedup_table_missing_baseline():
    rows = [_row("k1", "marionette", 100)]
    pairs, geo, warns = speedup_table(rows, "predication", "marionette")
    assert not pairs and geo is None


def test_csv_header_only():
    assert rows_to_csv([]) == CSV_HEADER + "\n"


def test_csv_formatting():
    text = rows_to_csv([_row("k", "marionette", 123, outer=None)])
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER
    fields = lines[1].split(",")
    assert fields[:4] == ["k", "marionette", "marionette", "123"]
    assert fields[4] == "0.5000"
    assert fields[5] == "n/a"
    assert fields[6] == "0.7500"
    assert fields[7:] == ["1", "2"]
    assert text.endswith("\n") and "\r" not in text
