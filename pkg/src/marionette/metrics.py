"""Evaluation metrics computed from traces and mappings, and CSV output.

Definitions (fixed here so numbers are interpretable):

* pe_utilization: compute cycles summed over mapped PEs, divided by
  (mapped PEs x total cycles).  A PE is "mapped" when it hosts at least
  one functional-unit operation; PEs that only hold control-plane
  entries (loop generators, branches, phis, constants) are excluded
  from the denominator.  Configure and stall cycles are not compute.
* pipeline_utilization: per loop pipeline, initiations x II divided by
  (active window x replicas), where the active window spans first issue
  to last completion; averaged over pipelines weighted by PE count.
* outer_bb_utilization: pe_utilization restricted to PEs whose home
  block belongs to an outer loop level (a loop with nested loops).
  Kernels without such levels report n/a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .mapper import Mapping
from .simulator import COMPUTE, SimStats, SimTrace


@dataclass
class MetricsRow:
    kernel: str
    model: str
    strategy: str
    cycles: int
    pe_util: float
    outer_bb_util: float | None
    pipe_util: float
    ii_min: int
    ii_max: int


CSV_HEADER = ("kernel,model,strategy,cycles,pe_util,outer_bb_util,"
              "pipe_util,ii_min,ii_max")


def _util_over(trace: SimTrace, pes: set[int]) -> float:
    if not pes or trace.total_cycles == 0:
        return 0.0
    compute = sum(1 for (p, _), (a, _) in trace.act.items()
                  if p in pes and a == COMPUTE)
    return compute / (len(pes) * trace.total_cycles)


def pe_utilization(trace: SimTrace) -> float:
    return _util_over(trace, trace.mapped_pes)


def _outer_pes(mapping: Mapping, trace: SimTrace) -> set[int] | None:
    outer_gids = {g.gid for g in mapping.groups.values()
                  if g.kind == "loop" and g.children}
    if not outer_gids:
        return None
    pes: set[int] = set()
    for gid in outer_gids:
        pes |= mapping.groups[gid].all_pes()
    return pes & trace.mapped_pes


def outer_bb_utilization(trace: SimTrace,
                         mapping: Mapping) -> float | None:
    pes = _outer_pes(mapping, trace)
    if not pes:
        return None
    return _util_over(trace, pes)


def pipeline_utilization(trace: SimTrace, mapping: Mapping,
                         stats: SimStats) -> float:
    num = 0.0
    weight = 0.0
    for gid, g in mapping.groups.items():
        if g.kind != "loop":
            continue
        issues = stats.group_issues.get(gid) or []
        if not issues:
            continue
        window = max(issues) - min(issues) + max(g.d, g.ii)
        if window <= 0:
            continue
        util = min(1.0, len(issues) * g.ii / (window * g.replicas))
        w = g.pe_count * g.replicas
        num += util * w
        weight += w
    return num / weight if weight else 0.0


def achieved_ii(mapping: Mapping) -> tuple[int, int]:
    iis = [g.ii for g in mapping.groups.values() if g.kind == "loop"]
    if not iis:
        return 1, 1
    return min(iis), max(iis)


def make_row(kernel: str, model: str, trace: SimTrace, stats: SimStats,
             mapping: Mapping) -> MetricsRow:
    lo, hi = achieved_ii(mapping)
    return MetricsRow(
        kernel=kernel, model=model, strategy=mapping.strategy,
        cycles=stats.cycles,
        pe_util=pe_utilization(trace),
        outer_bb_util=outer_bb_utilization(trace, mapping),
        pipe_util=pipeline_utilization(trace, mapping, stats),
        ii_min=lo, ii_max=hi)


def speedup(baseline_cycles: int, subject_cycles: int) -> float:
    return baseline_cycles / subject_cycles


def speedup_table(rows: list[MetricsRow], baseline_strategy: str,
                  subject_strategy: str) -> tuple[list[tuple[str, float]],
                                                  float | None,
                                                  list[str]]:
    """Per-kernel speedup of subject over baseline plus the geomean.
    Returns (pairs, geomean or None, warnings for skipped kernels)."""
    base = {r.kernel: r for r in rows if r.strategy == baseline_strategy}
    subj = {r.kernel: r for r in rows if r.strategy == subject_strategy}
    out: list[tuple[str, float]] = []
    warnings: list[str] = []
    for kernel in sorted(base):
        if kernel not in subj:
            warnings.append(f"no {subject_strategy} row for {kernel}; "
                            f"skipped")
            continue
        out.append((kernel, speedup(base[kernel].cycles,
                                    subj[kernel].cycles)))
    for kernel in sorted(subj):
        if kernel not in base:
            warnings.append(f"no {baseline_strategy} row for {kernel}; "
                            f"skipped")
    if not out:
        return out, None, warnings
    g = math.exp(sum(math.log(s) for _, s in out) / len(out))
    return out, g, warnings


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def rows_to_csv(rows: list[MetricsRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(",".join([
            r.kernel, r.model, r.strategy, str(r.cycles),
            _fmt(r.pe_util), _fmt(r.outer_bb_util), _fmt(r.pipe_util),
            str(r.ii_min), str(r.ii_max)]))
    return "\n".join(lines) + "\n"


def write_csv(rows: list[MetricsRow], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rows_to_csv(rows))
