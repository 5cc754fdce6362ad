"""Cycle-level execution of a configuration bitstream.

Execution is split into two exact passes:

1. a functional pass runs the reference interpreter over the embedded
   program, producing final memory plus a dynamic control-flow log
   (per-invocation loop trip counts, branch outcomes) — this guarantees
   functional equivalence with ``interpret`` by construction;
2. a timing pass replays that log against the mapping's pipeline
   schedules under the selected PE execution model, painting per-(PE,
   cycle) activities into the trace.

Model rules:

* marionette: every loop level is a pipeline; successive rounds of a
  pipeline chain back-to-back through a per-pipeline cursor (a round
  that consumes its predecessor's results waits for the drain instead);
  control hand-offs between levels cost ``control_net_latency`` (or a
  CCU round trip with ``--no-control-net``); branch lanes are configured
  by the branch result, never proactively.
* von Neumann: rounds compose serially.  Under switch-config every
  dynamic divergence inserts a whole-array idle window of exactly
  ``ccu_roundtrip`` cycles while the CCU rewrites instruction memories;
  predication executes both lanes and never involves the CCU.
* dataflow: every firing is preceded by a tag-match/configure step,
  stretching all issue offsets by (1 + dataflow_config_overhead); carried
  dependences crossing PEs additionally pay the grid hop distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .arch import ArchConfig
from .bitstream import load_bitstream_full
from .cdfg import Program, latency_class
from .frontend import ExecRecord, MemoryImage, interpret
from .mapper import GroupSchedule, Mapping
from .structure import IfRegion, LoopRegion, Region, Straight, build_regions

MODELS = ("marionette", "von-neumann", "dataflow")

_MODEL_STRATEGIES = {
    "marionette": ("marionette",),
    "von-neumann": ("predication", "switch-config"),
    "dataflow": ("dataflow",),
}

COMPUTE = "compute"
CONFIGURE = "configure"
STALL_DATA = "stall-data"
STALL_CONTROL = "stall-control"
IDLE = "idle"

_CYCLE_LIMIT = 50_000_000


class SimError(Exception):
    pass


@dataclass
class SimTrace:
    n_pes: int
    total_cycles: int = 0
    act: dict[tuple[int, int], tuple[str, int]] = field(default_factory=dict)
    mapped_pes: set[int] = field(default_factory=set)
    ccu_windows: list[tuple[int, int]] = field(default_factory=list)

    def activity(self, pe: int, cycle: int) -> str:
        return self.act.get((pe, cycle), (IDLE, 0))[0]

    def compute_cycles(self, pe: int) -> int:
        return sum(1 for (p, _), (a, _) in self.act.items()
                   if p == pe and a == COMPUTE)

    def dump(self) -> str:
        lines = []
        for (pe, cyc), (activity, addr) in sorted(
                self.act.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            lines.append(f"{cyc} {pe} {activity} {addr}")
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class SimStats:
    model: str
    strategy: str
    cycles: int = 0
    compute_cycles: dict[int, int] = field(default_factory=dict)
    block_iterations: dict[int, int] = field(default_factory=dict)
    group_issues: dict[int, list[int]] = field(default_factory=dict)
    fifo_highwater: int = 0
    ccu_events: int = 0

    def steady_ii(self, gid: int) -> int | None:
        starts = self.group_issues.get(gid) or []
        deltas = sorted(b - a for a, b in zip(starts, starts[1:]) if b > a)
        if not deltas:
            return None
        return deltas[len(deltas) // 2]

    def to_text(self) -> str:
        lines = [
            f"model={self.model}",
            f"strategy={self.strategy}",
            f"cycles={self.cycles}",
            f"compute_cycles={sum(self.compute_cycles.values())}",
            f"ccu_events={self.ccu_events}",
            f"fifo_highwater={self.fifo_highwater}",
        ]
        for bid in sorted(self.block_iterations):
            lines.append(f"block_iters.B{bid}={self.block_iterations[bid]}")
        for gid in sorted(self.group_issues):
            ii = self.steady_ii(gid)
            if ii is not None:
                lines.append(f"steady_ii.g{gid}={ii}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------

class _Engine:
    def __init__(self, program: Program, mapping: Mapping, arch: ArchConfig,
                 model: str, rec: ExecRecord, *, proactive: bool,
                 control_net: bool, agile: bool):
        self.p = program
        self.m = mapping
        self.arch = arch
        self.model = model
        self.rec = rec
        self.proactive = proactive
        self.agile = agile and model == "marionette"
        # issue offsets stretch under tag-driven configuration
        self.scale = 1 + arch.dataflow_config_overhead \
            if model == "dataflow" else 1
        # control boundary latency between loop levels
        if model == "marionette":
            self.delta = arch.control_net_latency if control_net \
                else arch.ccu_roundtrip
        elif model == "dataflow":
            self.delta = arch.data_hop_latency
        else:
            self.delta = 1
        self.trace = SimTrace(n_pes=arch.n_pes)
        self.stats = SimStats(model=model, strategy=mapping.strategy)
        self.stats.block_iterations = {b.id: 0 for b in program.blocks}
        self._round_ptr: dict[int, int] = {}
        self._branch_ptr: dict[int, int] = {}
        self._cursor: dict[tuple[int, int], int] = {}   # (gid, replica)
        self._rr: dict[int, int] = {}                   # round-robin pointer
        self._fifo_log: list[tuple[int, int]] = []      # (t_in, t_out)
        self._producer_done: dict[int, int] = {}        # node id -> cycle
        self._group_items: dict[int, list] = {}
        self._end = 0
        self._build_items()
        self._mark_mapped()

    def _chain_floor(self, key: tuple[int, int]) -> int:
        """Earliest start allowed by the pipeline's previous round.  With
        the control network the next round's trigger is already queued and
        chaining is seamless; without it the CCU must observe completion
        and re-arm, costing the rest of a round trip."""
        cur = self._cursor.get(key)
        if cur is None:
            return 0
        return cur + (self.delta - 1)

    # -- setup ------------------------------------------------------------

    def _build_items(self) -> None:
        tree = build_regions(self.p)

        def items_of(body: list[Region]) -> list:
            out = []
            for it in body:
                if isinstance(it, Straight):
                    out.append(("block", it.block))
                elif isinstance(it, IfRegion):
                    out.append(("if", it))
                else:
                    out.append(("child", it))
            return out

        def rec_loop(region: LoopRegion) -> None:
            gid = self.m.group_of_header[region.header]
            self._group_items[gid] = [("block", region.header)] + \
                items_of(region.body)
            for it in region.body:
                if isinstance(it, LoopRegion):
                    rec_loop(it)

        self._root_gid = next(g.gid for g in self.m.groups.values()
                              if g.kind == "root")
        self._group_items[self._root_gid] = items_of(tree.items)
        for it in tree.items:
            if isinstance(it, LoopRegion):
                rec_loop(it)

    def _mark_mapped(self) -> None:
        # utilization denominators exclude PEs that host only control-class
        # operations (loop generators, branches, phis, constants)
        for b in self.p.blocks:
            g = self.m.groups[self.m.group_of_block[b.id]]
            for n in b.dfg:
                if latency_class(n.opcode) != "ctrl":
                    for r in range(g.replicas):
                        self.trace.mapped_pes.add(
                            g.pe_base + r * g.pe_count + g.node_pe[n.id])
        if not self.trace.mapped_pes:
            for g in self.m.groups.values():
                self.trace.mapped_pes |= g.all_pes()

    # -- painting ---------------------------------------------------------

    def _paint(self, pe: int, t: int, act: str, addr: int,
               span: int = 1) -> None:
        if t < 0:
            return
        for c in range(t, t + max(span, 1)):
            key = (pe, c)
            old = self.trace.act.get(key)
            if old is None or (act == COMPUTE and old[0] != COMPUTE):
                self.trace.act[key] = (act, addr)
        self._end = max(self._end, t + max(span, 1))

    def _mark_block(self, bid: int, g: GroupSchedule, rep: int, s: int,
                    shift_after: tuple[int, int] | None = None,
                    count: bool = True, base_off: int = 0) -> int:
        """Paint one dynamic execution of block ``bid`` issued at ``s``.
        ``shift_after=(off0, by)`` delays every op after offset off0 (CCU
        reconfiguration).  Returns the block's completion time."""
        if count:
            self.stats.block_iterations[bid] += 1
        base = g.pe_base + rep * g.pe_count
        end = s
        for n in self.p.block(bid).dfg:
            raw = g.node_off[n.id] - base_off
            off = raw * self.scale
            if shift_after and raw > shift_after[0]:
                off += shift_after[1]
            pe = base + g.node_pe[n.id]
            lat = self.arch.op_latency(n.opcode)
            if lat == 0:
                self._paint(pe, s + off, CONFIGURE, n.id)
                done = s + off + 1
            elif self.scale > 1:
                self._paint(pe, s + off, CONFIGURE, n.id, self.scale - 1)
                self._paint(pe, s + off + self.scale - 1, COMPUTE, n.id, lat)
                done = s + off + self.scale - 1 + lat
            else:
                self._paint(pe, s + off, COMPUTE, n.id, lat)
                done = s + off + lat
            self._producer_done[n.id] = done
            end = max(end, done)
        return end

    def _branch_off(self, g: GroupSchedule, region: IfRegion) -> int:
        for n in self.p.block(region.cond_block).dfg:
            if n.opcode == "branch":
                return g.node_off[n.id]
        return 0

    def _mark_items(self, gid: int, rep: int, s: int,
                    items: list) -> tuple[int, int]:
        """Paint one pass over ``items`` of group ``gid`` issued at ``s``
        (child loops excluded).  Returns (end, accumulated CCU shift)."""
        g = self.m.groups[gid]
        switchy = self.m.strategy == "switch-config"
        predicated = self.m.strategy == "predication"
        end = s
        shift: tuple[int, int] | None = None
        for kind, payload in items:
            if kind == "block":
                end = max(end, self._mark_block(payload, g, rep, s, shift))
            elif kind == "if":
                region: IfRegion = payload
                end = max(end, self._mark_block(region.cond_block, g, rep,
                                                s, shift))
                ptr = self._branch_ptr.get(region.cond_block, 0)
                outcomes = self.rec.branches.get(region.cond_block, [])
                taken = outcomes[ptr] if ptr < len(outcomes) else True
                self._branch_ptr[region.cond_block] = ptr + 1
                if switchy:
                    # whole-array idle window while the CCU rewrites lanes
                    b_off = self._branch_off(g, region)
                    w0 = s + b_off * self.scale + \
                        (shift[1] if shift else 0) + 1
                    self.trace.ccu_windows.append(
                        (w0, self.arch.ccu_roundtrip))
                    self.stats.ccu_events += 1
                    self._end = max(self._end, w0 + self.arch.ccu_roundtrip)
                    shift = (b_off, (shift[1] if shift else 0) +
                             self.arch.ccu_roundtrip)
                if predicated:
                    lanes = [(region.then_block, taken),
                             (region.else_block, not taken)]
                else:
                    lanes = [(region.then_block if taken
                              else region.else_block, True)]
                for lane, counted in lanes:
                    end = max(end, self._mark_block(lane, g, rep, s, shift,
                                                    count=counted))
                # the join block follows as its own item in the sequence
        return end, (shift[1] if shift else 0)

    # -- round execution --------------------------------------------------

    def _next_trips(self, header: int) -> int:
        ptr = self._round_ptr.get(header, 0)
        self._round_ptr[header] = ptr + 1
        rounds = self.rec.rounds.get(header, [])
        return rounds[ptr] if ptr < len(rounds) else 0

    def run(self) -> tuple[SimTrace, SimStats]:
        root = self.m.groups[self._root_gid]
        t = 0
        finish = 0
        for item in self._group_items[self._root_gid]:
            kind, payload = item
            if kind == "child":
                _, drain = self._run_loop(payload, t)
                finish = max(finish, drain)
                t = drain + self.delta
            elif kind == "block":
                t = self._mark_root_block(payload, root, t)
                if self.p.block(payload).dfg:
                    finish = max(finish, t)
            else:
                end, _ = self._mark_items(self._root_gid, 0, t, [item])
                t = end
                finish = max(finish, end)
            if t > _CYCLE_LIMIT:
                raise SimError("deadlock: cycle limit exceeded at top level")
        self.trace.total_cycles = max(self._end, finish)
        self.stats.cycles = self.trace.total_cycles
        self._patch_gaps()
        for pe in sorted(self.trace.mapped_pes):
            self.stats.compute_cycles[pe] = self.trace.compute_cycles(pe)
        return self.trace, self.stats

    def _mark_root_block(self, bid: int, root: GroupSchedule, t: int) -> int:
        blk = self.p.block(bid)
        if not blk.dfg:
            self.stats.block_iterations[bid] += 1
            return t
        base_off = min(root.node_off[n.id] for n in blk.dfg)
        return self._mark_block(bid, root, 0, t, base_off=base_off)

    def _run_loop(self, region: LoopRegion,
                  t_ctrl: int) -> tuple[int, int]:
        """Execute one invocation of the loop at ``region``; returns
        (first issue cycle, drain cycle)."""
        gid = self.m.group_of_header[region.header]
        g = self.m.groups[gid]
        n = self._next_trips(region.header)
        if self.model == "dataflow":
            start_overhead = 1 + self.arch.dataflow_config_overhead
        else:
            start_overhead = 1 if self.proactive else 2
        base = t_ctrl + start_overhead

        # data-dependent bound: the trip count arrives through a control
        # FIFO (marionette), a CCU transaction (von Neumann) or the data
        # network (dataflow)
        if g.bound[0] == "node":
            prod = self._producer_done.get(g.bound[1], t_ctrl)
            if self.model == "marionette":
                arrive = prod + self.delta
                base = max(base, arrive)
                if self.m.fifo_of_header.get(region.header) is not None:
                    self._fifo_log.append((arrive, base))
            elif self.m.strategy == "switch-config":
                # the CCU writes the trip count into the loop generator;
                # only the waiting pipeline stalls, not the whole array
                self.stats.ccu_events += 1
                base = max(base, prod + self.arch.ccu_roundtrip)
            elif self.m.strategy == "predication":
                base = max(base, prod + self.arch.ccu_roundtrip)
            else:
                base = max(base, prod + self.delta)

        # the header fires one extra time for the exit decision
        self.stats.block_iterations[region.header] += 1

        if not g.children:
            return self._run_leaf_round(region, g, base, n)
        return self._run_outer(region, g, base, n)

    def _leaf_ii(self, g: GroupSchedule) -> int:
        ii = g.ii * self.scale
        if self.model == "dataflow" and g.ii > g.factor:
            # a recurrence: carried values crossing PEs ride the data
            # network back to the producer
            hops = 0
            for bid in g.block_ids:
                bm = self.m.blocks.get(bid)
                if bm and len(bm.pe_set) > 1:
                    pes = sorted(bm.pe_set)
                    hops = max(hops, self.arch.hop_distance(pes[0], pes[-1]))
            ii += hops * self.arch.data_hop_latency
        return ii

    def _run_leaf_round(self, region: LoopRegion, g: GroupSchedule,
                        base: int, n: int) -> tuple[int, int]:
        gid = g.gid
        items = self._group_items[gid]
        ii = self._leaf_ii(g)
        d = g.d * self.scale
        serial = self.m.strategy == "switch-config" and \
            any(k == "if" for k, _ in items)
        reps = g.replicas if self.agile else 1
        mode = g.replicate_mode if reps > 1 else None
        chain = self.agile
        issues: list[int] = []

        if n == 0:
            return base, base

        if mode == "iteration":
            # iterations split round-robin across the replicas
            cur = {}
            for r in range(reps):
                cur[r] = max(base, self._chain_floor((gid, r))) \
                    if chain else base
            first = min(cur.values())
            last_end = base
            for i in range(n):
                r = i % reps
                s = cur[r]
                issues.append(s)
                end, _ = self._mark_items(gid, r, s, items)
                last_end = max(last_end, end, s + d)
                cur[r] = s + ii
            for r in range(reps):
                self._cursor[(gid, r)] = cur[r]
            self.stats.group_issues.setdefault(gid, []).extend(issues)
            return first, last_end

        if mode == "round":
            rep = self._rr.get(gid, 0) % reps
            self._rr[gid] = rep + 1
        else:
            rep = 0

        key = (gid, rep)
        s = max(base, self._chain_floor(key)) if chain else base
        first = s
        last_end = s
        for i in range(n):
            issues.append(s)
            end, shift = self._mark_items(gid, rep, s, items)
            last_end = max(last_end, end, s + d + shift)
            s = last_end + 1 if serial else s + ii
        if chain:
            self._cursor[key] = last_end + 1 if g.round_serial else s
        self.stats.group_issues.setdefault(gid, []).extend(issues)
        return first, last_end

    def _run_outer(self, region: LoopRegion, g: GroupSchedule,
                   base: int, n: int) -> tuple[int, int]:
        gid = g.gid
        items = [it for it in self._group_items[gid] if it[0] != "child"]
        children = [payload for k, payload in self._group_items[gid]
                    if k == "child"]
        ii = g.ii * self.scale
        d = g.d * self.scale
        s = max(base, self._chain_floor((gid, 0))) if self.agile else base
        first = s
        drain = s
        issues: list[int] = []
        for i in range(n):
            issues.append(s)
            own_end, shift = self._mark_items(gid, 0, s, items)
            t_child = s + shift + self.delta
            child_first = None
            child_drain = s
            for cr in children:
                cf, child_drain = self._run_loop(cr, t_child)
                if child_first is None:
                    child_first = cf
                t_child = child_drain + self.delta
            if g.serial_on_child and children:
                # the tail of this iteration consumes the child's results
                drain_i = max(own_end, s + d + shift,
                              child_drain + self.delta + 1)
            else:
                drain_i = max(own_end, s + d + shift, child_drain)
            drain = max(drain, drain_i)
            if self.agile:
                # the next iteration is paced by the child pipeline's
                # actual start, not by this iteration's drain
                pace = child_first if child_first is not None else s
                s = max(s + ii, pace)
            else:
                s = drain_i + 1
            if s > _CYCLE_LIMIT:
                raise SimError(f"deadlock: loop at B{region.header} "
                               f"exceeded the cycle limit")
        if self.agile:
            self._cursor[(gid, 0)] = drain + 1 if g.round_serial else s
        self.stats.group_issues.setdefault(gid, []).extend(issues)
        return first, drain

    # -- post-processing --------------------------------------------------

    def _patch_gaps(self) -> None:
        """Guarantee that all-PE-idle cycles appear only where the CCU
        holds the array; any other gap shows as a data stall on one PE."""
        events = []
        for t_in, t_out in self._fifo_log:
            events.append((t_in, 1))
            events.append((max(t_out, t_in), -1))
        occ = 0
        for _, step in sorted(events):
            occ += step
            self.stats.fifo_highwater = max(self.stats.fifo_highwater, occ)

        total = self.trace.total_cycles
        if total == 0 or not self.trace.mapped_pes:
            return
        window_cycles: set[int] = set()
        for w0, length in self.trace.ccu_windows:
            window_cycles.update(range(w0, w0 + length))
        # reconfiguration windows must be clean of PE activity
        for key in [k for k in self.trace.act if k[1] in window_cycles]:
            del self.trace.act[key]
        busy = {c for (_, c) in self.trace.act}
        blame = min(self.trace.mapped_pes)
        for c in range(total):
            if c not in busy and c not in window_cycles:
                self.trace.act[(blame, c)] = (STALL_DATA, 0)


# ---------------------------------------------------------------------------

def simulate(bitstream: bytes, arch: ArchConfig, mem: MemoryImage,
             model: str, *, proactive: bool = True, control_net: bool = True,
             agile: bool = True) -> tuple[MemoryImage, SimTrace, SimStats]:
    if model not in MODELS:
        raise SimError(f"unknown model {model!r}")
    mapping, _, program = load_bitstream_full(bitstream)
    if program is None:
        raise SimError("bitstream carries no program payload")
    if mapping.strategy not in _MODEL_STRATEGIES[model]:
        raise SimError(f"strategy {mapping.strategy!r} is not compatible "
                       f"with model {model!r}")
    rec = ExecRecord()
    final_mem, counts = interpret(program, mem, record=rec)
    engine = _Engine(program, mapping, arch, model, rec,
                     proactive=proactive, control_net=control_net,
                     agile=agile)
    trace, stats = engine.run()
    # conservation: the timing replay must agree with the interpreter
    for bid, cnt in counts.items():
        if stats.block_iterations.get(bid, 0) != cnt:
            raise SimError(f"trace/interpreter divergence at B{bid}: "
                           f"{stats.block_iterations.get(bid, 0)} != {cnt}")
    return final_mem, trace, stats
