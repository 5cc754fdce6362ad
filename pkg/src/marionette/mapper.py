"""Scheduling and placement.

Each loop nest level becomes a pipeline group scheduled at its own
initiation interval.  The marionette strategy schedules levels from the
innermost outward; when PEs are left over it enumerates time-extensions of
the outer levels plus replication of the innermost pipelines and keeps the
combination with the least wasted slot capacity.  Baseline strategies
(predication / switch-config / dataflow) pipeline only the innermost loops
and never reshape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .arch import ArchConfig
from .cdfg import (
    DfgNode, Imm, LoopInfo, NodeRef, Program, VarRef, analyze_loops, validate,
)
from .structure import (
    IfRegion, LoopRegion, Region, RegionTree, Straight, build_regions,
)

STRATEGIES = ("marionette", "predication", "switch-config", "dataflow")


class MappingError(Exception):
    pass


class FoldError(MappingError):
    pass


# ---------------------------------------------------------------------------
# mapping data model

@dataclass
class BlockMapping:
    pe_set: set[int]
    ii: int
    extension_factor: int
    slot_table: dict[tuple[int, int], int]   # (pe, phase slot) -> node id
    order: list[int] = field(default_factory=list)  # node ids, issue order


@dataclass
class SenderDirective:
    mode: str                                # dfg-operator | branch-operator | loop-operator
    targets: list[tuple[str, int]]           # ('pe', idx) or ('fifo', idx)
    addresses: dict[str, int]                # outcome -> instruction address

    def __post_init__(self) -> None:
        if self.mode == "branch-operator":
            if set(self.addresses) != {"taken", "not-taken"}:
                raise MappingError("branch sender needs taken/not-taken")
        elif len(self.addresses) != 1:
            raise MappingError(f"{self.mode} sender needs a single address")


@dataclass
class PEInstruction:
    address: int
    persist: bool
    trigger: frozenset[int]
    opcode: str
    srcs: list
    dsts: list
    sender: SenderDirective | None = None


@dataclass
class ControlEdge:
    src_pe: int
    dst: tuple[str, int]
    address: int


@dataclass
class GroupSchedule:
    gid: int
    kind: str                     # 'loop' | 'root'
    header: int | None
    depth: int
    block_ids: list[int]
    n_units: int
    factor: int
    ii: int
    d: int
    pe_base: int
    pe_count: int
    replicas: int
    node_pe: dict[int, int]       # node id -> local PE index
    node_off: dict[int, int]
    node_lane: dict[int, str]     # node id -> 'then' | 'else' (branchy only)
    bound: tuple[str, int]        # ('const', trips) | ('node', producer id)
    replicate_mode: str | None = None   # 'iteration' | 'round'
    round_serial: bool = False
    serial_on_child: bool = False
    parent: int | None = None
    children: list[int] = field(default_factory=list)
    candidates: list[tuple] = field(default_factory=list)

    def pes(self, replica: int = 0) -> list[int]:
        base = self.pe_base + replica * self.pe_count
        return [base + i for i in range(self.pe_count)]

    def all_pes(self) -> set[int]:
        out: set[int] = set()
        for r in range(self.replicas):
            out.update(self.pes(r))
        return out


@dataclass
class Mapping:
    strategy: str
    rows: int
    cols: int
    blocks: dict[int, BlockMapping]
    groups: dict[int, GroupSchedule]
    group_of_header: dict[int, int]
    group_of_block: dict[int, int]
    control_edges: list[ControlEdge]
    fifo_of_header: dict[int, int]
    instructions: dict[int, list[PEInstruction]] = field(default_factory=dict)

    def mapped_pes(self) -> set[int]:
        out: set[int] = set()
        for g in self.groups.values():
            out |= g.all_pes()
        return out


# ---------------------------------------------------------------------------
# dependence units

@dataclass
class _Unit:
    idx: int
    ops: list[DfgNode]
    lanes: list[str | None]
    eff_opcode: str
    preds: list[tuple[int, int]]          # (unit idx, latency of producer)
    latency: int
    carried_reads: list[str] = field(default_factory=list)


_CHILD = -2  # sentinel def source: value produced inside a nested loop


class _UnitBuilder:
    """Lower one pipeline group's blocks into schedulable units."""

    def __init__(self, program: Program, arch: ArchConfig, strategy: str):
        self.program = program
        self.arch = arch
        self.strategy = strategy
        self.units: list[_Unit] = []
        self.free_nodes: list[DfgNode] = []   # control-plane, no FU slot
        self.node_unit: dict[int, int] = {}
        self.defs: dict[str, set[int]] = {}
        self.carried: list[tuple[int, str]] = []   # (reader unit, var)
        self.block_ids: list[int] = []

    def _new_unit(self, node: DfgNode, lane: str | None,
                  preds: set[tuple[int, int]],
                  eff_opcode: str | None = None) -> _Unit:
        eff = eff_opcode or node.opcode
        u = _Unit(idx=len(self.units), ops=[node], lanes=[lane],
                  eff_opcode=eff, preds=sorted(preds),
                  latency=self.arch.op_latency(eff))
        self.units.append(u)
        self.node_unit[node.id] = u.idx
        return u

    def _ref_pred(self, ref, defs: dict[str, set[int]],
                  reader_pending: list[str]) -> set[tuple[int, int]]:
        preds: set[tuple[int, int]] = set()
        if isinstance(ref, NodeRef):
            ui = self.node_unit.get(ref.node)
            if ui is not None and ui != _CHILD:
                preds.add((ui, self.units[ui].latency))
        elif isinstance(ref, VarRef):
            src = defs.get(ref.name)
            if src is None:
                reader_pending.append(ref.name)
            else:
                for ui in src:
                    if ui != _CHILD:
                        preds.add((ui, self.units[ui].latency))
        return preds

    def _lower_node(self, node: DfgNode, lane: str | None,
                    defs: dict[str, set[int]],
                    eff_opcode: str | None = None) -> _Unit:
        pending: list[str] = []
        preds: set[tuple[int, int]] = set()
        for ref in node.inputs:
            preds |= self._ref_pred(ref, defs, pending)
        u = self._new_unit(node, lane, preds, eff_opcode)
        for v in pending:
            u.carried_reads.append(v)
            self.carried.append((u.idx, v))
        if node.out_var is not None:
            defs[node.out_var] = {u.idx}
        return u

    def add_block(self, bid: int, lane: str | None = None,
                  defs: dict[str, set[int]] | None = None,
                  skip_branch: bool = False) -> None:
        if defs is None:
            defs = self.defs
        self.block_ids.append(bid)
        for node in self.program.block(bid).dfg:
            if skip_branch and node.opcode == "branch":
                continue
            if node.opcode == "loop-gen":
                # the induction value rides the control plane with the
                # trigger; it costs no functional-unit slot and is
                # available at offset 0 of every iteration
                self.free_nodes.append(node)
                if node.out_var is not None:
                    defs[node.out_var] = set()
                continue
            self._lower_node(node, lane, defs)

    def add_if(self, region: IfRegion) -> None:
        prog = self.program
        predicated = self.strategy == "predication"
        self.add_block(region.cond_block)
        branch_id = next((n.id for n in prog.block(region.cond_block).dfg
                          if n.opcode == "branch"), None)
        cond_unit = self.node_unit.get(branch_id) \
            if branch_id is not None else None
        self._if_cond_unit = cond_unit
        then_nodes = prog.block(region.then_block).dfg
        else_nodes = prog.block(region.else_block).dfg
        self.block_ids.extend([region.then_block, region.else_block])
        defs_t = dict(self.defs)
        defs_e = dict(self.defs)
        if predicated:
            for n in then_nodes:
                self._lower_node(n, "then", defs_t)
            for n in else_nodes:
                self._lower_node(n, "else", defs_e)
        else:
            # overlay: lane ops pair up positionally and share slot capacity
            for i in range(max(len(then_nodes), len(else_nodes))):
                tn = then_nodes[i] if i < len(then_nodes) else None
                en = else_nodes[i] if i < len(else_nodes) else None
                pending: list[str] = []
                preds: set[tuple[int, int]] = set()
                ops, lanes, lat = [], [], 0
                for n, lane, d in ((tn, "then", defs_t), (en, "else", defs_e)):
                    if n is None:
                        continue
                    for ref in n.inputs:
                        preds |= self._ref_pred(ref, d, pending)
                    ops.append(n)
                    lanes.append(lane)
                    lat = max(lat, self.arch.op_latency(n.opcode))
                if cond_unit is not None:
                    # lane configuration arrives only after the branch
                    # resolves (branch senders are not proactive)
                    preds.add((cond_unit, 1))
                u = _Unit(idx=len(self.units), ops=ops, lanes=lanes,
                          eff_opcode=ops[0].opcode, preds=sorted(preds),
                          latency=lat)
                self.units.append(u)
                for v in set(pending):
                    u.carried_reads.append(v)
                    self.carried.append((u.idx, v))
                for n, d in ((tn, defs_t), (en, defs_e)):
                    if n is None:
                        continue
                    self.node_unit[n.id] = u.idx
                    if n.out_var is not None:
                        d[n.out_var] = {u.idx}
        # merge lane defs back: a later reader may depend on either lane
        merged = dict(self.defs)
        changed = set(defs_t) | set(defs_e)
        for v in changed:
            s: set[int] = set()
            s |= defs_t.get(v, self.defs.get(v, set()))
            s |= defs_e.get(v, self.defs.get(v, set()))
            merged[v] = s
        self.defs = merged

    def add_join_phis(self, bid: int, cond_unit: int | None) -> None:
        """Join block under predication: phis become selects fed by the
        branch condition."""
        self.block_ids.append(bid)
        for node in self.program.block(bid).dfg:
            if node.opcode == "phi" and self.strategy == "predication":
                u = self._lower_node(node, None, self.defs,
                                     eff_opcode="select")
                if cond_unit is not None:
                    u.preds = sorted(set(u.preds) |
                                     {(cond_unit, self.units[cond_unit].latency)})
            else:
                self._lower_node(node, None, self.defs)

    def note_child(self, written_vars: set[str]) -> None:
        for v in written_vars:
            self.defs[v] = {_CHILD}


def _written_vars(program: Program, block_ids: set[int]) -> set[str]:
    out: set[str] = set()
    for bid in block_ids:
        for n in program.block(bid).dfg:
            if n.out_var is not None:
                out.add(n.out_var)
    return out


def _iter_items(items: list[Region]) -> list:
    """Flatten one loop level's body into ('block'|'if'|'child', payload),
    keeping join blocks as plain blocks."""
    out = []
    skip: set[int] = set()
    for it in items:
        if isinstance(it, Straight):
            if it.block not in skip:
                out.append(("block", it.block))
        elif isinstance(it, IfRegion):
            out.append(("if", it))
        elif isinstance(it, LoopRegion):
            out.append(("child", it))
    return out


# ---------------------------------------------------------------------------
# modulo scheduling with folding

def _schedule_units(units: list[_Unit], carried_pairs: list[tuple[int, int]],
                    ii: int, n_pe: int):
    """List-schedule units onto ``n_pe`` PEs at initiation interval ``ii``.

    Returns (offsets, pe assignment, depth, recurrence requirement).
    """
    off = [0] * len(units)
    pe_of = [0] * len(units)
    busy: set[tuple[int, int]] = set()
    for u in units:
        t = 0
        for p, lat in u.preds:
            t = max(t, off[p] + lat)
        while True:
            placed = False
            for pe in range(n_pe):
                if (pe, t % ii) not in busy:
                    busy.add((pe, t % ii))
                    off[u.idx] = t
                    pe_of[u.idx] = pe
                    placed = True
                    break
            if placed:
                break
            t += 1
    d = max((off[u.idx] + u.latency for u in units), default=0)
    req = 1
    for w, r in carried_pairs:
        req = max(req, off[w] + units[w].latency - off[r])
    return off, pe_of, max(d, 1), req


def _carried_pairs(units: list[_Unit],
                   carried: list[tuple[int, str]],
                   final_defs: dict[str, set[int]]) -> list[tuple[int, int]]:
    pairs = []
    for reader, var in carried:
        for w in final_defs.get(var, set()):
            if w != _CHILD:
                pairs.append((w, reader))
    return pairs


@dataclass
class _Candidate:
    factor: int
    pe_count: int
    ii: int
    d: int
    waste: int
    off: list[int]
    pe_of: list[int]


def _enumerate_candidates(units: list[_Unit],
                          carried_pairs: list[tuple[int, int]],
                          max_factor: int = 8) -> list[_Candidate]:
    n = len(units)
    out: list[_Candidate] = []
    if n == 0:
        return [_Candidate(1, 0, 1, 0, 0, [], [])]
    for f in range(1, max_factor + 1):
        p = math.ceil(n / f)
        ii = f
        for _ in range(24):
            off, pe_of, d, req = _schedule_units(units, carried_pairs, ii, p)
            if req <= ii:
                break
            ii = req
        out.append(_Candidate(f, p, ii, d, p * ii - n, off, pe_of))
    return out


# ---------------------------------------------------------------------------
# per-group lowering

@dataclass
class _GroupWork:
    gid: int
    kind: str
    header: int | None
    depth: int
    region: LoopRegion | None
    builder: _UnitBuilder
    carried_pairs: list[tuple[int, int]]
    candidates: list[_Candidate]
    bound: tuple[str, int]
    round_serial: bool
    serial_on_child: bool
    parent: int | None
    children: list[int]
    chosen: _Candidate | None = None
    pe_base: int = -1
    replicas: int = 1
    replicate_mode: str | None = None


def _build_group(program: Program, arch: ArchConfig, strategy: str,
                 gid: int, region: LoopRegion | None,
                 top_items: list[Region] | None) -> _GroupWork:
    b = _UnitBuilder(program, arch, strategy)
    round_serial = False
    serial_on_child = False
    if region is None:
        items = _iter_items(top_items or [])
        header = None
        bound = ("const", 1)
        depth = 0
        kind = "root"
    else:
        header = region.header
        hdr_blk = program.block(header)
        lb = hdr_blk.loop_bound
        bound = (("const", lb) if isinstance(lb, int)
                 else ("node", lb.node))
        items = [("block", header)] + _iter_items(region.body)
        kind = "loop"
        depth = 0  # filled by caller

    for kind_i, payload in items:
        if kind_i == "block":
            b.add_block(payload)
        elif kind_i == "if":
            b.add_if(payload)
            b.add_join_phis(payload.join_block,
                            getattr(b, "_if_cond_unit", None))
        else:  # child loop: its outputs become opaque live-ins downstream
            child: LoopRegion = payload
            b.note_child(_written_vars(program,
                                       _loop_block_ids(program, child)))

    if kind == "loop":
        # a loop whose body both loads and stores the same array carries
        # state from round to round through memory
        arrays_loaded: set[str] = set()
        arrays_stored: set[str] = set()
        for bid2 in sorted(_loop_block_ids(program, region)):
            for n in program.block(bid2).dfg:
                if n.opcode == "load":
                    arrays_loaded.add(n.array)
                elif n.opcode == "store":
                    arrays_stored.add(n.array)
        if arrays_loaded & arrays_stored:
            round_serial = True

    pairs = _carried_pairs(b.units, b.carried, b.defs)
    cands = _enumerate_candidates(b.units, pairs)
    return _GroupWork(gid=gid, kind=kind, header=header, depth=depth,
                      region=region, builder=b, carried_pairs=pairs,
                      candidates=cands, bound=bound,
                      round_serial=round_serial,
                      serial_on_child=serial_on_child,
                      parent=None, children=[])


def _loop_block_ids(program: Program, region: LoopRegion) -> set[int]:
    out = {region.header}

    def rec(items: list[Region]) -> None:
        for it in items:
            if isinstance(it, Straight):
                out.add(it.block)
            elif isinstance(it, IfRegion):
                out.update({it.cond_block, it.then_block, it.else_block,
                            it.join_block})
            else:
                out.add(it.header)
                rec(it.body)

    rec(region.body)
    return out


def _own_block_ids(program: Program, region: LoopRegion) -> set[int]:
    out: set[int] = set()
    for kind, payload in _iter_items(region.body):
        if kind == "block":
            out.add(payload)
        elif kind == "if":
            out.update({payload.cond_block, payload.then_block,
                        payload.else_block, payload.join_block})
    return out


def _region_live_ins(program: Program, region: LoopRegion) -> set[str]:
    """Variables a loop round reads before writing (its carried live-ins)."""
    live: set[str] = set()
    written: set[str] = set()

    def visit_block(bid: int) -> None:
        for n in program.block(bid).dfg:
            for ref in n.inputs:
                if isinstance(ref, VarRef) and ref.name not in written:
                    live.add(ref.name)
            if n.out_var is not None:
                written.add(n.out_var)

    def rec(items: list[Region]) -> None:
        for it in items:
            if isinstance(it, Straight):
                visit_block(it.block)
            elif isinstance(it, IfRegion):
                for bid in (it.cond_block, it.then_block, it.else_block,
                            it.join_block):
                    visit_block(bid)
            else:
                visit_block(it.header)
                rec(it.body)

    visit_block(region.header)
    rec(region.body)
    return live


def _serial_flags(program: Program,
                  tree: RegionTree) -> tuple[set[int], set[int | None]]:
    """Walk each loop level for two symbolic iterations, tracking whether a
    variable's reaching definition comes from an op at this level or from a
    nested loop.

    Returns (headers of loops whose successive rounds must serialize,
    level keys whose own ops consume nested-loop results).  Level keys are
    loop headers, or None for the top level.
    """
    round_serial: set[int] = set()
    consumes_child: set[int | None] = set()
    src: dict[str, str] = {}   # var -> 'op' | 'child'

    def visit_block(owner: int | None, bid: int, check: bool) -> None:
        for n in program.block(bid).dfg:
            if check:
                for ref in n.inputs:
                    if isinstance(ref, VarRef) and \
                            src.get(ref.name) == "child":
                        consumes_child.add(owner)
            if n.out_var is not None:
                src[n.out_var] = "op"

    def walk_level(owner: int | None, items: list[Region]) -> None:
        # two symbolic iterations: the second sees values the first left
        # behind, exposing cross-round dependences
        for check in (False, True):
            if owner is not None:
                visit_block(owner, owner, check)
            for it in items:
                if isinstance(it, Straight):
                    visit_block(owner, it.block, check)
                elif isinstance(it, IfRegion):
                    for bid in (it.cond_block, it.then_block,
                                it.else_block, it.join_block):
                        visit_block(owner, bid, check)
                else:
                    if check and any(src.get(v) == "child"
                                     for v in _region_live_ins(program, it)):
                        round_serial.add(it.header)
                    walk_level(it.header, it.body)
                    for v in _written_vars(
                            program, _loop_block_ids(program, it)):
                        src[v] = "child"

    walk_level(None, tree.items)
    return round_serial, consumes_child


# ---------------------------------------------------------------------------
# public scheduling primitives

def pe_waste(block_mapping: BlockMapping) -> int:
    """Empty slot count: allocated capacity minus ops placed."""
    n_ops = len(set(block_mapping.slot_table.values()))
    return len(block_mapping.pe_set) * block_mapping.ii - n_ops


def time_extend(block_mapping: BlockMapping, factor: int) -> BlockMapping:
    """Fold a block mapping into the temporal domain: PEs shrink by the
    factor, the initiation interval grows by it."""
    if factor < 2:
        raise FoldError("factor must be >= 2")
    order = block_mapping.order or [
        nid for (_, slot), nid in sorted(block_mapping.slot_table.items(),
                                         key=lambda kv: (kv[0][1], kv[0][0]))]
    m = len(order)
    old_p = len(block_mapping.pe_set)
    new_p = math.ceil(old_p / factor)
    new_ii = block_mapping.ii * factor
    if new_p * new_ii < m:
        raise FoldError("fold infeasible")
    pes = sorted(block_mapping.pe_set)[:new_p]
    per_pe = math.ceil(m / new_p) if new_p else 0
    slot_table: dict[tuple[int, int], int] = {}
    for k, nid in enumerate(order):
        pe = pes[min(k // per_pe, new_p - 1)] if new_p else 0
        slot = k % new_ii
        if (pe, slot) in slot_table:
            raise FoldError("fold infeasible")
        slot_table[(pe, slot)] = nid
    return BlockMapping(pe_set=set(pes), ii=new_ii, extension_factor=
                        block_mapping.extension_factor * factor,
                        slot_table=slot_table, order=list(order))


def unfold(block_mapping: BlockMapping, factor: int) -> BlockMapping:
    """Inverse reshape: replicate slot capacity back into space."""
    if block_mapping.ii % factor:
        raise FoldError("factor does not divide ii")
    new_ii = block_mapping.ii // factor
    order = block_mapping.order or list(block_mapping.slot_table.values())
    m = len(order)
    new_p = math.ceil(m / max(new_ii, 1)) if m else 1
    pes = list(range(new_p))
    slot_table = {}
    for k, nid in enumerate(order):
        slot_table[(pes[k % new_p], (k // new_p) % max(new_ii, 1))] = nid
    return BlockMapping(pe_set=set(pes), ii=new_ii,
                        extension_factor=max(
                            1, block_mapping.extension_factor // factor),
                        slot_table=slot_table, order=list(order))


# ---------------------------------------------------------------------------
# whole-program mapping

def _pick_initial(cands: list[_Candidate], budget: int) -> _Candidate | None:
    fitting = [c for c in cands if c.pe_count <= budget]
    if not fitting:
        return None
    return min(fitting, key=lambda c: (c.waste, c.ii, c.pe_count))


def _map_program(program: Program, arch: ArchConfig, strategy: str,
                 agile: bool) -> Mapping:
    problems = validate(program)
    if problems:
        raise MappingError(f"invalid program: {problems[0]}")
    loops = analyze_loops(program)
    tree = build_regions(program)

    works: list[_GroupWork] = []
    gid = 0
    root = _build_group(program, arch, strategy, gid, None, tree.items)
    works.append(root)
    gid += 1

    region_gid: dict[int, int] = {}

    def rec(items: list[Region], depth: int, parent_gid: int) -> None:
        nonlocal gid
        for it in items:
            if isinstance(it, LoopRegion):
                w = _build_group(program, arch, strategy, gid, it, None)
                w.depth = depth
                w.parent = parent_gid
                works.append(w)
                region_gid[it.header] = w.gid
                works[parent_gid].children.append(w.gid)
                my = gid
                gid += 1
                rec(it.body, depth + 1, my)

    rec(tree.items, 1, root.gid)

    round_serial, consumes_child = _serial_flags(program, tree)
    for w in works:
        if w.kind == "loop":
            w.round_serial = w.round_serial or w.header in round_serial
            w.serial_on_child = w.header in consumes_child
        else:
            w.serial_on_child = None in consumes_child

    budget = arch.n_pes
    # innermost levels first; root last
    order = sorted([w for w in works if w.kind == "loop"],
                   key=lambda w: -w.depth) + [root]
    remaining = budget
    for w in order:
        pick = _pick_initial(w.candidates, remaining)
        if pick is None:
            raise MappingError(
                f"unmappable block: group at B{w.header} needs more PEs "
                f"than available ({remaining}) even at maximum extension")
        w.chosen = pick
        remaining -= pick.pe_count

    leaves = [w for w in works
              if w.kind == "loop" and not w.children]
    outers = [w for w in works
              if (w.kind == "loop" and w.children) or w.kind == "root"]

    # iteration-level round-robin needs independent iterations; round-level
    # needs independent rounds of a nested pipeline
    rep_mode: dict[int, str | None] = {}
    for w in leaves:
        if not w.carried_pairs:
            rep_mode[w.gid] = "iteration"
        elif w.depth > 1 and not w.round_serial:
            rep_mode[w.gid] = "round"
        else:
            rep_mode[w.gid] = None

    if agile and leaves:
        # Reshape: fold outer loop levels into the temporal domain as far
        # as pacing allows.  An outer level's iterations arrive no faster
        # than one per round of its nested pipeline, so growing its II up
        # to that round length costs nothing while freeing PEs for the
        # pipelines that actually bound throughput.
        by_gid = {w.gid: w for w in works}

        def pace(w: _GroupWork) -> int:
            limits = []
            for cg in w.children:
                c = by_gid[cg]
                if c.bound[0] == "const":
                    trips = max(1, c.bound[1])
                else:
                    trips = 2   # data-dependent bound: assume short rounds
                limits.append(trips * c.chosen.ii)
            return min(limits) if limits else 1

        for w in sorted([x for x in outers if x.kind == "loop"],
                        key=lambda x: -x.depth):
            cap = pace(w)
            fitting = [c for c in w.candidates if c.ii <= cap]
            if fitting:
                w.chosen = min(fitting, key=lambda c: (c.pe_count, c.ii))
        used = sum(w.chosen.pe_count for w in outers) + \
            sum(w.chosen.pe_count for w in leaves)
        if used > budget:
            raise MappingError("unmappable block: placement exceeds the array")
        leftover = budget - used
        # expansion: replicate the deepest pipelines onto leftover PEs
        for w in sorted(leaves, key=lambda w: -w.depth):
            if rep_mode[w.gid] is None:
                continue
            p = w.chosen.pe_count
            while p and leftover >= p:
                w.replicas += 1
                leftover -= p
            if w.replicas > 1:
                w.replicate_mode = rep_mode[w.gid]

    # concrete PE assignment: leaves (with replicas), outer loops, root
    cursor = 0
    for w in sorted(leaves, key=lambda w: -w.depth) + \
            sorted([w for w in outers if w.kind == "loop"],
                   key=lambda w: -w.depth) + [root]:
        w.pe_base = cursor
        cursor += w.chosen.pe_count * w.replicas
    if cursor > budget:
        raise MappingError("unmappable block: placement exceeds the array")

    return _assemble(program, arch, strategy, works, loops)


def _assemble(program: Program, arch: ArchConfig, strategy: str,
              works: list[_GroupWork], loops: LoopInfo) -> Mapping:
    groups: dict[int, GroupSchedule] = {}
    group_of_header: dict[int, int] = {}
    group_of_block: dict[int, int] = {}
    blocks: dict[int, BlockMapping] = {}
    fifo_of_header: dict[int, int] = {}
    control_edges: list[ControlEdge] = []

    for w in works:
        b = w.builder
        c = w.chosen
        node_pe: dict[int, int] = {}
        node_off: dict[int, int] = {}
        node_lane: dict[int, str] = {}
        for u in b.units:
            for op, lane in zip(u.ops, u.lanes):
                node_pe[op.id] = c.pe_of[u.idx]
                node_off[op.id] = c.off[u.idx]
                if lane is not None:
                    node_lane[op.id] = lane
        for op in b.free_nodes:
            node_pe[op.id] = 0
            node_off[op.id] = 0
        g = GroupSchedule(
            gid=w.gid, kind=w.kind, header=w.header, depth=w.depth,
            block_ids=list(dict.fromkeys(b.block_ids)),
            n_units=len(b.units), factor=c.factor, ii=c.ii, d=c.d,
            pe_base=w.pe_base, pe_count=c.pe_count, replicas=w.replicas,
            replicate_mode=w.replicate_mode,
            node_pe=node_pe, node_off=node_off, node_lane=node_lane,
            bound=w.bound, round_serial=w.round_serial,
            serial_on_child=w.serial_on_child, parent=w.parent,
            children=list(w.children),
            candidates=[(x.factor, x.pe_count, x.ii, x.waste)
                        for x in w.candidates])
        groups[w.gid] = g
        if w.header is not None:
            group_of_header[w.header] = w.gid
        for bid in g.block_ids:
            group_of_block[bid] = w.gid

        # per-block mapping entries
        for bid in g.block_ids:
            blk = program.block(bid)
            if not blk.dfg:
                blocks[bid] = BlockMapping(set(), g.ii, c.factor, {}, [])
                continue
            slot_table: dict[tuple[int, int], int] = {}
            pe_set: set[int] = set()
            ordered = sorted(blk.dfg, key=lambda n: (node_off[n.id],
                                                     node_pe[n.id]))
            for n in blk.dfg:
                pe = g.pe_base + node_pe[n.id]
                slot = node_off[n.id] % g.ii
                if (pe, slot) in slot_table:
                    raise MappingError(
                        f"slot collision in B{bid} at PE{pe} slot {slot}")
                slot_table[(pe, slot)] = n.id
                pe_set.add(pe)
            blocks[bid] = BlockMapping(pe_set=pe_set, ii=g.ii,
                                       extension_factor=c.factor,
                                       slot_table=slot_table,
                                       order=[n.id for n in ordered])

    # control edges: data-dependent bounds flow into control FIFOs;
    # branches and loop generators steer successor addresses
    fifo_idx = 0
    for w in works:
        if w.kind != "loop":
            continue
        g = groups[w.gid]
        if g.bound[0] == "node":
            nid = g.bound[1]
            src_gid = next((x.gid for x in works
                            if nid in groups[x.gid].node_pe), None)
            if src_gid is None:
                raise MappingError(f"bound producer n{nid} is unmapped")
            sg = groups[src_gid]
            src_pe = sg.pe_base + sg.node_pe[nid]
            fifo_of_header[g.header] = fifo_idx
            control_edges.append(ControlEdge(src_pe=src_pe,
                                             dst=("fifo", fifo_idx),
                                             address=nid))
            fifo_idx += 1

    for bid, bm in blocks.items():
        blk = program.block(bid)
        for n in blk.dfg:
            g = groups[group_of_block[bid]]
            if n.opcode == "branch":
                then_b, else_b = None, None
                for succ, cond in blk.successors:
                    if cond == "taken":
                        then_b = succ
                    elif cond == "not-taken":
                        else_b = succ
                for target, _ in ((then_b, "taken"), (else_b, "not-taken")):
                    if target is None:
                        continue
                    for pe in sorted(blocks[target].pe_set):
                        control_edges.append(ControlEdge(
                            src_pe=g.pe_base + g.node_pe[n.id],
                            dst=("pe", pe),
                            address=_first_addr(program, blocks, target)))
            elif n.opcode == "loop-gen":
                body = next((s for s, cond in blk.successors
                             if cond == "loop-back"), None)
                if body is not None and blocks.get(body) and \
                        blocks[body].pe_set:
                    for pe in sorted(blocks[body].pe_set):
                        control_edges.append(ControlEdge(
                            src_pe=g.pe_base + g.node_pe[n.id],
                            dst=("pe", pe),
                            address=_first_addr(program, blocks, body)))

    mapping = Mapping(strategy=strategy, rows=arch.rows, cols=arch.cols,
                      blocks=blocks, groups=groups,
                      group_of_header=group_of_header,
                      group_of_block=group_of_block,
                      control_edges=control_edges,
                      fifo_of_header=fifo_of_header)
    mapping.instructions = _build_instructions(program, mapping)
    _check_invariants(program, mapping)
    return mapping


def _first_addr(program: Program, blocks: dict[int, BlockMapping],
                bid: int) -> int:
    blk = program.block(bid)
    if blk.dfg:
        return blk.dfg[0].id
    return 0


def _build_instructions(program: Program,
                        mapping: Mapping) -> dict[int, list[PEInstruction]]:
    persist = mapping.strategy != "dataflow"
    per_pe: dict[int, list[PEInstruction]] = {}
    consumers: dict[int, set[int]] = {}
    for b in program.blocks:
        for n in b.dfg:
            for ref in n.inputs:
                if isinstance(ref, NodeRef):
                    consumers.setdefault(ref.node, set()).add(n.id)

    def pe_of(nid: int) -> int:
        bid = program.node_block(nid)
        g = mapping.groups[mapping.group_of_block[bid]]
        return g.pe_base + g.node_pe[nid]

    for b in program.blocks:
        bm = mapping.blocks.get(b.id)
        if bm is None:
            continue
        for n in b.dfg:
            pe = pe_of(n.id)
            if n.opcode == "branch":
                then_b = next((s for s, c in b.successors if c == "taken"), None)
                else_b = next((s for s, c in b.successors
                               if c == "not-taken"), None)
                sender = SenderDirective(
                    mode="branch-operator",
                    targets=[("pe", p) for p in sorted(
                        mapping.blocks[then_b].pe_set |
                        mapping.blocks[else_b].pe_set)],
                    addresses={
                        "taken": _first_addr(program, mapping.blocks, then_b),
                        "not-taken": _first_addr(program, mapping.blocks,
                                                 else_b)})
            elif n.opcode == "loop-gen":
                body = next((s for s, c in b.successors
                             if c == "loop-back"), None)
                sender = SenderDirective(
                    mode="loop-operator",
                    targets=[("pe", p) for p in sorted(
                        mapping.blocks[body].pe_set)] if body else [],
                    addresses={"start": _first_addr(program, mapping.blocks,
                                                    body) if body else 0})
            else:
                targets = sorted({pe_of(c) for c in consumers.get(n.id, ())
                                  if program.node_block(c) ==
                                  program.node_block(n.id)})
                sender = SenderDirective(
                    mode="dfg-operator",
                    targets=[("pe", p) for p in targets],
                    addresses={"next": n.id})
            instr = PEInstruction(
                address=n.id, persist=persist, trigger=frozenset({n.id}),
                opcode=n.opcode, srcs=[_enc_ref(r) for r in n.inputs],
                dsts=[n.out_var] if n.out_var else [],
                sender=sender)
            per_pe.setdefault(pe, []).append(instr)
    for lst in per_pe.values():
        lst.sort(key=lambda i: i.address)
    return per_pe


def _enc_ref(ref) -> list:
    if isinstance(ref, Imm):
        return ["imm", ref.value]
    if isinstance(ref, NodeRef):
        return ["node", ref.node]
    return ["var", ref.name]


def _check_invariants(program: Program, mapping: Mapping) -> None:
    for bid, bm in mapping.blocks.items():
        blk = program.block(bid)
        placed = set(bm.slot_table.values())
        want = {n.id for n in blk.dfg}
        if placed != want:
            raise MappingError(f"B{bid}: ops not all placed exactly once")
        per_pe: dict[int, int] = {}
        for (pe, slot), _ in bm.slot_table.items():
            if slot >= bm.ii:
                raise MappingError(f"B{bid}: slot {slot} >= ii {bm.ii}")
            per_pe[pe] = per_pe.get(pe, 0) + 1
        for pe, cnt in per_pe.items():
            if cnt > bm.ii:
                raise MappingError(f"B{bid}: PE{pe} holds {cnt} > ii ops")
    # concurrently-live groups own disjoint PE ranges by construction;
    # verify anyway
    seen: set[int] = set()
    for g in mapping.groups.values():
        mine = g.all_pes()
        if mine & seen:
            raise MappingError("group PE ranges overlap")
        seen |= mine


# ---------------------------------------------------------------------------
# public entry points

def map_marionette(program: Program, arch: ArchConfig,
                   agile: bool = True) -> Mapping:
    return _map_program(program, arch, "marionette", agile=agile)


def map_baseline(program: Program, arch: ArchConfig,
                 strategy: str) -> Mapping:
    if strategy not in ("predication", "switch-config", "dataflow"):
        raise MappingError(f"unknown strategy {strategy!r}")
    return _map_program(program, arch, strategy, agile=False)
