"""Control-data-flow-graph IR: a CFG of basic blocks, each owning a DFG.

Programs are immutable after construction.  Structural checks live in
``validate``; loop nesting and control-form classification are derived
analyses and never mutate the program.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx

EDGE_CONDS = ("always", "taken", "not-taken", "loop-back", "loop-exit")

OPCODES = (
    "add", "sub", "mul", "cmp-lt", "cmp-eq", "select", "load", "store",
    "phi", "branch", "loop-gen", "const", "shift", "and", "or",
)

# opcode -> input arity (load: [addr], store: [addr, value])
_ARITY = {
    "add": 2, "sub": 2, "mul": 2, "cmp-lt": 2, "cmp-eq": 2, "select": 3,
    "load": 1, "store": 2, "phi": 1, "branch": 1, "loop-gen": 2,
    "const": 1, "shift": 2, "and": 2, "or": 2,
}

# control-plane opcodes resolve inside the control path and add no
# functional-unit latency of their own
ZERO_LATENCY = ("phi", "branch", "loop-gen", "const")


def latency_class(opcode: str) -> str:
    if opcode == "mul":
        return "mul"
    if opcode in ("load", "store"):
        return "mem"
    if opcode in ZERO_LATENCY:
        return "ctrl"
    return "alu"


@dataclass(frozen=True)
class NodeRef:
    """Value produced by another DFG node (possibly in another block)."""
    node: int


@dataclass(frozen=True)
class VarRef:
    """Block live-in value, identified by scalar variable name."""
    name: str


@dataclass(frozen=True)
class Imm:
    value: int


ValueRef = NodeRef | VarRef | Imm


@dataclass
class DfgNode:
    id: int
    opcode: str
    inputs: list[ValueRef]
    out_var: str | None = None
    array: str | None = None  # load/store only

    @property
    def latency_class(self) -> str:
        return latency_class(self.opcode)


@dataclass
class BasicBlock:
    id: int
    dfg: list[DfgNode] = field(default_factory=list)
    successors: list[tuple[int, str]] = field(default_factory=list)
    loop_header: bool = False
    # None, a constant trip count, or the node producing the bound value
    loop_bound: int | NodeRef | None = None


@dataclass
class Program:
    name: str
    blocks: list[BasicBlock]
    entry: int
    exit: int
    memories: list[tuple[str, int]] = field(default_factory=list)
    # original surface syntax, kept so the pretty-printer does not have to
    # re-derive structured control flow from the CFG
    source_ast: object | None = None

    def block(self, bid: int) -> BasicBlock:
        return self._index()[bid]

    def _index(self) -> dict[int, BasicBlock]:
        idx = getattr(self, "_blk_idx", None)
        if idx is None or len(idx) != len(self.blocks):
            idx = {b.id: b for b in self.blocks}
            object.__setattr__(self, "_blk_idx", idx)
        return idx

    def node(self, nid: int) -> DfgNode:
        idx = getattr(self, "_node_idx", None)
        if idx is None:
            idx = {n.id: n for b in self.blocks for n in b.dfg}
            object.__setattr__(self, "_node_idx", idx)
        return idx[nid]

    def node_block(self, nid: int) -> int:
        idx = getattr(self, "_node_blk", None)
        if idx is None:
            idx = {n.id: b.id for b in self.blocks for n in b.dfg}
            object.__setattr__(self, "_node_blk", idx)
        return idx[nid]

    def cfg(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for b in self.blocks:
            g.add_node(b.id)
        for b in self.blocks:
            for succ, cond in b.successors:
                g.add_edge(b.id, succ, cond=cond)
        return g


# ---------------------------------------------------------------------------
# validation

def validate(program: Program) -> list[str]:
    """Collect every structural invariant violation; empty list = valid."""
    report: list[str] = []
    ids = [b.id for b in program.blocks]
    if len(ids) != len(set(ids)):
        report.append("duplicate block ids")
        return report
    known = set(ids)

    if program.entry not in known:
        report.append(f"entry block B{program.entry} does not exist")
    if program.exit not in known:
        report.append(f"exit block B{program.exit} does not exist")

    node_ids: set[int] = set()
    for b in program.blocks:
        conds = [c for _, c in b.successors]
        for succ, cond in b.successors:
            if succ not in known:
                report.append(f"B{b.id}: dangling successor B{succ}")
            if cond not in EDGE_CONDS:
                report.append(f"B{b.id}: unknown edge condition {cond!r}")
        if conds.count("always") > 1:
            report.append(f"B{b.id}: more than one 'always' successor")
        if conds.count("taken") != conds.count("not-taken"):
            report.append(f"B{b.id}: unpaired branch edge")
        if conds.count("loop-back") != conds.count("loop-exit"):
            report.append(f"B{b.id}: unpaired loop edge")
        if (conds.count("loop-back") or conds.count("loop-exit")) \
                and not b.loop_header:
            report.append(f"B{b.id}: loop edges on non-header block")

        branches = [n for n in b.dfg if n.opcode == "branch"]
        if len(branches) > 1:
            report.append(f"B{b.id}: multiple branch nodes")
        local = set()
        for n in b.dfg:
            if n.id in node_ids:
                report.append(f"B{b.id}: duplicate node id n{n.id}")
            node_ids.add(n.id)
            if n.opcode not in OPCODES:
                report.append(f"B{b.id}/n{n.id}: unknown opcode {n.opcode!r}")
            elif len(n.inputs) != _ARITY[n.opcode]:
                report.append(
                    f"B{b.id}/n{n.id}: {n.opcode} arity "
                    f"{len(n.inputs)} != {_ARITY[n.opcode]}")
            if n.opcode == "loop-gen" and not b.loop_header:
                report.append(f"B{b.id}/n{n.id}: loop-gen outside loop header")
            for ref in n.inputs:
                if isinstance(ref, NodeRef) and ref.node in local:
                    pass  # intra-block def-before-use checked below
            local.add(n.id)
        # DFG acyclicity: intra-block NodeRef inputs must point backwards
        seen: set[int] = set()
        for n in b.dfg:
            for ref in n.inputs:
                if isinstance(ref, NodeRef) and ref.node in local \
                        and ref.node not in seen and ref.node != n.id:
                    # forward reference within the block
                    if any(m.id == ref.node for m in b.dfg):
                        report.append(
                            f"B{b.id}/n{n.id}: forward DFG edge to n{ref.node}")
                elif isinstance(ref, NodeRef) and ref.node == n.id:
                    report.append(f"B{b.id}/n{n.id}: self edge")
            seen.add(n.id)

    # entry/exit degree rules and connectivity
    g = nx.DiGraph()
    g.add_nodes_from(known)
    for b in program.blocks:
        for succ, _ in b.successors:
            if succ in known:
                g.add_edge(b.id, succ)
    if program.entry in known:
        preds = list(g.predecessors(program.entry))
        if preds:
            report.append(f"entry B{program.entry} has predecessors {preds}")
        reach = set(nx.descendants(g, program.entry)) | {program.entry}
        dead = sorted(known - reach)
        if dead:
            report.append(f"blocks unreachable from entry: {dead}")
    if program.exit in known and list(g.successors(program.exit)):
        report.append(f"exit B{program.exit} has successors")
    others = [b.id for b in program.blocks
              if b.id != program.entry and not list(g.predecessors(b.id))]
    if others:
        report.append(f"multiple entry blocks: {sorted(others)}")
    return report


# ---------------------------------------------------------------------------
# loop analysis

class IrreducibleError(Exception):
    pass


@dataclass
class Loop:
    header: int
    body: set[int]          # includes header and all nested blocks
    depth: int
    imperfect: bool
    children: list["Loop"] = field(default_factory=list)

    def own_blocks(self) -> set[int]:
        nested = set()
        for c in self.children:
            nested |= c.body
        return self.body - nested


@dataclass
class LoopInfo:
    roots: list[Loop]

    def all_loops(self) -> list[Loop]:
        out: list[Loop] = []
        stack = list(self.roots)
        while stack:
            l = stack.pop()
            out.append(l)
            stack.extend(l.children)
        return sorted(out, key=lambda l: (l.depth, l.header))

    def loop_of(self, bid: int) -> Loop | None:
        """Innermost loop containing the block, or None."""
        best = None
        for l in self.all_loops():
            if bid in l.body and (best is None or l.depth > best.depth):
                best = l
        return best


def analyze_loops(program: Program) -> LoopInfo:
    """Build the natural-loop forest; rejects irreducible control flow."""
    g = program.cfg()
    dom = nx.immediate_dominators(g, program.entry)

    def dominates(a: int, b: int) -> bool:
        while True:
            if a == b:
                return True
            nxt = dom[b]
            if nxt == b:
                return False
            b = nxt

    # back edges: u -> h where h dominates u
    back: dict[int, list[int]] = {}
    for u, v in g.edges:
        if dominates(v, u):
            back.setdefault(v, []).append(u)

    # reducibility: every non-trivial SCC must have a single entry node,
    # recursively after peeling that entry's back edges
    def check_reducible(sub: nx.DiGraph) -> None:
        for scc in nx.strongly_connected_components(sub):
            if len(scc) == 1:
                n = next(iter(scc))
                if not sub.has_edge(n, n):
                    continue
                entries = {n}
            else:
                entries = {v for v in scc
                           for p in g.predecessors(v) if p not in scc}
            if len(entries) != 1:
                raise IrreducibleError("irreducible control flow")
            head = next(iter(entries))
            inner = nx.DiGraph(sub.subgraph(scc).copy())
            inner.remove_edges_from([(u, head) for u in list(
                inner.predecessors(head))])
            check_reducible(inner)

    check_reducible(g)

    loops: list[Loop] = []
    for h, tails in back.items():
        body = {h}
        stack = list(tails)
        while stack:
            b = stack.pop()
            if b not in body:
                body.add(b)
                stack.extend(g.predecessors(b))
        loops.append(Loop(header=h, body=body, depth=0, imperfect=False))

    # nesting: loop A is child of B if A.body < B.body (headers distinct)
    loops.sort(key=lambda l: len(l.body))
    roots: list[Loop] = []
    for i, l in enumerate(loops):
        parent = None
        for bigger in loops[i + 1:]:
            if l.header in bigger.body and l.header != bigger.header:
                if parent is None or len(bigger.body) < len(parent.body):
                    parent = bigger
        if parent is not None:
            parent.children.append(l)
        else:
            roots.append(l)

    def set_depth(l: Loop, d: int) -> None:
        l.depth = d
        for c in l.children:
            set_depth(c, d + 1)

    for r in roots:
        set_depth(r, 1)

    # a loop is imperfect when it hosts child loops and still does real
    # computation at its own nesting depth
    for l in loops:
        if not l.children:
            l.imperfect = False
            continue
        compute = False
        for bid in l.own_blocks():
            for n in program.block(bid).dfg:
                if n.opcode not in ("loop-gen", "branch", "phi"):
                    compute = True
        l.imperfect = compute
    return LoopInfo(roots=roots)


def classify_control(program: Program,
                     loops: LoopInfo | None = None) -> set[str]:
    """Classify the control form of a validated program."""
    if loops is None:
        loops = analyze_loops(program)
    flags: set[str] = set()
    has_branch = any(
        any(c == "taken" for _, c in b.successors) for b in program.blocks)
    if has_branch:
        flags.add("BranchDivergence")
    alll = loops.all_loops()
    if any(l.imperfect for l in alll):
        flags.add("ImperfectLoop")
    elif alll:
        flags.add("PerfectLoop")
    if not alll and not has_branch:
        flags.add("StraightLine")
    return flags
