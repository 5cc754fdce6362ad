"""Kernel DSL frontend: parser, pretty-printer, and the scalar reference
interpreter that serves as the functional-correctness oracle.

Grammar (``.mk`` files, UTF-8)::

    kernel NAME {
        array NAME [ INT ] ;
        var NAME = EXPR ;
        NAME = EXPR ;
        NAME [ EXPR ] = EXPR ;
        loop NAME in EXPR .. EXPR { ... }
        if ( EXPR ) { ... } else { ... }
    }

Arithmetic is 32-bit two's-complement with wraparound.  A loop whose upper
bound is not a compile-time constant becomes a data-dependent loop bound
(the header references the producing op).  Loops may not appear inside
``if`` arms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .cdfg import (
    BasicBlock, DfgNode, Imm, NodeRef, Program, ValueRef, VarRef, validate,
)

_MASK = 0xFFFFFFFF


def i32(x: int) -> int:
    x &= _MASK
    return x - 0x100000000 if x & 0x80000000 else x


class ParseError(Exception):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line, self.col = line, col


class InterpError(Exception):
    pass


@dataclass(frozen=True)
class KernelSource:
    text: str
    path: str = "<string>"


@dataclass
class MemoryImage:
    arrays: dict[str, list[int]] = field(default_factory=dict)

    def copy(self) -> "MemoryImage":
        return MemoryImage({k: list(v) for k, v in self.arrays.items()})

    def dump(self) -> str:
        lines = [f"{name}: {','.join(str(v) for v in vals)}"
                 for name, vals in self.arrays.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "MemoryImage":
        arrays: dict[str, list[int]] = {}
        for ln in text.splitlines():
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            name, _, rest = ln.partition(":")
            vals = [int(v) for v in rest.split(",")] if rest.strip() else []
            arrays[name.strip()] = vals
        return cls(arrays)

    @classmethod
    def load(cls, path: str) -> "MemoryImage":
        with open(path, encoding="utf-8") as f:
            return cls.parse(f.read())

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dump())


# ---------------------------------------------------------------------------
# AST

@dataclass
class Num:
    value: int


@dataclass
class Var:
    name: str


@dataclass
class LoadExpr:
    array: str
    index: "Expr"


@dataclass
class Bin:
    op: str
    lhs: "Expr"
    rhs: "Expr"


Expr = Num | Var | LoadExpr | Bin


@dataclass
class VarDecl:
    name: str
    value: Expr


@dataclass
class Assign:
    name: str
    value: Expr


@dataclass
class StoreStmt:
    array: str
    index: Expr
    value: Expr


@dataclass
class LoopStmt:
    var: str
    lo: Expr
    hi: Expr
    body: list["Stmt"]


@dataclass
class IfStmt:
    cond: Expr
    then: list["Stmt"]
    els: list["Stmt"]


Stmt = VarDecl | Assign | StoreStmt | LoopStmt | IfStmt


@dataclass
class KernelAst:
    name: str
    arrays: list[tuple[str, int]]
    body: list[Stmt]


# ---------------------------------------------------------------------------
# lexer / parser

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<num>\d+)
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\.\.|<<|>>|==|!=|<=|>=|[{}()\[\];=<>+\-*&|,])
""", re.VERBOSE)

_KEYWORDS = {"kernel", "array", "var", "loop", "in", "if", "else"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _lex(src: KernelSource) -> list[_Tok]:
    toks = []
    text, pos, line, linestart = src.text, 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}",
                             line, pos - linestart + 1)
        kind = m.lastgroup
        tok = m.group()
        if kind != "ws":
            k = tok if (kind == "id" and tok in _KEYWORDS) else kind
            if kind == "op":
                k = tok
            toks.append(_Tok(k, tok, line, m.start() - linestart + 1))
        line += tok.count("\n")
        if "\n" in tok:
            linestart = m.start() + tok.rfind("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - linestart + 1))
    return toks


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str) -> _Tok:
        t = self.next()
        if t.kind != kind:
            raise ParseError(f"expected {kind!r}, got {t.text!r}",
                             t.line, t.col)
        return t

    def parse_kernel(self) -> KernelAst:
        self.expect("kernel")
        name = self.expect("id").text
        self.expect("{")
        arrays = []
        while self.peek().kind == "array":
            self.next()
            an = self.expect("id").text
            self.expect("[")
            ln = int(self.expect("num").text)
            self.expect("]")
            self.expect(";")
            arrays.append((an, ln))
        body = self.stmts_until("}")
        self.expect("}")
        self.expect("eof")
        return KernelAst(name, arrays, body)

    def stmts_until(self, end: str) -> list[Stmt]:
        out = []
        while self.peek().kind != end:
            out.append(self.stmt())
        return out

    def stmt(self) -> Stmt:
        t = self.peek()
        if t.kind == "var":
            self.next()
            name = self.expect("id").text
            self.expect("=")
            e = self.expr()
            self.expect(";")
            return VarDecl(name, e)
        if t.kind == "loop":
            self.next()
            v = self.expect("id").text
            self.expect("in")
            lo = self.expr()
            self.expect("..")
            hi = self.expr()
            self.expect("{")
            body = self.stmts_until("}")
            self.expect("}")
            return LoopStmt(v, lo, hi, body)
        if t.kind == "if":
            self.next()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            self.expect("{")
            then = self.stmts_until("}")
            self.expect("}")
            els: list[Stmt] = []
            if self.peek().kind == "else":
                self.next()
                self.expect("{")
                els = self.stmts_until("}")
                self.expect("}")
            return IfStmt(cond, then, els)
        if t.kind == "id":
            name = self.next().text
            if self.peek().kind == "[":
                self.next()
                idx = self.expr()
                self.expect("]")
                self.expect("=")
                val = self.expr()
                self.expect(";")
                return StoreStmt(name, idx, val)
            self.expect("=")
            e = self.expr()
            self.expect(";")
            return Assign(name, e)
        raise ParseError(f"unexpected token {t.text!r}", t.line, t.col)

    # precedence: | < & < (cmp) < (shift) < (+ -) < (*) < unary
    def expr(self) -> Expr:
        e = self.and_expr()
        while self.peek().kind == "|":
            self.next()
            e = Bin("|", e, self.and_expr())
        return e

    def and_expr(self) -> Expr:
        e = self.cmp_expr()
        while self.peek().kind == "&":
            self.next()
            e = Bin("&", e, self.cmp_expr())
        return e

    def cmp_expr(self) -> Expr:
        e = self.shift_expr()
        while self.peek().kind in ("<", ">", "<=", ">=", "==", "!="):
            op = self.next().kind
            e = Bin(op, e, self.shift_expr())
        return e

    def shift_expr(self) -> Expr:
        e = self.add_expr()
        while self.peek().kind in ("<<", ">>"):
            op = self.next().kind
            e = Bin(op, e, self.add_expr())
        return e

    def add_expr(self) -> Expr:
        e = self.mul_expr()
        while self.peek().kind in ("+", "-"):
            op = self.next().kind
            e = Bin(op, e, self.mul_expr())
        return e

    def mul_expr(self) -> Expr:
        e = self.unary()
        while self.peek().kind == "*":
            self.next()
            e = Bin("*", e, self.unary())
        return e

    def unary(self) -> Expr:
        t = self.peek()
        if t.kind == "-":
            self.next()
            return Bin("-", Num(0), self.unary())
        if t.kind == "num":
            self.next()
            return Num(int(t.text))
        if t.kind == "(":
            self.next()
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "id":
            self.next()
            if self.peek().kind == "[":
                self.next()
                idx = self.expr()
                self.expect("]")
                return LoadExpr(t.text, idx)
            return Var(t.text)
        raise ParseError(f"unexpected token {t.text!r} in expression",
                         t.line, t.col)


# ---------------------------------------------------------------------------
# CDFG construction

class _Builder:
    def __init__(self, ast: KernelAst):
        self.ast = ast
        self.blocks: list[BasicBlock] = []
        self.next_block = 0
        self.next_node = 0
        self.arrays = dict(ast.arrays)
        self.declared: set[str] = set()
        self.cur: BasicBlock | None = None
        self.env: dict[str, ValueRef] = {}

    def new_block(self) -> BasicBlock:
        b = BasicBlock(id=self.next_block)
        self.next_block += 1
        self.blocks.append(b)
        self.cur = b
        self.env = {}
        return b

    def emit(self, opcode: str, inputs: list[ValueRef],
             out_var: str | None = None, array: str | None = None) -> NodeRef:
        n = DfgNode(id=self.next_node, opcode=opcode, inputs=inputs,
                    out_var=out_var, array=array)
        self.next_node += 1
        assert self.cur is not None
        self.cur.dfg.append(n)
        return NodeRef(n.id)

    def read_var(self, name: str) -> ValueRef:
        if name not in self.declared:
            raise ParseError(f"undeclared variable {name!r}", 0, 0)
        return self.env.get(name, VarRef(name))

    def lower(self, e: Expr) -> ValueRef:
        if isinstance(e, Num):
            return Imm(i32(e.value))
        if isinstance(e, Var):
            return self.read_var(e.name)
        if isinstance(e, LoadExpr):
            if e.array not in self.arrays:
                raise ParseError(f"undeclared array {e.array!r}", 0, 0)
            return self.emit("load", [self.lower(e.index)], array=e.array)
        assert isinstance(e, Bin)
        a, b = self.lower(e.lhs), self.lower(e.rhs)
        op = e.op
        if op == "+":
            return self.emit("add", [a, b])
        if op == "-":
            return self.emit("sub", [a, b])
        if op == "*":
            return self.emit("mul", [a, b])
        if op == "&":
            return self.emit("and", [a, b])
        if op == "|":
            return self.emit("or", [a, b])
        if op == "<<":
            return self.emit("shift", [a, b])
        if op == ">>":
            # shift opcode is signed: negative amount shifts right
            if isinstance(b, Imm):
                return self.emit("shift", [a, Imm(-b.value)])
            neg = self.emit("sub", [Imm(0), b])
            return self.emit("shift", [a, neg])
        if op == "<":
            return self.emit("cmp-lt", [a, b])
        if op == ">":
            return self.emit("cmp-lt", [b, a])
        if op == "==":
            return self.emit("cmp-eq", [a, b])
        if op == "!=":
            eq = self.emit("cmp-eq", [a, b])
            return self.emit("cmp-eq", [eq, Imm(0)])
        if op == "<=":
            gt = self.emit("cmp-lt", [b, a])
            return self.emit("cmp-eq", [gt, Imm(0)])
        if op == ">=":
            lt = self.emit("cmp-lt", [a, b])
            return self.emit("cmp-eq", [lt, Imm(0)])
        raise ParseError(f"unsupported operator {op!r}", 0, 0)

    def assign(self, name: str, e: Expr, declare: bool) -> None:
        if declare:
            self.declared.add(name)
        elif name not in self.declared:
            raise ParseError(f"undeclared variable {name!r}", 0, 0)
        ref = self.lower(e)
        if isinstance(ref, Imm):
            ref = self.emit("const", [ref], out_var=name)
        elif isinstance(ref, NodeRef):
            node = next(n for b in self.blocks for n in b.dfg
                        if n.id == ref.node)
            if node.out_var is None:
                node.out_var = name
            else:
                ref = self.emit("add", [ref, Imm(0)], out_var=name)
        else:  # plain alias of another variable: materialize a copy
            ref = self.emit("add", [ref, Imm(0)], out_var=name)
        self.env[name] = ref

    def build_stmts(self, stmts: list[Stmt], in_branch: bool) -> None:
        for s in stmts:
            if isinstance(s, VarDecl):
                self.assign(s.name, s.value, declare=True)
            elif isinstance(s, Assign):
                self.assign(s.name, s.value, declare=False)
            elif isinstance(s, StoreStmt):
                if s.array not in self.arrays:
                    raise ParseError(f"undeclared array {s.array!r}", 0, 0)
                idx = self.lower(s.index)
                val = self.lower(s.value)
                if isinstance(val, VarRef) or isinstance(val, Imm):
                    pass
                self.emit("store", [idx, val], array=s.array)
            elif isinstance(s, LoopStmt):
                if in_branch:
                    raise ParseError("loop inside branch is not supported",
                                     0, 0)
                self.build_loop(s)
            elif isinstance(s, IfStmt):
                if in_branch:
                    raise ParseError("nested branches are not supported",
                                     0, 0)
                self.build_if(s)

    def build_loop(self, s: LoopStmt) -> None:
        lo_ref = self.lower(s.lo)
        hi_ref = self.lower(s.hi)
        pre = self.cur
        assert pre is not None
        header = self.new_block()
        header.loop_header = True
        if isinstance(hi_ref, Imm) and isinstance(lo_ref, Imm):
            header.loop_bound = max(0, hi_ref.value - lo_ref.value)
        elif isinstance(hi_ref, NodeRef):
            header.loop_bound = hi_ref
        else:  # live-in variable bound: point at its defining node
            name = hi_ref.name
            defn = None
            for b in reversed(self.blocks):
                for n in reversed(b.dfg):
                    if n.out_var == name:
                        defn = n
                        break
                if defn:
                    break
            if defn is None:
                raise ParseError(f"loop bound variable {name!r} has no "
                                 "defining statement", 0, 0)
            header.loop_bound = NodeRef(defn.id)
        self.declared.add(s.var)
        self.emit("loop-gen", [lo_ref, hi_ref], out_var=s.var)
        pre.successors.append((header.id, "always"))

        body_first = self.new_block()
        header.successors.append((body_first.id, "loop-back"))
        self.build_stmts(s.body, in_branch=False)
        body_last = self.cur
        assert body_last is not None
        body_last.successors.append((header.id, "always"))

        after = self.new_block()
        header.successors.append((after.id, "loop-exit"))

    def build_if(self, s: IfStmt) -> None:
        cond = self.lower(s.cond)
        self.emit("branch", [cond])
        cond_blk = self.cur
        assert cond_blk is not None

        assigned: set[str] = set()

        def collect(stmts: list[Stmt]) -> None:
            for st in stmts:
                if isinstance(st, (VarDecl, Assign)):
                    assigned.add(st.name)

        collect(s.then)
        collect(s.els)

        then_blk = self.new_block()
        self.build_stmts(s.then, in_branch=True)
        then_last = self.cur

        else_blk = self.new_block()
        self.build_stmts(s.els, in_branch=True)
        else_last = self.cur

        join = self.new_block()
        cond_blk.successors.append((then_blk.id, "taken"))
        cond_blk.successors.append((else_blk.id, "not-taken"))
        assert then_last is not None and else_last is not None
        then_last.successors.append((join.id, "always"))
        else_last.successors.append((join.id, "always"))
        for v in sorted(assigned):
            self.env[v] = self.emit("phi", [VarRef(v)], out_var=v)

    def build(self) -> Program:
        entry = self.new_block()
        self.build_stmts(self.ast.body, in_branch=False)
        exit_blk = self.cur
        assert exit_blk is not None
        prog = Program(name=self.ast.name, blocks=self.blocks,
                       entry=entry.id, exit=exit_blk.id,
                       memories=list(self.ast.arrays),
                       source_ast=self.ast)
        return prog


def parse_kernel(src: KernelSource | str) -> Program:
    if isinstance(src, str):
        src = KernelSource(src)
    ast = _Parser(_lex(src)).parse_kernel()
    prog = _Builder(ast).build()
    problems = validate(prog)
    if problems:  # builder bug, not a user error
        raise AssertionError(f"builder produced invalid program: {problems}")
    return prog


def load_kernel(path: str) -> Program:
    with open(path, encoding="utf-8") as f:
        return parse_kernel(KernelSource(f.read(), path))


# ---------------------------------------------------------------------------
# pretty printer

def _fmt_expr(e: Expr) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, LoadExpr):
        return f"{e.array}[{_fmt_expr(e.index)}]"
    assert isinstance(e, Bin)
    return f"({_fmt_expr(e.lhs)} {e.op} {_fmt_expr(e.rhs)})"


def _fmt_stmts(stmts: list[Stmt], ind: int) -> list[str]:
    pad = "    " * ind
    out = []
    for s in stmts:
        if isinstance(s, VarDecl):
            out.append(f"{pad}var {s.name} = {_fmt_expr(s.value)};")
        elif isinstance(s, Assign):
            out.append(f"{pad}{s.name} = {_fmt_expr(s.value)};")
        elif isinstance(s, StoreStmt):
            out.append(f"{pad}{s.array}[{_fmt_expr(s.index)}] = "
                       f"{_fmt_expr(s.value)};")
        elif isinstance(s, LoopStmt):
            out.append(f"{pad}loop {s.var} in {_fmt_expr(s.lo)} .. "
                       f"{_fmt_expr(s.hi)} {{")
            out.extend(_fmt_stmts(s.body, ind + 1))
            out.append(f"{pad}}}")
        elif isinstance(s, IfStmt):
            out.append(f"{pad}if ({_fmt_expr(s.cond)}) {{")
            out.extend(_fmt_stmts(s.then, ind + 1))
            if s.els:
                out.append(f"{pad}}} else {{")
                out.extend(_fmt_stmts(s.els, ind + 1))
            out.append(f"{pad}}}")
    return out


def print_kernel(program: Program) -> str:
    ast = program.source_ast
    if not isinstance(ast, KernelAst):
        raise ValueError("program has no attached surface syntax")
    lines = [f"kernel {ast.name} {{"]
    for name, ln in ast.arrays:
        lines.append(f"    array {name}[{ln}];")
    lines.extend(_fmt_stmts(ast.body, 1))
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# reference interpreter

def _check_memory(program: Program, mem: MemoryImage) -> None:
    for name, length in program.memories:
        if name not in mem.arrays:
            raise InterpError(f"memory image missing array {name!r}")
        if len(mem.arrays[name]) != length:
            raise InterpError(
                f"array {name!r} length {len(mem.arrays[name])} != "
                f"declared {length}")


@dataclass
class ExecRecord:
    """Dynamic control-flow log filled in by ``interpret`` on request:
    per-invocation loop trip counts and branch outcomes, in execution
    order."""
    rounds: dict[int, list[int]] = field(default_factory=dict)
    branches: dict[int, list[bool]] = field(default_factory=dict)


def interpret(program: Program, mem: MemoryImage,
              max_steps: int = 10 ** 8,
              record: ExecRecord | None = None,
              ) -> tuple[MemoryImage, dict[int, int]]:
    """Sequential big-step execution; returns final memory and per-block
    dynamic execution counts."""
    _check_memory(program, mem)
    out = mem.copy()
    env: dict[str, int] = {}
    values: dict[int, int] = {}
    counts: dict[int, int] = {b.id: 0 for b in program.blocks}
    loop_state: dict[int, tuple[int, int]] = {}  # header -> (i, end)

    def resolve(ref: ValueRef) -> int:
        if isinstance(ref, Imm):
            return ref.value
        if isinstance(ref, NodeRef):
            if ref.node not in values:
                raise InterpError(f"use of unevaluated node n{ref.node}")
            return values[ref.node]
        if ref.name not in env:
            raise InterpError(f"undefined variable {ref.name!r}")
        return env[ref.name]

    cur = program.entry
    steps = 0
    while True:
        steps += 1
        if steps > max_steps:
            raise InterpError("step budget exceeded")
        blk = program.block(cur)
        counts[cur] += 1
        branch_taken: bool | None = None
        loop_continue: bool | None = None
        for n in blk.dfg:
            op = n.opcode
            if op == "loop-gen":
                if cur in loop_state:
                    i, end = loop_state[cur]
                    i += 1
                else:
                    lo = resolve(n.inputs[0])
                    hi = resolve(n.inputs[1])
                    i, end = lo, hi
                    if record is not None:
                        record.rounds.setdefault(cur, []).append(
                            max(0, end - i))
                if i < end:
                    loop_state[cur] = (i, end)
                    loop_continue = True
                else:
                    loop_state.pop(cur, None)
                    loop_continue = False
                v = i
            elif op == "branch":
                branch_taken = resolve(n.inputs[0]) != 0
                if record is not None:
                    record.branches.setdefault(cur, []).append(branch_taken)
                v = 1 if branch_taken else 0
            elif op == "const":
                v = resolve(n.inputs[0])
            elif op == "phi":
                v = resolve(n.inputs[0])
            elif op == "load":
                idx = resolve(n.inputs[0])
                arr = out.arrays[n.array]
                if not 0 <= idx < len(arr):
                    raise InterpError(
                        f"out-of-bounds load B{cur}/n{n.id}: "
                        f"{n.array}[{idx}]")
                v = arr[idx]
            elif op == "store":
                idx = resolve(n.inputs[0])
                val = resolve(n.inputs[1])
                arr = out.arrays[n.array]
                if not 0 <= idx < len(arr):
                    raise InterpError(
                        f"out-of-bounds store B{cur}/n{n.id}: "
                        f"{n.array}[{idx}]")
                arr[idx] = i32(val)
                v = val
            else:
                a = resolve(n.inputs[0])
                b = resolve(n.inputs[1]) if len(n.inputs) > 1 else 0
                if op == "add":
                    v = i32(a + b)
                elif op == "sub":
                    v = i32(a - b)
                elif op == "mul":
                    v = i32(a * b)
                elif op == "cmp-lt":
                    v = 1 if a < b else 0
                elif op == "cmp-eq":
                    v = 1 if a == b else 0
                elif op == "and":
                    v = i32(a & b)
                elif op == "or":
                    v = i32(a | b)
                elif op == "shift":
                    amt = b
                    if amt >= 0:
                        v = i32(a << min(amt, 63))
                    else:
                        v = i32((a & _MASK) >> min(-amt, 63))
                elif op == "select":
                    c = a
                    t = resolve(n.inputs[1])
                    f = resolve(n.inputs[2])
                    v = t if c != 0 else f
                else:
                    raise InterpError(f"unknown opcode {op!r}")
            values[n.id] = i32(v) if isinstance(v, int) else v
            if n.out_var is not None:
                env[n.out_var] = values[n.id]

        # pick successor
        nxt: int | None = None
        if loop_continue is not None:
            want = "loop-back" if loop_continue else "loop-exit"
            for succ, cond in blk.successors:
                if cond == want:
                    nxt = succ
        elif branch_taken is not None:
            want = "taken" if branch_taken else "not-taken"
            for succ, cond in blk.successors:
                if cond == want:
                    nxt = succ
        else:
            for succ, cond in blk.successors:
                if cond == "always":
                    nxt = succ
        if nxt is None:
            break
        cur = nxt
    return out, counts
