"""Recover structured regions (sequences, loops, if/else diamonds) from a
validated CFG.

The frontend only emits reducible, structured control flow, so the CFG can
be walked back into a region tree without general interval analysis.  The
mapper schedules one pipeline per loop region; the simulator drives its
timing model off the same tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cdfg import BasicBlock, Program


class StructureError(Exception):
    pass


@dataclass
class Straight:
    block: int


@dataclass
class IfRegion:
    cond_block: int      # ends with the branch node
    then_block: int
    else_block: int
    join_block: int      # holds the phis; also continues the sequence


@dataclass
class LoopRegion:
    header: int
    body: list["Region"]
    after: int


Region = Straight | IfRegion | LoopRegion


@dataclass
class RegionTree:
    items: list[Region] = field(default_factory=list)


def _succ(blk: BasicBlock, cond: str) -> int | None:
    for s, c in blk.successors:
        if c == cond:
            return s
    return None


def build_regions(program: Program) -> RegionTree:
    """Walk the CFG from entry into a region tree."""
    return RegionTree(items=_walk(program, program.entry, None))


def _walk(program: Program, start: int, stop: int | None) -> list[Region]:
    items: list[Region] = []
    cur: int | None = start
    while cur is not None and cur != stop:
        blk = program.block(cur)
        if blk.loop_header:
            body_first = _succ(blk, "loop-back")
            after = _succ(blk, "loop-exit")
            if body_first is None or after is None:
                raise StructureError(f"malformed loop header B{cur}")
            body = _walk(program, body_first, cur)
            items.append(LoopRegion(header=cur, body=body, after=after))
            cur = after
            continue
        taken = _succ(blk, "taken")
        if taken is not None:
            ntaken = _succ(blk, "not-taken")
            join = _succ(program.block(taken), "always")
            join2 = _succ(program.block(ntaken), "always")
            if join is None or join != join2:
                raise StructureError(f"branch at B{cur} does not rejoin")
            items.append(IfRegion(cond_block=cur, then_block=taken,
                                  else_block=ntaken, join_block=join))
            cur = join
            continue
        items.append(Straight(block=cur))
        cur = _succ(blk, "always")
    return items


def loop_regions(tree: RegionTree) -> list[LoopRegion]:
    """All loop regions, outermost first."""
    out: list[LoopRegion] = []

    def rec(items: list[Region]) -> None:
        for it in items:
            if isinstance(it, LoopRegion):
                out.append(it)
                rec(it.body)

    rec(tree.items)
    return out
