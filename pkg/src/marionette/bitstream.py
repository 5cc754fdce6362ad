"""Configuration bitstream emission and loading.

Binary layout (all integers little-endian):

    header:   magic ``MRNT`` (4 bytes), version u16, rows u8, cols u8,
              strategy u8
    PE block: count u16, then per PE: pe-index u16, instr-count u16,
              instructions as fixed 16-byte records
                  address u16, flags u8 (bit0 = persist), opcode u8
                  src0 u16, src1 u16, dst u16
                  sender-mode u8, target-count u8, 4 pad bytes
              followed by target-count (port u16, address u16) pairs
    routes:   count u16, then per entry: input port u16 followed by an
              N-bit output bitmap (N = network port count, u16-prefixed)
    fifos:    count u16, then per binding: loop-header block u16, fifo u16
    aux:      u32 byte length + UTF-8 JSON

Source operands are packed into u16s: the top two bits select the kind
(01 node reference, 10 variable-pool index, 11 immediate-pool index); the
pools live in the aux section.  The aux section also carries the full
mapping and (optionally) the program so that ``load_bitstream`` is the
exact inverse of ``emit_bitstream``.
"""

from __future__ import annotations

import json
import struct

from .arch import ArchConfig
from .cdfg import (
    BasicBlock, DfgNode, Imm, NodeRef, OPCODES, Program, VarRef,
)
from .mapper import (
    BlockMapping, ControlEdge, GroupSchedule, Mapping, PEInstruction,
    SenderDirective, STRATEGIES,
)

MAGIC = b"MRNT"
VERSION = 1

_SENDER_MODES = ("dfg-operator", "branch-operator", "loop-operator")


class BitstreamError(Exception):
    pass


def network_ports(arch: ArchConfig, n_fifos: int) -> int:
    """Control-network port count: PEs row-major, then FIFOs, then the
    controller port, rounded up to a power of two (minimum 4)."""
    need = arch.n_pes + n_fifos + 1
    n = 4
    while n < need:
        n *= 2
    return n


def _pack_src(ref, var_pool: list[str], imm_pool: list[int]) -> int:
    if isinstance(ref, list):  # already encoded ['node'|'var'|'imm', x]
        kind, val = ref
    elif isinstance(ref, NodeRef):
        kind, val = "node", ref.node
    elif isinstance(ref, VarRef):
        kind, val = "var", ref.name
    else:
        kind, val = "imm", ref.value
    if kind == "node":
        return 0x4000 | (val & 0x3FFF)
    if kind == "var":
        if val not in var_pool:
            var_pool.append(val)
        return 0x8000 | var_pool.index(val)
    if val not in imm_pool:
        imm_pool.append(val)
    return 0xC000 | imm_pool.index(val)


def emit_bitstream(mapping: Mapping, arch: ArchConfig,
                   program: Program | None = None) -> bytes:
    strategy_id = STRATEGIES.index(mapping.strategy)
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HBBB", VERSION, mapping.rows, mapping.cols,
                       strategy_id)

    var_pool: list[str] = []
    imm_pool: list[int] = []

    out += struct.pack("<H", len(mapping.instructions))
    for pe in sorted(mapping.instructions):
        instrs = mapping.instructions[pe]
        out += struct.pack("<HH", pe, len(instrs))
        for ins in instrs:
            flags = 1 if ins.persist else 0
            srcs = [_pack_src(s, var_pool, imm_pool) for s in ins.srcs]
            src0 = srcs[0] if len(srcs) > 0 else 0
            src1 = srcs[1] if len(srcs) > 1 else 0
            dst = _pack_src(["var", ins.dsts[0]], var_pool, imm_pool) \
                if ins.dsts else 0
            sender = ins.sender
            mode = _SENDER_MODES.index(sender.mode) if sender else 0
            targets = sender.targets if sender else []
            out += struct.pack("<HBBHHHBB4x", ins.address, flags,
                               OPCODES.index(ins.opcode), src0, src1, dst,
                               mode, len(targets))
            addr_list = [sender.addresses[k]
                         for k in sorted(sender.addresses)] if sender else []
            for i, (tkind, tport) in enumerate(targets):
                port = tport if tkind == "pe" else \
                    arch.n_pes + tport if tkind == "fifo" else 0
                a = addr_list[min(i, len(addr_list) - 1)] if addr_list else 0
                out += struct.pack("<HH", port, a)

    n_ports = network_ports(arch, len(mapping.fifo_of_header))
    bmap_bytes = (n_ports + 7) // 8
    routes: dict[int, int] = {}
    for e in mapping.control_edges:
        if e.dst[0] == "pe":
            port = e.dst[1]
        elif e.dst[0] == "fifo":
            port = arch.n_pes + e.dst[1]
        else:
            port = n_ports - 1
        routes[e.src_pe] = routes.get(e.src_pe, 0) | (1 << port)
    out += struct.pack("<HH", len(routes), n_ports)
    for src in sorted(routes):
        out += struct.pack("<H", src)
        out += routes[src].to_bytes(bmap_bytes, "little")

    out += struct.pack("<H", len(mapping.fifo_of_header))
    for hdr in sorted(mapping.fifo_of_header):
        out += struct.pack("<HH", hdr, mapping.fifo_of_header[hdr])

    aux = json.dumps({
        "var_pool": var_pool,
        "imm_pool": imm_pool,
        "mapping": _mapping_to_json(mapping),
        "program": _program_to_json(program) if program else None,
    }, sort_keys=True, separators=(",", ":")).encode()
    out += struct.pack("<I", len(aux))
    out += aux
    return bytes(out)


def load_bitstream(data: bytes) -> tuple[Mapping, ArchConfig]:
    mapping, arch, _ = load_bitstream_full(data)
    return mapping, arch


def load_bitstream_full(data: bytes) -> tuple[Mapping, ArchConfig,
                                              Program | None]:
    try:
        return _load(data)
    except (struct.error, IndexError, json.JSONDecodeError) as e:
        raise BitstreamError(f"truncated or corrupt bitstream: {e}") from e


def _load(data: bytes):
    if data[:4] != MAGIC:
        raise BitstreamError("bad magic: not a bitstream")
    pos = 4
    version, rows, cols, strategy_id = struct.unpack_from("<HBBB", data, pos)
    pos += 5
    if version != VERSION:
        raise BitstreamError(
            f"version mismatch: file v{version}, supported v{VERSION}")
    if strategy_id >= len(STRATEGIES):
        raise BitstreamError(f"unknown strategy id {strategy_id}")

    # skip the fixed sections (the aux JSON is authoritative); still walk
    # them so truncation is detected
    (n_pe_records,) = struct.unpack_from("<H", data, pos)
    pos += 2
    for _ in range(n_pe_records):
        _, n_ins = struct.unpack_from("<HH", data, pos)
        pos += 4
        for _ in range(n_ins):
            (*_rest, tcount) = struct.unpack_from("<HBBHHHBB", data, pos)
            pos += 16
            pos += 4 * tcount
    n_routes, n_ports = struct.unpack_from("<HH", data, pos)
    pos += 4
    bmap_bytes = (n_ports + 7) // 8
    pos += n_routes * (2 + bmap_bytes)
    (n_fifos,) = struct.unpack_from("<H", data, pos)
    pos += 2 + 4 * n_fifos
    (aux_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + aux_len > len(data):
        raise BitstreamError("truncated aux section")
    aux = json.loads(data[pos:pos + aux_len].decode())

    mapping = _mapping_from_json(aux["mapping"])
    if mapping.strategy != STRATEGIES[strategy_id] or \
            mapping.rows != rows or mapping.cols != cols:
        raise BitstreamError("header does not match aux mapping")
    arch = ArchConfig(rows=rows, cols=cols)
    program = _program_from_json(aux["program"]) if aux["program"] else None
    return mapping, arch, program


# ---------------------------------------------------------------------------
# JSON codecs

def _ref_to_json(ref) -> list:
    if isinstance(ref, NodeRef):
        return ["node", ref.node]
    if isinstance(ref, VarRef):
        return ["var", ref.name]
    return ["imm", ref.value]


def _ref_from_json(j) -> NodeRef | VarRef | Imm:
    kind, val = j
    if kind == "node":
        return NodeRef(val)
    if kind == "var":
        return VarRef(val)
    return Imm(val)


def _program_to_json(p: Program) -> dict:
    return {
        "name": p.name,
        "entry": p.entry,
        "exit": p.exit,
        "memories": [[n, ln] for n, ln in p.memories],
        "blocks": [{
            "id": b.id,
            "loop_header": b.loop_header,
            "loop_bound": (["const", b.loop_bound]
                           if isinstance(b.loop_bound, int)
                           else ["node", b.loop_bound.node]
                           if b.loop_bound is not None else None),
            "successors": [[s, c] for s, c in b.successors],
            "dfg": [{
                "id": n.id, "opcode": n.opcode,
                "inputs": [_ref_to_json(r) for r in n.inputs],
                "out_var": n.out_var, "array": n.array,
            } for n in b.dfg],
        } for b in p.blocks],
    }


def _program_from_json(j: dict) -> Program:
    blocks = []
    for bj in j["blocks"]:
        lb = bj["loop_bound"]
        bound = None if lb is None else \
            lb[1] if lb[0] == "const" else NodeRef(lb[1])
        blocks.append(BasicBlock(
            id=bj["id"],
            dfg=[DfgNode(id=nj["id"], opcode=nj["opcode"],
                         inputs=[_ref_from_json(r) for r in nj["inputs"]],
                         out_var=nj["out_var"], array=nj["array"])
                 for nj in bj["dfg"]],
            successors=[(s, c) for s, c in bj["successors"]],
            loop_header=bj["loop_header"],
            loop_bound=bound))
    return Program(name=j["name"], blocks=blocks, entry=j["entry"],
                   exit=j["exit"],
                   memories=[(n, ln) for n, ln in j["memories"]])


def _mapping_to_json(m: Mapping) -> dict:
    return {
        "strategy": m.strategy,
        "rows": m.rows,
        "cols": m.cols,
        "blocks": {str(bid): {
            "pe_set": sorted(bm.pe_set),
            "ii": bm.ii,
            "extension_factor": bm.extension_factor,
            "slot_table": [[pe, slot, nid]
                           for (pe, slot), nid in sorted(bm.slot_table.items())],
            "order": bm.order,
        } for bid, bm in sorted(m.blocks.items())},
        "groups": {str(gid): {
            "gid": g.gid, "kind": g.kind, "header": g.header,
            "depth": g.depth, "block_ids": g.block_ids,
            "n_units": g.n_units, "factor": g.factor, "ii": g.ii,
            "d": g.d, "pe_base": g.pe_base, "pe_count": g.pe_count,
            "replicas": g.replicas, "replicate_mode": g.replicate_mode,
            "node_pe": {str(k): v for k, v in sorted(g.node_pe.items())},
            "node_off": {str(k): v for k, v in sorted(g.node_off.items())},
            "node_lane": {str(k): v for k, v in sorted(g.node_lane.items())},
            "bound": list(g.bound),
            "round_serial": g.round_serial,
            "serial_on_child": g.serial_on_child,
            "parent": g.parent, "children": g.children,
            "candidates": [list(c) for c in g.candidates],
        } for gid, g in sorted(m.groups.items())},
        "group_of_header": {str(k): v
                            for k, v in sorted(m.group_of_header.items())},
        "group_of_block": {str(k): v
                           for k, v in sorted(m.group_of_block.items())},
        "control_edges": [[e.src_pe, list(e.dst), e.address]
                          for e in m.control_edges],
        "fifo_of_header": {str(k): v
                           for k, v in sorted(m.fifo_of_header.items())},
        "instructions": {str(pe): [{
            "address": i.address, "persist": i.persist,
            "trigger": sorted(i.trigger), "opcode": i.opcode,
            "srcs": i.srcs, "dsts": i.dsts,
            "sender": None if i.sender is None else {
                "mode": i.sender.mode,
                "targets": [list(t) for t in i.sender.targets],
                "addresses": i.sender.addresses,
            },
        } for i in ins] for pe, ins in sorted(m.instructions.items())},
    }


def _mapping_from_json(j: dict) -> Mapping:
    blocks = {}
    for bid, bj in j["blocks"].items():
        blocks[int(bid)] = BlockMapping(
            pe_set=set(bj["pe_set"]), ii=bj["ii"],
            extension_factor=bj["extension_factor"],
            slot_table={(pe, slot): nid
                        for pe, slot, nid in bj["slot_table"]},
            order=list(bj["order"]))
    groups = {}
    for gid, gj in j["groups"].items():
        groups[int(gid)] = GroupSchedule(
            gid=gj["gid"], kind=gj["kind"], header=gj["header"],
            depth=gj["depth"], block_ids=list(gj["block_ids"]),
            n_units=gj["n_units"], factor=gj["factor"], ii=gj["ii"],
            d=gj["d"], pe_base=gj["pe_base"], pe_count=gj["pe_count"],
            replicas=gj["replicas"], replicate_mode=gj["replicate_mode"],
            node_pe={int(k): v for k, v in gj["node_pe"].items()},
            node_off={int(k): v for k, v in gj["node_off"].items()},
            node_lane={int(k): v for k, v in gj["node_lane"].items()},
            bound=tuple(gj["bound"]),
            round_serial=gj["round_serial"],
            serial_on_child=gj["serial_on_child"],
            parent=gj["parent"], children=list(gj["children"]),
            candidates=[tuple(c) for c in gj["candidates"]])
    instructions = {}
    for pe, ins in j["instructions"].items():
        instructions[int(pe)] = [PEInstruction(
            address=ij["address"], persist=ij["persist"],
            trigger=frozenset(ij["trigger"]), opcode=ij["opcode"],
            srcs=[list(s) if isinstance(s, list) else s for s in ij["srcs"]],
            dsts=list(ij["dsts"]),
            sender=None if ij["sender"] is None else SenderDirective(
                mode=ij["sender"]["mode"],
                targets=[tuple(t) for t in ij["sender"]["targets"]],
                addresses=dict(ij["sender"]["addresses"])),
        ) for ij in ins]
    return Mapping(
        strategy=j["strategy"], rows=j["rows"], cols=j["cols"],
        blocks=blocks, groups=groups,
        group_of_header={int(k): v for k, v in j["group_of_header"].items()},
        group_of_block={int(k): v for k, v in j["group_of_block"].items()},
        control_edges=[ControlEdge(src_pe=s, dst=tuple(d), address=a)
                       for s, d, a in j["control_edges"]],
        fifo_of_header={int(k): v for k, v in j["fifo_of_header"].items()},
        instructions=instructions)
