"""Bitstream emission/loading: lossless round-trip plus corruption
diagnostics."""

import struct

import pytest

from marionette.arch import ArchConfig
from marionette.bitstream import (BitstreamError, MAGIC, VERSION,
                                  emit_bitstream, load_bitstream,
                                  load_bitstream_full, network_ports)
from marionette.corpus import CORPUS, load_corpus_kernel
from marionette.bitstream import _program_to_json
from marionette.frontend import interpret, parse_kernel
from marionette.mapper import map_baseline, map_marionette

VECADD = """
kernel vecadd {
    array A[8]; array B[8]; array C[8];
    loop i in 0..8 { var a = A[i]; var b = B[i]; C[i] = a + b; }
}
"""


def _mapping(src=VECADD, strategy="marionette"):
    p = parse_kernel(src)
    arch = ArchConfig()
    if strategy == "marionette":
        return p, arch, map_marionette(p, arch)
    return p, arch, map_baseline(p, arch, strategy)


def test_round_trip_identity():
    p, arch, m = _mapping()
    data = emit_bitstream(m, arch, program=p)
    m2, arch2, p2 = load_bitstream_full(data)
    assert (m2.strategy, m2.rows, m2.cols) == (m.strategy, m.rows, m.cols)
    assert set(m2.blocks) == set(m.blocks)
    for bid in m.blocks:
        a, b = m.blocks[bid], m2.blocks[bid]
        assert (a.pe_set, a.ii, a.extension_factor, a.slot_table) == \
               (b.pe_set, b.ii, b.extension_factor, b.slot_table)
    assert set(m2.groups) == set(m.groups)
    for gid in m.groups:
        a, b = m.groups[gid], m2.groups[gid]
        assert (a.kind, a.header, a.ii, a.pe_base, a.pe_count,
                a.replicas, a.node_pe, a.node_off, a.bound) == \
               (b.kind, b.header, b.ii, b.pe_base, b.pe_count,
                b.replicas, b.node_pe, b.node_off, b.bound)
    assert _program_to_json(p2) == _program_to_json(p)


@pytest.mark.parametrize("kernel", CORPUS)
def test_round_trip_corpus(kernel):
    p = load_corpus_kernel(kernel)
    arch = ArchConfig()
    m = map_marionette(p, arch)
    data = emit_bitstream(m, arch, program=p)
    # emission is deterministic
    assert emit_bitstream(m, arch, program=p) == data
    m2, _, p2 = load_bitstream_full(data)
    assert _program_to_json(p2) == _program_to_json(p)
    data2 = emit_bitstream(m2, arch, program=p2)
    assert data2 == data


def test_bad_magic():
    with pytest.raises(BitstreamError, match="magic"):
        load_bitstream(b"NOPE" + b"\x00" * 64)


def test_version_mismatch():
    p, arch, m = _mapping()
    data = bytearray(emit_bitstream(m, arch, program=p))
    struct.pack_into("<H", data, 4, VERSION + 1)
    with pytest.raises(BitstreamError, match="version mismatch"):
        load_bitstream(bytes(data))


def test_truncation_detected():
    p, arch, m = _mapping()
    data = emit_bitstream(m, arch, program=p)
    for cut in (3, 8, len(data) // 2, len(data) - 1):
        with pytest.raises(BitstreamError):
            load_bitstream(data[:cut])


def test_header_magic_prefix():
    p, arch, m = _mapping()
    assert emit_bitstream(m, arch, program=p)[:4] == MAGIC


def test_network_ports_rounding():
    assert network_ports(ArchConfig(rows=1, cols=2), 0) == 4
    assert network_ports(ArchConfig(rows=4, cols=4), 2) == 32
    assert network_ports(ArchConfig(rows=2, cols=3), 1) == 8
