"""Consecutive-Spreading + Benes control network model.

The network is three cascaded multistage sections built from 2x2 elements:

1. concentrator (log2 N butterfly columns, LSB-first): moves the payloads
   of the active inputs onto consecutive top lines, preserving order;
2. broadcast section (log2 N butterfly columns, MSB-first, elements may
   broadcast to both outputs): spreads each concentrated payload into the
   requested number of copies on consecutive intermediate lines;
3. Benes permutation section (2*log2 N - 1 columns): delivers each copy to
   its final output port, routed with the classical looping algorithm.

Routing is pure; correctness is checked by propagating payloads through
the configured switches (`propagate`), which the tests use as the oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

STRAIGHT = "straight"
CROSS = "cross"
UPPER_BC = "upper-broadcast"
LOWER_BC = "lower-broadcast"
BOTH_BC = "broadcast"


class NetworkError(Exception):
    pass


class RoutingDefect(NetworkError):
    """Internal routing failure; the network is rearrangeable non-blocking,
    so this indicates a bug rather than a bad request."""


def _log2(n: int) -> int:
    m = n.bit_length() - 1
    if n <= 0 or (1 << m) != n:
        raise NetworkError(f"port count {n} is not a power of two")
    return m


def _pair(line: int, bit: int) -> tuple[int, int]:
    """Element index and side for a line at a column controlling ``bit``."""
    side = (line >> bit) & 1
    low = line & ((1 << bit) - 1)
    high = (line >> (bit + 1)) << bit
    return high | low, side


def _line(elem: int, bit: int, side: int) -> int:
    low = elem & ((1 << bit) - 1)
    high = (elem >> bit) << (bit + 1)
    return high | low | (side << bit)


@dataclass
class RouteRequest:
    multicast: dict[int, set[int]]   # input port -> output ports

    def validate(self, n_ports: int) -> None:
        seen: set[int] = set()
        total = 0
        for src, outs in self.multicast.items():
            if not outs:
                raise NetworkError(f"input {src}: empty output set")
            if not 0 <= src < n_ports:
                raise NetworkError(f"input port {src} out of range")
            for o in outs:
                if not 0 <= o < n_ports:
                    raise NetworkError(f"output port {o} out of range")
                if o in seen:
                    raise NetworkError(f"output {o} requested twice")
                seen.add(o)
            total += len(outs)
        if total > n_ports:
            raise NetworkError(
                f"oversubscribed: {total} outputs > {n_ports} ports")


@dataclass
class SwitchSettings:
    conc: list[dict[int, str]]       # per column: element -> state
    bcast: list[dict[int, str]]
    benes: dict


@dataclass
class CsBenesNetwork:
    port_count: int
    cs_stages: list[list[str]] = field(default_factory=list)
    benes_stages: list[list[str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        m = _log2(self.port_count)
        if self.port_count < 4:
            raise NetworkError("port count must be >= 4")
        half = self.port_count // 2
        if not self.cs_stages:
            self.cs_stages = [[STRAIGHT] * half for _ in range(2 * m)]
        if not self.benes_stages:
            self.benes_stages = [[STRAIGHT] * half
                                 for _ in range(2 * m - 1)]


def build(n_ports: int) -> CsBenesNetwork:
    return CsBenesNetwork(port_count=n_ports)


def transfer_latency(net: CsBenesNetwork, arch) -> int:
    return arch.control_net_latency


# ---------------------------------------------------------------------------
# butterfly sections

def _route_butterfly(n: int, bits: list[int],
                     payloads: dict[int, int]) -> list[dict[int, str]]:
    """Self-route payloads (line -> destination line) through butterfly
    columns controlling ``bits`` in order.  Conflicts raise RoutingDefect.
    """
    columns: list[dict[int, str]] = []
    cur = dict(payloads)
    for bit in bits:
        setting: dict[int, str] = {}
        nxt: dict[int, int] = {}
        for line, dest in cur.items():
            elem, side = _pair(line, bit)
            want = (dest >> bit) & 1
            state = STRAIGHT if want == side else CROSS
            if setting.setdefault(elem, state) != state:
                raise RoutingDefect(
                    f"butterfly conflict at bit {bit} element {elem}")
            out = _line(elem, bit, want)
            if out in nxt:
                raise RoutingDefect(f"line collision at bit {bit}")
            nxt[out] = dest
        columns.append(setting)
        cur = nxt
    return columns


def _apply_butterfly(n: int, bits: list[int],
                     columns: list[dict[int, str]],
                     payloads: dict[int, object]) -> dict[int, object]:
    cur = dict(payloads)
    for bit, setting in zip(bits, columns):
        nxt: dict[int, object] = {}
        for line, pay in cur.items():
            elem, side = _pair(line, bit)
            state = setting.get(elem, STRAIGHT)
            if state == STRAIGHT:
                outs = [side]
            elif state == CROSS:
                outs = [1 - side]
            elif state == BOTH_BC:
                outs = [0, 1]
            elif state == UPPER_BC:
                outs = [0, 1] if side == 0 else []
            else:  # LOWER_BC
                outs = [0, 1] if side == 1 else []
            for o in outs:
                out = _line(elem, bit, o)
                if out in nxt:
                    raise RoutingDefect(f"collision applying bit {bit}")
                nxt[out] = pay
        cur = nxt
    return cur


def _route_broadcast(n: int, bits: list[int],
                     intervals: dict[int, tuple[int, int]]
                     ) -> list[dict[int, str]]:
    """Route (line -> destination interval [lo, hi]) with copy-splitting."""
    columns: list[dict[int, str]] = []
    cur = dict(intervals)
    for bit in bits:
        setting: dict[int, str] = {}
        nxt: dict[int, tuple[int, int]] = {}

        def emit(elem: int, side: int, iv: tuple[int, int]) -> None:
            out = _line(elem, bit, side)
            if out in nxt:
                raise RoutingDefect(f"broadcast collision at bit {bit}")
            nxt[out] = iv

        for line, (lo, hi) in cur.items():
            elem, side = _pair(line, bit)
            lo_bit = (lo >> bit) & 1
            hi_bit = (hi >> bit) & 1
            if lo_bit == hi_bit:
                state = STRAIGHT if lo_bit == side else CROSS
                if setting.setdefault(elem, state) != state:
                    raise RoutingDefect(
                        f"broadcast conflict at bit {bit} element {elem}")
                emit(elem, lo_bit, (lo, hi))
            else:
                # interval spans both halves: split at the bit boundary
                if setting.setdefault(elem, BOTH_BC) != BOTH_BC:
                    raise RoutingDefect(
                        f"broadcast conflict at bit {bit} element {elem}")
                mid = (hi >> bit) << bit   # first address with bit set
                emit(elem, 0, (lo, mid - 1))
                emit(elem, 1, (mid, hi))
        columns.append(setting)
        cur = nxt
    return columns


# ---------------------------------------------------------------------------
# Benes permutation section (recursive, looping algorithm)

def _route_benes(perm: list[int]) -> dict:
    """Full permutation: perm[i] = output for input i."""
    n = len(perm)
    if n == 2:
        return {"n": 2, "sw": STRAIGHT if perm[0] == 0 else CROSS}
    half = n // 2
    inv = [0] * n
    for i, o in enumerate(perm):
        inv[o] = i
    sub = [-1] * n     # subnet of each input terminal: 0 upper, 1 lower
    for start in range(n):
        if sub[start] != -1:
            continue
        sub[start] = 0
        i = start
        while True:
            # the output-switch partner of perm[i] must use the other net
            i2 = inv[perm[i] ^ 1]
            if sub[i2] != -1:
                break
            sub[i2] = 1 - sub[i]
            # the input-switch partner of i2 must use the other net again
            i3 = i2 ^ 1
            if sub[i3] != -1:
                break
            sub[i3] = 1 - sub[i2]
            i = i3
    in_sw = []
    up_perm = [0] * half
    lo_perm = [0] * half
    out_sw = [None] * half
    for k in range(half):
        a, b = 2 * k, 2 * k + 1
        if sub[a] == 0:
            in_sw.append(STRAIGHT)
            up_in, lo_in = a, b
        else:
            in_sw.append(CROSS)
            up_in, lo_in = b, a
        for term, target in ((up_in, up_perm), (lo_in, lo_perm)):
            o = perm[term]
            target[k] = o // 2
        # output switch state: which subnet feeds the even output
        o_up = perm[up_in]
        j = o_up // 2
        out_sw[j] = STRAIGHT if o_up % 2 == 0 else CROSS
    return {"n": n, "in": in_sw, "out": out_sw,
            "up": _route_benes(up_perm), "lo": _route_benes(lo_perm)}


def _apply_benes(settings: dict, inputs: list) -> list:
    n = settings["n"]
    if n == 2:
        a, b = inputs
        return [a, b] if settings["sw"] == STRAIGHT else [b, a]
    half = n // 2
    up_in = [None] * half
    lo_in = [None] * half
    for k in range(half):
        a, b = inputs[2 * k], inputs[2 * k + 1]
        if settings["in"][k] == CROSS:
            a, b = b, a
        up_in[k], lo_in[k] = a, b
    up_out = _apply_benes(settings["up"], up_in)
    lo_out = _apply_benes(settings["lo"], lo_in)
    out = [None] * n
    for j in range(half):
        a, b = up_out[j], lo_out[j]
        if settings["out"][j] == CROSS:
            a, b = b, a
        out[2 * j], out[2 * j + 1] = a, b
    return out


# ---------------------------------------------------------------------------
# full routing

def route(net: CsBenesNetwork, req: RouteRequest) -> SwitchSettings:
    n = net.port_count
    m = _log2(n)
    req.validate(n)
    actives = sorted(req.multicast)
    counts = [len(req.multicast[i]) for i in actives]
    starts = []
    acc = 0
    for c in counts:
        starts.append(acc)
        acc += c

    # 1. concentrate active inputs onto lines 0..A-1 (LSB-first butterfly)
    conc_bits = list(range(m))
    conc = _route_butterfly(n, conc_bits,
                            {src: rank for rank, src in enumerate(actives)})

    # 2. spread rank r into its copy interval (MSB-first broadcast butterfly)
    bc_bits = list(range(m - 1, -1, -1))
    intervals = {rank: (starts[rank], starts[rank] + counts[rank] - 1)
                 for rank in range(len(actives))}
    bcast = _route_broadcast(n, bc_bits, intervals)

    # 3. Benes: copy line -> requested output port
    perm = [-1] * n
    used_out: set[int] = set()
    for rank, src in enumerate(actives):
        outs = sorted(req.multicast[src])
        for j, o in enumerate(outs):
            perm[starts[rank] + j] = o
            used_out.add(o)
    spare = iter(o for o in range(n) if o not in used_out)
    for i in range(n):
        if perm[i] == -1:
            perm[i] = next(spare)
    benes = _route_benes(perm)
    return SwitchSettings(conc=conc, bcast=bcast, benes=benes)


def propagate(net: CsBenesNetwork, settings: SwitchSettings,
              payloads: dict[int, object]) -> dict[int, object]:
    """Push payloads through the configured switches; returns output-port
    -> payload.  This is the delivery oracle."""
    n = net.port_count
    m = _log2(n)
    cur = _apply_butterfly(n, list(range(m)), settings.conc, payloads)
    cur = _apply_butterfly(n, list(range(m - 1, -1, -1)), settings.bcast,
                           cur)
    line_in = [cur.get(i) for i in range(n)]
    line_out = _apply_benes(settings.benes, line_in)
    return {i: p for i, p in enumerate(line_out) if p is not None}


def verify_delivery(net: CsBenesNetwork, req: RouteRequest,
                    settings: SwitchSettings) -> bool:
    delivered = propagate(net, settings,
                          {src: src for src in req.multicast})
    want: dict[int, int] = {}
    for src, outs in req.multicast.items():
        for o in outs:
            want[o] = src
    got = {o: p for o, p in delivered.items() if o in want}
    return got == want
