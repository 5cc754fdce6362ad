"""Array architecture parameters and the INI-style config file loader."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .cdfg import latency_class


class ArchError(Exception):
    pass


def _default_fu_latency() -> dict[str, int]:
    return {"mul": 2}


@dataclass
class ArchConfig:
    rows: int = 4
    cols: int = 4
    fu_latency: dict[str, int] = field(default_factory=_default_fu_latency)
    data_hop_latency: int = 1
    control_net_latency: int = 1
    ccu_roundtrip: int = 4
    dataflow_config_overhead: int = 1
    fifo_depth: int = 8
    scratchpad: int = 16384

    def __post_init__(self) -> None:
        for name in ("data_hop_latency", "control_net_latency",
                     "ccu_roundtrip", "dataflow_config_overhead"):
            if getattr(self, name) < 0:
                raise ArchError(f"{name} must be >= 0")
        if self.rows < 1 or self.cols < 1:
            raise ArchError("grid dimensions must be >= 1")
        if self.fifo_depth < 1:
            raise ArchError("fifo_depth must be >= 1")

    @property
    def n_pes(self) -> int:
        return self.rows * self.cols

    def op_latency(self, opcode: str) -> int:
        if latency_class(opcode) == "ctrl":
            return 0
        return self.fu_latency.get(opcode, 1)

    def pe_xy(self, pe: int) -> tuple[int, int]:
        return pe // self.cols, pe % self.cols

    def hop_distance(self, a: int, b: int) -> int:
        ra, ca = self.pe_xy(a)
        rb, cb = self.pe_xy(b)
        return abs(ra - rb) + abs(ca - cb)

    def with_overrides(self, **kw) -> "ArchConfig":
        return replace(self, **kw)


_INT_FIELDS = ("rows", "cols", "data_hop_latency", "control_net_latency",
               "ccu_roundtrip", "dataflow_config_overhead", "fifo_depth",
               "scratchpad")


def parse_arch(text: str) -> ArchConfig:
    """Parse ``key = value`` lines; unknown keys are rejected.

    Functional-unit latencies use dotted keys, e.g. ``fu_latency.mul = 3``.
    """
    kw: dict = {}
    fu = _default_fu_latency()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArchError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        try:
            ival = int(val)
        except ValueError:
            raise ArchError(f"line {lineno}: non-integer value {val!r}")
        if key.startswith("fu_latency."):
            fu[key.split(".", 1)[1]] = ival
        elif key in _INT_FIELDS:
            kw[key] = ival
        else:
            raise ArchError(f"line {lineno}: unknown key {key!r}")
    return ArchConfig(fu_latency=fu, **kw)


def load_arch(path: str) -> ArchConfig:
    with open(path, encoding="utf-8") as f:
        return parse_arch(f.read())
