"""Experiment driver: compile kernels, run bitstreams, compare models,
and sweep architecture parameters.

Exit codes: 0 success, 1 domain error (parse, mapping, simulation,
oracle mismatch), 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .arch import ArchConfig, ArchError, load_arch
from .bitstream import BitstreamError, emit_bitstream, load_bitstream_full
from .corpus import CORPUS, generate_memory, kernel_path
from .frontend import (InterpError, MemoryImage, ParseError, interpret,
                       load_kernel)
from .mapper import (STRATEGIES, MappingError, map_baseline, map_marionette,
                     pe_waste)
from .metrics import make_row, rows_to_csv, speedup_table, write_csv
from .simulator import SimError, simulate

MODEL_OF_STRATEGY = {
    "marionette": "marionette",
    "predication": "von-neumann",
    "switch-config": "von-neumann",
    "dataflow": "dataflow",
}


class CliError(Exception):
    pass


def _load_arch(path: str | None) -> ArchConfig:
    if path is None:
        return ArchConfig()
    return load_arch(path)


def _resolve_kernel(name_or_path: str) -> str:
    if os.path.exists(name_or_path):
        return name_or_path
    candidate = kernel_path(name_or_path)
    if os.path.exists(candidate):
        return candidate
    raise CliError(f"kernel not found: {name_or_path}")


def _map(program, arch, strategy, agile=True):
    if strategy == "marionette":
        return map_marionette(program, arch, agile=agile)
    return map_baseline(program, arch, strategy)


def _summary(mapping) -> str:
    iis = sorted({g.ii for g in mapping.groups.values()
                  if g.kind == "loop"}) or [1]
    ii_txt = str(iis[0]) if len(iis) == 1 else f"{iis[0]}-{iis[-1]}"
    pes: set[int] = set()
    waste = 0
    for bm in mapping.blocks.values():
        pes |= bm.pe_set
        waste += pe_waste(bm) if bm.slot_table else 0
    return f"II={ii_txt}, PEs={len(pes)}, waste={waste}"


# ---------------------------------------------------------------------------

def cmd_compile(args) -> int:
    path = _resolve_kernel(args.kernel)
    program = load_kernel(path)
    arch = _load_arch(args.arch)
    mapping = _map(program, arch, args.strategy, agile=not args.no_agile)
    data = emit_bitstream(mapping, arch, program=program)
    out = args.out or os.path.splitext(os.path.basename(path))[0] + ".bs"
    with open(out, "wb") as fh:
        fh.write(data)
    print(f"{program.name}: {_summary(mapping)}")
    print(f"wrote {out} ({len(data)} bytes)")
    return 0


def cmd_run(args) -> int:
    with open(args.bitstream, "rb") as fh:
        data = fh.read()
    mapping, arch_emb, program = load_bitstream_full(data)
    if program is None:
        raise CliError("bitstream carries no program payload")
    arch = _load_arch(args.arch) if args.arch else arch_emb
    if args.mem:
        with open(args.mem, encoding="utf-8") as fh:
            mem = MemoryImage.parse(fh.read())
    else:
        mem = generate_memory(program)
    final_mem, trace, stats = simulate(
        data, arch, mem, args.model,
        proactive=not args.no_proactive,
        control_net=not args.no_control_net,
        agile=not args.no_agile)
    text = stats.to_text()
    if args.check_oracle:
        ref, _ = interpret(program, mem)
        divergence = None
        for name in ref.arrays:
            for i, (a, b) in enumerate(zip(ref.arrays[name],
                                           final_mem.arrays[name])):
                if a != b:
                    divergence = f"{name}[{i}]: simulator {b} != oracle {a}"
                    break
            if divergence:
                break
        if divergence:
            sys.stderr.write(f"oracle mismatch: {divergence}\n")
            return 1
        text += "check=ok\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(trace.dump())
    return 0


_COMBOS = [("marionette", "marionette"),
           ("von-neumann", "predication"),
           ("von-neumann", "switch-config"),
           ("dataflow", "dataflow")]


def cmd_compare(args) -> int:
    arch = _load_arch(args.arch)
    kernels = args.kernels or list(CORPUS)
    combos = _COMBOS
    if args.strategy:
        combos = [(MODEL_OF_STRATEGY[args.strategy], args.strategy)]
    rows = []
    failures = []
    for k in kernels:
        try:
            program = load_kernel(_resolve_kernel(k))
            mem = generate_memory(program)
        except (CliError, ParseError, OSError) as exc:
            failures.append(f"{k}: {exc}")
            continue
        for model, strategy in combos:
            try:
                agile = not (args.no_agile and strategy == "marionette")
                mapping = _map(program, arch, strategy, agile=agile)
                data = emit_bitstream(mapping, arch, program=program)
                _, trace, stats = simulate(
                    data, arch, mem, model,
                    proactive=not args.no_proactive,
                    control_net=not args.no_control_net,
                    agile=agile)
                rows.append(make_row(program.name, model, trace, stats,
                                     mapping))
            except (MappingError, SimError, BitstreamError,
                    InterpError) as exc:
                failures.append(f"{k}/{strategy}: {exc}")
    csv_text = rows_to_csv(rows)
    if args.out:
        write_csv(rows, args.out)
    sys.stdout.write(csv_text)
    for base in ("predication", "switch-config", "dataflow"):
        pairs, geo, warns = speedup_table(rows, base, "marionette")
        if geo is not None:
            print(f"geomean marionette vs {base}: {geo:.4f}")
    for f in failures:
        sys.stderr.write(f"error: {f}\n")
    return 1 if failures and not rows else 0


def cmd_sweep(args) -> int:
    fields = {f.name: f for f in dataclasses.fields(ArchConfig)
              if f.name != "fu_latency"}
    if args.parameter not in fields:
        sys.stderr.write(f"unknown ArchConfig parameter "
                         f"{args.parameter!r}\n")
        return 2
    try:
        values = [int(v) for v in args.values.split(",") if v]
    except ValueError:
        sys.stderr.write("values must be comma-separated integers\n")
        return 2
    base_arch = _load_arch(args.arch)
    program = load_kernel(_resolve_kernel(args.kernel))
    mem = generate_memory(program)
    model = args.model or MODEL_OF_STRATEGY[args.strategy]
    rows = []
    cycles_seen = []
    for v in values:
        arch = dataclasses.replace(base_arch, **{args.parameter: v})
        mapping = _map(program, arch, args.strategy)
        data = emit_bitstream(mapping, arch, program=program)
        _, trace, stats = simulate(data, arch, mem, model)
        rows.append(make_row(f"{program.name}[{args.parameter}={v}]",
                             model, trace, stats, mapping))
        cycles_seen.append((v, stats.cycles))
    csv_text = rows_to_csv(rows)
    if args.out:
        write_csv(rows, args.out)
    sys.stdout.write(csv_text)
    if args.parameter == "ccu_roundtrip" and \
            args.strategy == "switch-config":
        ordered = sorted(cycles_seen)
        for (v0, c0), (v1, c1) in zip(ordered, ordered[1:]):
            if c1 < c0:
                print(f"warning: cycles decreased from {c0} to {c1} as "
                      f"ccu_roundtrip grew {v0}->{v1}; expected "
                      f"non-decreasing")
    return 0


# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mrnt",
        description="Compiler and cycle-level simulator for a spatial PE "
                    "array with a decoupled control plane")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, model=False):
        p.add_argument("--arch", help="architecture INI file")
        p.add_argument("--no-proactive", action="store_true")
        p.add_argument("--no-control-net", action="store_true")
        p.add_argument("--no-agile", action="store_true")
        p.add_argument("--out", help="output file path")
        if model:
            p.add_argument("--model", choices=["marionette", "von-neumann",
                                               "dataflow"],
                           default="marionette")

    c = sub.add_parser("compile", help="compile a kernel to a bitstream")
    c.add_argument("kernel")
    c.add_argument("--strategy", choices=list(STRATEGIES),
                   default="marionette")
    common(c)

    r = sub.add_parser("run", help="simulate a bitstream")
    r.add_argument("bitstream")
    r.add_argument("--mem", help="memory image file")
    r.add_argument("--trace", help="write the full trace to this path")
    r.add_argument("--check-oracle", action="store_true")
    common(r, model=True)

    cp = sub.add_parser("compare", help="run kernels across models")
    cp.add_argument("kernels", nargs="*")
    cp.add_argument("--strategy", choices=list(STRATEGIES))
    common(cp)

    sw = sub.add_parser("sweep", help="sweep one ArchConfig parameter")
    sw.add_argument("parameter")
    sw.add_argument("values", help="comma-separated integers")
    sw.add_argument("--kernel", required=True)
    sw.add_argument("--strategy", choices=list(STRATEGIES),
                    default="marionette")
    common(sw, model=True)
    sw.set_defaults(model=None)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    handler = {"compile": cmd_compile, "run": cmd_run,
               "compare": cmd_compare, "sweep": cmd_sweep}[args.cmd]
    try:
        return handler(args)
    except (CliError, ParseError, MappingError, SimError, BitstreamError,
            InterpError, ArchError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
