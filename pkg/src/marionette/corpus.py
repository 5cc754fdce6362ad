"""Benchmark corpus: bundled kernels plus deterministic input generation.

Inputs are derived from a seed (env var ``MRNT_SEED``, default 0) so that
repeated runs are byte-identical.  Kernels with structural input
requirements get shaped data:

* merge: per segment pair, two sorted 8-element runs, each terminated by
  an INT32_MAX sentinel so the two-pointer walk never overruns;
* spmv: CSR row pointers for a 64x64 matrix with 410 stored values
  (about 10% density);
* crc_like: byte-valued messages.
"""

from __future__ import annotations

import os
import random
from importlib import resources

from .cdfg import Program
from .frontend import MemoryImage, load_kernel

SENTINEL = 2 ** 31 - 1

CORPUS = ("merge", "gemm", "spmv", "conv1d", "crc_like", "viterbi_like")


def kernel_path(name: str) -> str:
    p = resources.files("marionette") / "kernels" / f"{name}.mk"
    return str(p)


def load_corpus_kernel(name: str) -> Program:
    return load_kernel(kernel_path(name))


def default_seed() -> int:
    return int(os.environ.get("MRNT_SEED", "0"))


def _merge_mem(rng: random.Random) -> MemoryImage:
    mem = MemoryImage({"A": [], "B": [], "OUT": [0] * 256})
    for _ in range(16):
        mem.arrays["A"] += sorted(rng.randrange(0, 10000)
                                  for _ in range(8)) + [SENTINEL]
        mem.arrays["B"] += sorted(rng.randrange(0, 10000)
                                  for _ in range(8)) + [SENTINEL]
    return mem


def _spmv_mem(rng: random.Random) -> MemoryImage:
    nnz = 410
    cuts = sorted(rng.randrange(0, nnz + 1) for _ in range(63))
    return MemoryImage({
        "RP": [0] + cuts + [nnz],
        "CI": [rng.randrange(0, 64) for _ in range(nnz)],
        "V": [rng.randrange(-9, 10) for _ in range(nnz)],
        "X": [rng.randrange(-9, 10) for _ in range(64)],
        "Y": [0] * 64,
    })


def generate_memory(program: Program, seed: int | None = None) -> MemoryImage:
    """Deterministic input image for a kernel; shaped per corpus kernel,
    uniform small integers otherwise."""
    rng = random.Random(default_seed() if seed is None else seed)
    if program.name == "merge":
        return _merge_mem(rng)
    if program.name == "spmv":
        return _spmv_mem(rng)
    mem = MemoryImage()
    for name, length in program.memories:
        if program.name == "crc_like" and name == "MSG":
            mem.arrays[name] = [rng.randrange(0, 256) for _ in range(length)]
        elif name in ("C", "OUT", "Y"):
            mem.arrays[name] = [0] * length
        else:
            mem.arrays[name] = [rng.randrange(-9, 10) for _ in range(length)]
    return mem
