"""Parser, pretty-printer, memory images, and the reference interpreter,
checked against independent pure-Python oracles."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marionette.frontend import (ExecRecord, InterpError, MemoryImage,
                                 ParseError, i32, interpret, parse_kernel,
                                 print_kernel)

VECADD = """
kernel vecadd {
    array A[8]; array B[8]; array C[8];
    loop i in 0..8 { var a = A[i]; var b = B[i]; C[i] = a + b; }
}
"""


def _mem(**arrays):
    return MemoryImage({k: list(v) for k, v in arrays.items()})


# --------------------------------------------------------------- parsing

def test_parse_errors():
    with pytest.raises(ParseError):
        parse_kernel("kernel x {")
    with pytest.raises(ParseError):
        parse_kernel("kernel x { frob; }")
    with pytest.raises(ParseError):
        parse_kernel("kernel x { array A[4]; var v = A[0] ^ 1; }")
    # loops are not allowed inside if arms
    with pytest.raises(ParseError):
        parse_kernel("""
        kernel x {
            array A[4];
            loop i in 0..4 {
                var a = A[i];
                if (a < 0) { loop j in 0..2 { A[j] = 0; } }
                else { A[i] = a; }
            }
        }
        """)


def test_print_kernel_round_trip():
    p1 = parse_kernel(VECADD)
    text = print_kernel(p1)
    p2 = parse_kernel(text)
    assert print_kernel(p2) == text
    # and the reprinted program behaves identically
    mem = _mem(A=range(8), B=range(8, 16), C=[0] * 8)
    m1, _ = interpret(p1, mem)
    m2, _ = interpret(p2, mem)
    assert m1.arrays == m2.arrays


def test_memory_image_parse_dump_round_trip():
    mem = _mem(A=[1, -2, 3], B=[])
    again = MemoryImage.parse(mem.dump())
    assert again.arrays == mem.arrays
    parsed = MemoryImage.parse("# comment\nA: 1,2\n\nB:\n")
    assert parsed.arrays == {"A": [1, 2], "B": []}


def test_i32_wraparound():
    assert i32(2 ** 31) == -2 ** 31
    assert i32(-2 ** 31 - 1) == 2 ** 31 - 1
    assert i32(0xFFFFFFFF) == -1
    assert i32(123) == 123


# ----------------------------------------------------------- interpreter

def test_vecadd_against_oracle():
    p = parse_kernel(VECADD)
    rng = random.Random(7)
    a = [rng.randrange(-100, 100) for _ in range(8)]
    b = [rng.randrange(-100, 100) for _ in range(8)]
    out, counts = interpret(p, _mem(A=a, B=b, C=[0] * 8))
    assert out.arrays["C"] == [i32(x + y) for x, y in zip(a, b)]
    # loop body executes exactly 8 times
    body = [bid for bid, c in counts.items() if c == 8]
    assert body


def test_interpreter_wraps_at_32_bits():
    p = parse_kernel("""
    kernel w {
        array A[1]; array C[1];
        var big = A[0];
        C[0] = big * big;
    }
    """)
    out, _ = interpret(p, _mem(A=[123456789], C=[0]))
    assert out.arrays["C"] == [i32(123456789 * 123456789)]


def test_branch_oracle_and_record():
    p = parse_kernel("""
    kernel clamp {
        array A[6]; array C[6];
        loop i in 0..6 {
            var a = A[i];
            var t = 0;
            if (a < 0) { t = 0 - a; } else { t = a; }
            C[i] = t;
        }
    }
    """)
    a = [3, -1, 0, -7, 5, -2]
    rec = ExecRecord()
    out, _ = interpret(p, _mem(A=a, C=[0] * 6), record=rec)
    assert out.arrays["C"] == [abs(x) for x in a]
    (outcomes,) = rec.branches.values()
    assert outcomes == [x < 0 for x in a]
    (trips,) = rec.rounds.values()
    assert trips == [6]


def test_data_dependent_bounds_record():
    p = parse_kernel("""
    kernel seg {
        array RP[4]; array OUT[9];
        loop r in 0..3 {
            var rs = RP[r];
            var re = RP[r + 1];
            loop n in rs..re { OUT[n] = r; }
        }
    }
    """)
    rp = [0, 2, 2, 9]
    rec = ExecRecord()
    out, _ = interpret(p, _mem(RP=rp, OUT=[-1] * 9), record=rec)
    expect = [0, 0] + [2] * 7
    assert out.arrays["OUT"] == expect
    inner_trips = [t for trips in rec.rounds.values()
                   if len(trips) == 3 for t in trips]
    assert inner_trips == [2, 0, 7]


def test_interp_error_cases():
    p = parse_kernel(VECADD)
    with pytest.raises(InterpError):
        interpret(p, _mem(A=[0] * 8, B=[0] * 8))          # missing C
    with pytest.raises(InterpError):
        interpret(p, _mem(A=[0] * 4, B=[0] * 8, C=[0] * 8))  # wrong length
    p2 = parse_kernel("""
    kernel oob { array A[2]; loop i in 0..4 { A[i] = i; } }
    """)
    with pytest.raises(InterpError):
        interpret(p2, _mem(A=[0, 0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-2 ** 31, 2 ** 31 - 1), min_size=8, max_size=8),
       st.lists(st.integers(-2 ** 31, 2 ** 31 - 1), min_size=8, max_size=8))
def test_vecadd_property(a, b):
    p = parse_kernel(VECADD)
    out, _ = interpret(p, _mem(A=a, B=b, C=[0] * 8))
    assert out.arrays["C"] == [i32(x + y) for x, y in zip(a, b)]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6), st.integers(0, 6))
def test_gemm_oracle_property(n, m, k):
    n, m, k = max(n, 1), max(m, 1), max(k, 1)
    src = f"""
    kernel g {{
        array A[{n * k}]; array B[{k * m}]; array C[{n * m}];
        loop i in 0..{n} {{
            loop j in 0..{m} {{
                var acc = 0;
                loop t in 0..{k} {{
                    acc = acc + A[i * {k} + t] * B[t * {m} + j];
                }}
                C[i * {m} + j] = acc;
            }}
        }}
    }}
    """
    p = parse_kernel(src)
    rng = random.Random(n * 100 + m * 10 + k)
    a = [rng.randrange(-9, 10) for _ in range(n * k)]
    b = [rng.randrange(-9, 10) for _ in range(k * m)]
    out, _ = interpret(p, _mem(A=a, B=b, C=[0] * (n * m)))
    ref = [sum(a[i * k + t] * b[t * m + j] for t in range(k))
           for i in range(n) for j in range(m)]
    assert out.arrays["C"] == [i32(v) for v in ref]
