"""Control-network routing, verified by payload propagation (the oracle)."""

import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marionette.network import (CsBenesNetwork, NetworkError, RouteRequest,
                                build, propagate, route, transfer_latency,
                                verify_delivery)


def _check(net, multicast):
    req = RouteRequest(multicast=multicast)
    settings_ = route(net, req)
    assert verify_delivery(net, req, settings_)


def test_bad_port_counts():
    with pytest.raises(NetworkError):
        build(3)
    with pytest.raises(NetworkError):
        build(0)
    with pytest.raises(NetworkError):
        build(2)   # below the minimum size
    with pytest.raises(NetworkError):
        build(12)  # not a power of two


def test_request_validation():
    net = build(8)
    with pytest.raises(NetworkError):
        route(net, RouteRequest({0: set()}))
    with pytest.raises(NetworkError):
        route(net, RouteRequest({9: {0}}))
    with pytest.raises(NetworkError):
        route(net, RouteRequest({0: {8}}))
    with pytest.raises(NetworkError):
        route(net, RouteRequest({0: {3}, 1: {3}}))       # output clash
    with pytest.raises(NetworkError):
        route(net, RouteRequest({i: {2 * i, 2 * i + 1}   # 10 copies > 8
                                 for i in range(5)}))


def test_identity_and_reversal_permutations():
    net = build(8)
    _check(net, {i: {i} for i in range(8)})
    _check(net, {i: {7 - i} for i in range(8)})


def test_all_permutations_size_4():
    net = build(4)
    for perm in itertools.permutations(range(4)):
        _check(net, {i: {perm[i]} for i in range(4)})


def test_single_source_full_broadcast():
    for n in (4, 8, 16):
        net = build(n)
        for src in range(n):
            _check(net, {src: set(range(n))})


def test_partial_multicasts_random():
    rng = random.Random(42)
    for n in (8, 16):
        net = build(n)
        for _ in range(200):
            srcs = rng.sample(range(n), rng.randrange(1, n // 2 + 1))
            outs = list(range(n))
            rng.shuffle(outs)
            multicast = {}
            pos = 0
            for s in srcs:
                k = rng.randrange(1, 4)
                take = outs[pos:pos + k]
                if not take:
                    break
                multicast[s] = set(take)
                pos += len(take)
            _check(net, multicast)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 16 - 1))
def test_random_subset_permutation_property(mask):
    net = build(16)
    srcs = [i for i in range(16) if (mask >> i) & 1]
    if not srcs:
        return
    rng = random.Random(mask)
    dsts = rng.sample(range(16), len(srcs))
    _check(net, {s: {d} for s, d in zip(srcs, dsts)})


def test_propagate_carries_payload_identity():
    net = build(8)
    req = RouteRequest({2: {0, 5, 6}, 4: {1}})
    s = route(net, req)
    delivered = propagate(net, s, {2: "x", 4: "y"})
    assert delivered[0] == delivered[5] == delivered[6] == "x"
    assert delivered[1] == "y"


def test_transfer_latency_reads_arch():
    class A:
        control_net_latency = 3
    assert transfer_latency(build(8), A()) == 3


def test_verify_delivery_detects_misrouting():
    net = build(4)
    req = RouteRequest({0: {3}})
    s = route(net, req)
    # sabotage: claim a different destination
    bad = RouteRequest({0: {2}})
    assert not verify_delivery(net, bad, s)
