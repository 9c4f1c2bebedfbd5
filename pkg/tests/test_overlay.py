import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adsim.overlay import (
    RING, EdgeTopology, EmptyRingError, NodeRecord, Overlay, OverlayError, digit, hash128,
    hop_bound, node_id_for, ring_distance, shared_prefix_len,
)
from adsim.simkernel import Rng


def _records(n, seed=0):
    return EdgeTopology.synthetic(n, seed=seed).nodes


def grown(n, seed=0, **kw):
    """Overlay grown one join at a time."""
    topo = EdgeTopology.synthetic(n, seed=seed)
    ov = Overlay(topo, **kw)
    for rec in topo.nodes:
        ov.join(rec.name)
    return ov


def test_ids_are_md5_of_the_name():
    import hashlib

    assert node_id_for("edge-7") == int.from_bytes(hashlib.md5(b"edge-7").digest(), "big")
    assert hash128(b"") < RING


def test_digit_and_prefix_helpers():
    x = 0xABC << 116
    assert [digit(x, i) for i in range(3)] == [0xA, 0xB, 0xC]
    assert shared_prefix_len(x, x) == 32
    assert shared_prefix_len(x, x ^ (1 << 127)) == 0
    assert ring_distance(1, RING - 1) == 2


def test_hop_bound_values():
    assert hop_bound(10_000, 4) == 6
    assert hop_bound(16, 4) == 3
    assert hop_bound(1) == 0


def test_first_join_is_alone():
    topo = EdgeTopology(_records(1))
    ov = Overlay(topo)
    nid = ov.join(topo.nodes[0].name)
    assert ov.leaf_members(nid) == []
    assert np.all(ov.table[0] == -1)
    assert ov.route(nid, nid ^ 1) == [nid]


def test_second_join_sees_the_other():
    topo = EdgeTopology(_records(2))
    ov = Overlay(topo)
    a = ov.join(topo.nodes[0].name)
    b = ov.join(topo.nodes[1].name)
    assert ov.leaf_members(a) == [b]
    assert ov.leaf_members(b) == [a]


def test_duplicate_join_rejected():
    topo = EdgeTopology(_records(3))
    ov = Overlay(topo)
    ov.join(topo.nodes[0].name)
    with pytest.raises(OverlayError):
        ov.join(topo.nodes[0].name)


def test_incremental_joins_match_bulk_build():
    topo = EdgeTopology.synthetic(400, seed=8)
    bulk = Overlay.build(topo)
    inc = grown(400, seed=8)
    assert np.array_equal(bulk.table[:400], inc.table[:400])
    assert bulk.leaf == inc.leaf


def test_prefix_invariant_after_1000_joins():
    ov = grown(1000, seed=2)
    assert ov.check_prefix_invariant() > 0


def test_table_entries_are_proximity_best():
    # brute force over every node carrying the cell's prefix
    ov = Overlay.build(EdgeTopology.synthetic(300, seed=4))
    n = len(ov.ids)
    rng = Rng(1)
    for _ in range(200):
        i = rng.integers(0, n)
        r = rng.integers(0, 3)
        c = rng.integers(0, 16)
        if c == ov.digits[i, r]:
            continue
        cell = [j for j in range(n)
                if j != i and all(ov.digits[j, :r] == ov.digits[i, :r]) and ov.digits[j, r] == c]
        got = int(ov.table[i, r, c])
        if not cell:
            assert got == -1
            continue
        best = min(cell, key=lambda j: (ov._d2(i, j), -ov.capacity[j], ov.ids[j]))
        assert got == best


def test_leaf_sets_are_physically_nearest():
    ov = Overlay.build(EdgeTopology.synthetic(200, seed=5))
    for nid in ov.live_ids()[:40]:
        i = ov.index_of[nid]
        others = sorted((j for j in range(200) if j != i), key=lambda j: ov._prox_key(i, j))
        assert ov.leaf[i] == others[:24]
        assert ov.leaf_set(nid).distances_km == sorted(ov.leaf_set(nid).distances_km)


def test_self_route_is_zero_hops(overlay_1k):
    x = overlay_1k.live_ids()[17]
    assert overlay_1k.route(x, x) == [x]


def test_two_node_ring_routes_in_at_most_one_hop():
    ov = Overlay.build(EdgeTopology(_records(2)))
    a, b = ov.live_ids()
    for key in (a, b, 0, RING - 1, (a + b) // 2):
        assert len(ov.route(a, key)) - 1 <= 1


@settings(max_examples=200)
@given(st.integers(0, 999), st.integers(0, RING - 1))
def test_route_ends_at_closest_node_within_hop_bound(overlay_1k, src, key):
    ov = overlay_1k
    path = ov.route(ov.live_ids()[src], key)
    assert path[-1] == ov.closest_live(key)
    assert len(path) - 1 <= hop_bound(len(ov))


@settings(max_examples=200)
@given(st.integers(0, 999), st.integers(0, RING - 1))
def test_route_makes_prefix_progress(overlay_1k, src, key):
    ov = overlay_1k
    path = ov.route(ov.live_ids()[src], key)
    for a, b in zip(path, path[1:]):
        la, lb = shared_prefix_len(a, key), shared_prefix_len(b, key)
        if ov._in_ring_range(a, key):
            # terminal hops inside the ring window only need numeric progress
            assert ring_distance(b, key) < ring_distance(a, key)
        else:
            assert lb > la


def test_closest_node_matches_brute_force_small_ring():
    ov = Overlay.build(EdgeTopology.synthetic(512, seed=6))
    ids = ov.live_ids()
    rng = Rng(2)
    for _ in range(300):
        key = int.from_bytes(rng.gen.bytes(16), "big")
        brute = min(ids, key=lambda x: (ring_distance(x, key), x))
        assert ov.route(ids[rng.integers(0, 512)], key)[-1] == brute


def test_candidate_with_equal_rtt_prefers_capacity():
    # two candidates at identical distance from the router, capacities 8 vs 4
    base = [NodeRecord("router", 0, 1.0, 0.0, 0.0),
            NodeRecord("big", 0, 8.0, 10.0, 0.0),
            NodeRecord("small", 0, 4.0, -10.0, 0.0)]
    ov = Overlay.build(EdgeTopology(base))
    r, big, small = (node_id_for(n) for n in ("router", "big", "small"))
    rng = Rng(0)
    for _ in range(1000):
        key = int.from_bytes(rng.gen.bytes(16), "big")
        cands = ov.next_hop_candidates(r, key)
        if len(cands) == 2:
            break
    else:
        pytest.fail("no key with both candidates found")
    assert ov.rtt_ms(r, big) == ov.rtt_ms(r, small)
    assert cands == [big, small]


def test_no_candidates_when_at_the_key(overlay_1k):
    x = overlay_1k.live_ids()[3]
    assert overlay_1k.next_hop_candidates(x, x) == []


@given(st.integers(0, 999), st.integers(0, RING - 1))
def test_candidates_are_ordered(overlay_1k, at, key):
    ov = overlay_1k
    a = ov.live_ids()[at]
    c = ov.next_hop_candidates(a, key)
    keys = [(ov.rtt_ms(a, m), -ov.record(m).capacity, m) for m in c]
    assert keys == sorted(keys)


def test_fail_nothing():
    ov = Overlay.build(EdgeTopology.synthetic(10, seed=1))
    rep = ov.fail_nodes([])
    assert rep.entries_recomputed == 0 and rep.leaf_entries_repaired == 0


def test_fail_one_of_three():
    ov = Overlay.build(EdgeTopology(_records(3)))
    a, b, c = ov.live_ids()
    ov.fail_nodes([b])
    assert ov.leaf_members(a) == [c]
    assert ov.leaf_members(c) == [a]
    ov.check_closure()


def test_cannot_fail_everyone_or_dead_nodes():
    ov = Overlay.build(EdgeTopology(_records(3)))
    with pytest.raises(EmptyRingError):
        ov.fail_nodes(ov.live_ids())
    a = ov.live_ids()[0]
    ov.fail_nodes([a])
    with pytest.raises(OverlayError):
        ov.fail_nodes([a])


def test_ten_percent_failure_repairs_cleanly_and_quickly():
    topo = EdgeTopology.synthetic(1000, seed=9)
    one = Overlay.build(topo)
    r1 = one.fail_nodes([one.live_ids()[0]])
    many = Overlay.build(topo)
    rng = Rng(4)
    victims = list(rng.gen.choice(many.live_ids(), size=100, replace=False))
    r10 = many.fail_nodes([int(v) for v in victims])
    many.check_closure()
    many.check_prefix_invariant()
    assert r10.time_ms <= 3 * r1.time_ms
    ids = many.live_ids()
    for _ in range(300):
        key = int.from_bytes(rng.gen.bytes(16), "big")
        path = many.route(ids[rng.integers(0, len(ids))], key)
        assert path[-1] == many.closest_live(key)
        assert all(many.is_live(x) for x in path)


@settings(max_examples=15)
@given(st.integers(0, 2**32), st.integers(1, 60))
def test_closure_after_random_failures(seed, k):
    ov = Overlay.build(EdgeTopology.synthetic(150, seed=seed % 97))
    rng = Rng(seed)
    victims = rng.gen.choice(ov.live_ids(), size=k, replace=False)
    ov.fail_nodes([int(v) for v in victims])
    ov.check_closure()
    ov.check_prefix_invariant()


def test_topology_csv_round_trip(tmp_path):
    topo = EdgeTopology.synthetic(20, seed=3)
    p = tmp_path / "t.csv"
    topo.to_csv(p)
    again = EdgeTopology.from_csv(p)
    assert again.nodes == topo.nodes
    assert p.read_bytes().count(b"\r") == 0


def test_rtt_model():
    topo = EdgeTopology([NodeRecord("a", 0, 1, 0, 0), NodeRecord("b", 0, 1, 3, 4)])
    assert math.isclose(topo.rtt_ms(*topo.nodes), 0.5 + 0.02 * 5)
