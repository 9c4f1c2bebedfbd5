import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adsim import gf256
from adsim.overlay import EdgeTopology, NodeRecord, Overlay
from adsim.recovery import (
    ErasureConfig, ErasureConfigError, Fragment, InsufficientFragments, MixedEpochError,
    StateCheckpoint, UnrecoverableError, checkpoint, decode, encode, generator, model_time,
    nearest_leaves, recover, regenerate, single_source_ms, striped_regeneration, subsets,
    take_checkpoint, tolerates, transfer_ms,
)
from adsim.simkernel import EventQueue, Rng, run_until


def slow_mul(a, b):
    """Shift-and-add multiply with reduction by x^8+x^4+x^3+x^2+1."""
    p = 0
    while b:
        if b & 1:
            p ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= 0x11D
    return p


def test_field_multiplication_table():
    a = np.arange(256)
    ref = np.array([[slow_mul(x, y) for y in range(256)] for x in range(256)], dtype=np.uint8)
    assert np.array_equal(gf256.MUL, ref)
    assert all(gf256.mul(x, gf256.inv(x)) == 1 for x in range(1, 256))
    assert gf256.power(2, 8) == slow_mul(slow_mul(16, 4), 4)
    with pytest.raises(ZeroDivisionError):
        gf256.inv(0)


@pytest.mark.parametrize("n", range(2, 17))
def test_generator_is_systematic_and_mds(n):
    for m in range(1, n):
        G = generator(m, n)
        assert np.array_equal(G[:m], np.eye(m, dtype=np.uint8))
        rows = list(subsets(n, m, 60, Rng(n * 100 + m)))
        for idx in rows:
            gf256.mat_inv(G[list(idx)])  # raises if singular


def test_matrix_inverse_round_trip():
    rng = Rng(0)
    for _ in range(20):
        A = rng.gen.integers(0, 256, (5, 5), dtype=np.uint8)
        try:
            Ai = gf256.mat_inv(A)
        except ValueError:
            continue
        assert np.array_equal(gf256.mat_mul(A, Ai), np.eye(5, dtype=np.uint8))


def test_replication_when_m_and_k_are_one():
    state = b"checkpoint-bytes"
    f = encode(state, ErasureConfig(1, 1))
    assert f[0].data.tobytes() == state and f[1].data.tobytes() == state


def test_full_round_trip_and_header():
    state = bytes(range(256)) * 3 + b"tail"
    cfg = ErasureConfig(3, 2)
    frags = encode(state, cfg, epoch=7)
    assert decode(frags, cfg) == state
    blob = frags[4].to_bytes()
    back = Fragment.from_bytes(blob)
    assert (back.index, back.epoch, back.length) == (4, 7, len(state))
    assert np.array_equal(back.data, frags[4].data)


def test_every_four_of_six_decodes_16mb():
    state = Rng(1).gen.bytes(16 * 1024 * 1024)
    cfg = ErasureConfig(4, 2)
    frags = encode(state, cfg)
    for idx in itertools.combinations(range(6), 4):
        assert decode([frags[i] for i in idx], cfg) == state


@settings(max_examples=40)
@given(st.integers(1, 8), st.integers(1, 8), st.binary(min_size=1, max_size=3000))
def test_any_n_minus_m_erasures_decode(m, k, state):
    cfg = ErasureConfig(m, k)
    frags = encode(state, cfg)
    for dead in subsets(cfg.n, k, 30, Rng(len(state))):
        keep = [f for f in frags if f.index not in dead]
        assert decode(keep, cfg) == state


def test_too_few_fragments_and_mixed_epochs():
    cfg = ErasureConfig(3, 2)
    frags = encode(b"abcdefgh", cfg)
    with pytest.raises(InsufficientFragments):
        decode(frags[:2], cfg)
    later = encode(b"abcdefgh", cfg, epoch=1)
    with pytest.raises(MixedEpochError):
        decode([frags[0], frags[1], later[2]], cfg)


def test_config_limits():
    with pytest.raises(ErasureConfigError):
        ErasureConfig(0, 1)
    with pytest.raises(ErasureConfigError):
        ErasureConfig(200, 100)


@settings(max_examples=30)
@given(st.integers(1, 6), st.integers(1, 6), st.binary(min_size=1, max_size=500), st.data())
def test_regenerated_fragment_matches_original(m, k, state, data):
    cfg = ErasureConfig(m, k)
    frags = encode(state, cfg)
    lost = data.draw(st.integers(0, cfg.n - 1))
    rebuilt = regenerate(frags, lost, cfg)
    assert np.array_equal(rebuilt.data, frags[lost].data)


def ring_of(n, seed=0):
    return Overlay.build(EdgeTopology.synthetic(n, seed=seed))


def test_two_fragments_on_three_node_ring():
    ov = ring_of(3)
    owner = ov.live_ids()[0]
    ck = take_checkpoint(ov, owner, "op", b"xyz", ErasureConfig(1, 1))
    assert sorted(ck.holders.values()) == sorted(x for x in ov.live_ids() if x != owner)


@settings(max_examples=100)
@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 6))
def test_holders_are_distinct_leaf_members(seed, m, k):
    ov = ring_of(40, seed)
    owner = ov.live_ids()[seed % 40]
    ck = take_checkpoint(ov, owner, "op", b"s" * 10, ErasureConfig(m, k))
    holders = list(ck.holders.values())
    assert len(set(holders)) == m + k
    assert owner not in holders
    assert set(holders) <= set(ov.leaf_members(owner))


def test_too_many_holders_for_the_leaf_set():
    ov = ring_of(5)
    with pytest.raises(ErasureConfigError):
        take_checkpoint(ov, ov.live_ids()[0], "op", b"s", ErasureConfig(3, 3))


def test_checkpoint_schedule_counts_epochs():
    ov = ring_of(10)
    q = EventQueue()
    sched = checkpoint(ov, ov.live_ids()[0], "op", lambda e: f"state-{e}".encode(), ErasureConfig(2, 1), q, 500)
    run_until(q, 5000)
    assert len(sched.history) == 10
    assert decode(list(sched.latest.fragments.values()), sched.latest.cfg) == b"state-9"


def test_stateless_restart_moves_no_state():
    ov = ring_of(20)
    owner = ov.live_ids()[0]
    rep = recover(ov, None, owner, stateful=False)
    assert rep.success and rep.sim_time_ms == 0.0 and rep.fragments_fetched == 0
    assert rep.restart_node in ov.leaf_members(owner)


@pytest.mark.parametrize("m,k", [(m, k) for m in range(1, 5) for k in range(1, 5) if m + k <= 8])
def test_recovery_succeeds_iff_enough_holders_survive(m, k):
    cfg = ErasureConfig(m, k)
    state = Rng(m * 10 + k).gen.bytes(777)
    owner = ring_of(30, seed=m + k).live_ids()[0]
    rng = Rng(m + k)
    for dead in range(cfg.n + 1):
        for idx in subsets(cfg.n, dead, 3, rng):
            ov = ring_of(30, seed=m + k)
            ck = take_checkpoint(ov, owner, "op", state, cfg)
            ov.fail_nodes([ck.holders[i] for i in idx] + [owner])
            if tolerates(cfg, dead):
                rep = recover(ov, ck, owner)
                assert rep.success and rep.state == state
            else:
                with pytest.raises(UnrecoverableError) as err:
                    recover(ov, ck, owner)
                assert err.value.report.fallback == "stateless-restart"


def test_model_time_formula():
    assert model_time(1, 1, 80.0) == 80.0
    for k in range(1, 9):
        for m in range(1, 8):
            assert model_time(m + 1, k, 1.0) >= model_time(m, k, 1.0)
            if k >= 2:
                assert model_time(m + 1, k, 1.0) > model_time(m, k, 1.0)
        for m in range(1, 9):
            if k < 8:
                assert model_time(m, k + 1, 1.0) < model_time(m, k, 1.0)


def test_transfer_time_units():
    # 1 MiB at 100 Mbit/s
    assert transfer_ms(1 << 20, 100.0) == pytest.approx(83.88608)


@pytest.mark.parametrize("m,k", [(1, 1), (2, 2), (4, 2), (3, 5), (8, 8)])
def test_striped_regeneration_rebuilds_and_tracks_the_model(m, k):
    ov = ring_of(200, seed=3)
    owner = ov.live_ids()[5]
    leaves = nearest_leaves(ov, owner)
    small = Rng(2).gen.bytes(50_000)
    ck = take_checkpoint(ov, owner, "op", small, ErasureConfig(m, k))
    _, frag = striped_regeneration(ov, ck, 0, leaves[m + k], 100.0)
    assert np.array_equal(frag.data, ck.fragments[0].data)
    # timing only: 16 MiB of state, no payload
    size = 16 << 20
    ck = StateCheckpoint("op", owner, 0, dict(enumerate(leaves[: m + k])), {}, size, ErasureConfig(m, k), leaves)
    sim, _ = striped_regeneration(ov, ck, 0, leaves[m + k], 100.0, verify=False)
    B = transfer_ms(-(-size // m), 100.0)
    assert abs(sim - model_time(m, k, B)) <= 0.1 * model_time(m, k, B)


def test_parallel_recovery_beats_single_source():
    ov = ring_of(200, seed=4)
    owner = ov.live_ids()[9]
    state = Rng(5).gen.bytes(4 << 20)
    for m in range(2, 9):
        ck = take_checkpoint(ov, owner, "op", state, ErasureConfig(m, 2))
        rep = recover(ov, ck, owner)
        src = ck.holders[m + 1]
        assert rep.sim_time_ms < single_source_ms(ov, len(state), src, rep.restart_node, 100.0)


def test_subset_sampling():
    assert len(list(subsets(6, 4, None))) == 15
    s = list(subsets(16, 8, 100, Rng(0)))
    assert len(s) == 100 == len(set(s))
