import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from adsim.dataflow import (
    AppTopology, DataflowGraph, OperatorSpec, PlacementError, PlacementLoad, SchedulerRegistry,
    TopologyError, UnroutableError, build_dataflow, deployment_cost, fail_and_repair,
    find_or_elect_scheduler, ops_histogram, reroute_edge, simulate_concurrent_deployments,
    synthetic_app,
)
from adsim.overlay import EdgeTopology, NodeRecord, Overlay, hop_bound, key_for_node, node_id_for
from adsim.simkernel import Rng


def chain_app(src_node, sink_node, n_inner=1, app_id="app"):
    ops = [OperatorSpec("src", "source")]
    ops += [OperatorSpec(f"op{i}", "inner") for i in range(n_inner)]
    ops.append(OperatorSpec("sink", "sink"))
    names = ["src"] + [f"op{i}" for i in range(n_inner)] + ["sink"]
    return AppTopology(app_id, ops, list(zip(names, names[1:])), {"src": src_node}, {"sink": sink_node})


def deploy_many(ov, n_apps, seed=0, cap=2):
    rng = Rng(seed).fork("apps")
    names = [ov.record(x).name for x in ov.live_ids()]
    load = PlacementLoad(cap)
    graphs = [build_dataflow(ov, synthetic_app(rng, f"app{i}", names), load) for i in range(n_apps)]
    return graphs, load


def test_single_node_ring_hosts_everything():
    ov = Overlay.build(EdgeTopology([NodeRecord("only", 0, 4.0, 0.0, 0.0)]))
    g = build_dataflow(ov, chain_app("only", "only"))
    nid = node_id_for("only")
    assert set(g.placement.values()) == {nid}
    assert all(p == (nid,) for p in g.shuffle_paths.values())
    cost = deployment_cost(ov, g)
    assert (cost.messages, cost.hops, cost.time_ms) == (1, 0, 1.0)


def test_sources_meet_at_one_rendezvous(overlay_1k):
    ov = overlay_1k
    names = [ov.record(x).name for x in ov.live_ids()]
    ops = [OperatorSpec("a", "source"), OperatorSpec("b", "source"), OperatorSpec("mix", "inner"),
           OperatorSpec("sink", "sink")]
    app = AppTopology("two", ops, [("a", "mix"), ("b", "mix"), ("mix", "sink")],
                      {"a": names[3], "b": names[700]}, {"sink": names[42]})
    g = build_dataflow(ov, app)
    ends = {r[-1] for r in g.join_routes.values()}
    assert ends == {g.rendezvous}
    assert g.rendezvous == ov.closest_live(key_for_node(node_id_for(names[42])))
    assert g.placement[("sink", 0)] == g.rendezvous


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_rendezvous_unique_for_random_apps(overlay_1k, seed):
    graphs, _ = deploy_many(overlay_1k, 3, seed)
    for g in graphs:
        assert len({r[-1] for r in g.join_routes.values()}) == 1


def test_join_hops_within_overlay_bound(overlay_1k):
    graphs, _ = deploy_many(overlay_1k, 50)
    bound = hop_bound(len(overlay_1k))
    for g in graphs:
        assert all(len(r) - 1 <= bound for r in g.join_routes.values())
        cost = deployment_cost(overlay_1k, g)
        assert cost.messages == len(g.join_routes)


def test_histogram_conserves_operators(overlay_1k):
    graphs, load = deploy_many(overlay_1k, 80)
    hist = ops_histogram(overlay_1k, load)
    assert sum(hist.values()) == len(overlay_1k)
    assert sum(j * c for j, c in hist.items()) == sum(len(g.placement) for g in graphs)


def test_placement_spreads_operators(overlay_1k):
    # 100 apps of ~10 ops on 1000 nodes is the same density as 1000 on 10000
    _, load = deploy_many(overlay_1k, 100)
    hist = ops_histogram(overlay_1k, load)
    assert sum(c for j, c in hist.items() if j < 4) / len(overlay_1k) >= 0.99


def test_every_instance_on_one_live_node_after_failures(overlay_1k):
    topo = overlay_1k.topo
    ov = Overlay.build(topo)
    graphs, load = deploy_many(ov, 40, seed=5)
    rng = Rng(8)
    for _ in range(3):
        used = sorted({n for g in graphs for n in g.placement.values()})
        victims = [int(v) for v in rng.gen.choice(used, size=10, replace=False)]
        graphs = fail_and_repair(ov, graphs, victims, load)
        for g in graphs:
            assert all(ov.is_live(n) for n in g.placement.values())
            for (a, b), p in g.shuffle_paths.items():
                assert p[0] == g.placement[a] and p[-1] == g.placement[b]
                assert all(ov.is_live(x) for x in p)
    total = sum(len(g.placement) for g in graphs)
    assert sum(load.load[n] for n in ov.live_ids()) == total


def _five_node_ring():
    recs = [NodeRecord(f"n{i}", 0, 4.0, float(i), 0.0) for i in range(5)]
    return Overlay.build(EdgeTopology(recs))


def test_reroute_ignores_nodes_off_the_path():
    ov = _five_node_ring()
    ids = ov.live_ids()
    e = (("a", 0), ("b", 0))
    g = DataflowGraph("x", {e[0]: ids[0], e[1]: ids[2]}, {e: (ids[0], ids[1], ids[2])}, ids[2], {}, ())
    assert reroute_edge(ov, g, e, ids[4]) is g


def test_reroute_detours_through_a_leaf_sibling():
    ov = _five_node_ring()
    ids = ov.live_ids()
    u, mid, v = ids[0], ids[1], ids[2]
    e = (("a", 0), ("b", 0))
    g = DataflowGraph("x", {e[0]: u, e[1]: v}, {e: (u, mid, v)}, v, {}, ())
    new = reroute_edge(ov, g, e, mid).shuffle_paths[e]
    assert new[0] == u and new[-1] == v and mid not in new
    assert new[1] in ov.leaf_members(u)
    with pytest.raises(UnroutableError):
        reroute_edge(ov, g, e, u)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_repeated_rerouting_never_loops(overlay_1k, seed):
    ov = overlay_1k
    graphs, _ = deploy_many(ov, 5, seed)
    rng = Rng(seed)
    for g in graphs:
        for e, p in list(g.shuffle_paths.items()):
            for _ in range(4):
                p = g.shuffle_paths[e]
                if len(p) < 3:
                    break
                avoid = p[1 + rng.integers(0, len(p) - 2)]
                try:
                    g = reroute_edge(ov, g, e, avoid)
                except UnroutableError:
                    break
                q = g.shuffle_paths[e]
                assert len(set(q)) == len(q)
                assert avoid not in q


def test_rendezvous_keys_are_uniform(overlay_1k):
    ov = overlay_1k
    keys = [key_for_node(node_id_for(f"sink-{i}")) for i in range(10_000)]
    top = np.array([k >> 124 for k in keys])
    assert chisquare(np.bincount(top, minlength=16)).pvalue > 0.01
    # the rendezvous nodes themselves, bucketed by ring arc
    rz = np.array([ov.closest_live(k) >> 124 for k in keys])
    assert chisquare(np.bincount(rz, minlength=16)).pvalue > 0.01


def test_concurrent_deployment_time_stays_flat(overlay_1k):
    graphs, _ = deploy_many(overlay_1k, 500, seed=2, cap=10)
    conc = simulate_concurrent_deployments(overlay_1k, graphs)
    solo = [deployment_cost(overlay_1k, g).time_ms for g in graphs]
    assert all(c >= s - 1e-9 for c, s in zip(conc, solo))
    assert conc[-1] / conc[0] <= 1.5
    assert max(c / s for c, s in zip(conc, solo)) <= 1.5


def test_first_scheduler_is_the_strongest_node_in_zone(overlay_1k):
    ov = overlay_1k
    reg = SchedulerRegistry(threshold=50)
    origin = ov.live_ids()[0]
    zone = ov.record(origin).zone
    chosen = find_or_elect_scheduler(ov, reg, "a0", origin)
    in_zone = [x for x in ov.live_ids() if ov.record(x).zone == zone]
    assert chosen == min(in_zone, key=lambda x: (-ov.record(x).capacity, x))
    assert find_or_elect_scheduler(ov, reg, "a0", origin) == chosen  # sticky


def test_fifty_first_app_elects_a_second_scheduler(overlay_1k):
    ov = overlay_1k
    reg = SchedulerRegistry(threshold=50)
    origin = ov.live_ids()[0]
    zone = ov.record(origin).zone
    for i in range(50):
        find_or_elect_scheduler(ov, reg, f"a{i}", origin)
    assert reg.count(zone) == 1
    find_or_elect_scheduler(ov, reg, "a50", origin)
    assert reg.count(zone) == 2


def test_topology_validation_and_json_round_trip(tmp_path):
    app = chain_app("x", "y", n_inner=3)
    again = AppTopology.from_json(json.dumps(app.to_json()))
    assert again.to_json() == app.to_json()
    p = tmp_path / "app.json"
    p.write_text(json.dumps(app.to_json()))
    assert AppTopology.from_json(p).to_json() == app.to_json()
    src, a, b, snk = (OperatorSpec("s", "source"), OperatorSpec("a", "inner"),
                      OperatorSpec("b", "inner"), OperatorSpec("t", "sink"))
    with pytest.raises(TopologyError):
        AppTopology("cyc", [src, a, b, snk], [("s", "a"), ("a", "b"), ("b", "a"), ("b", "t")])
    with pytest.raises(TopologyError):
        AppTopology("nosink", [src, a], [("s", "a")])
    with pytest.raises(TopologyError):
        AppTopology("back", [src, snk], [("t", "s")])


def test_unbound_source_rejected(overlay_1k):
    app = chain_app("node-00001", "node-00002")
    app.source_bindings.clear()
    with pytest.raises(PlacementError):
        build_dataflow(overlay_1k, app)
