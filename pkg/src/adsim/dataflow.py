"""Per-application dataflow graphs built from JOIN routes, plus schedulers.

Each source sends a JOIN toward the hash of its sink's NodeId. The routes
converge at the rendezvous node (where the sink runs); reversing and merging
them gives the node chain that inner operators are spread over.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .overlay import Overlay, OverlayError, hop_bound, key_for_node, node_id_for
from .simkernel import EventQueue, Rng, SimClock, run_until


class PlacementError(Exception):
    pass


class UnroutableError(PlacementError):
    pass


class TopologyError(ValueError):
    pass


KINDS = ("source", "inner", "sink")


@dataclass(frozen=True)
class OperatorSpec:
    id: str
    kind: str
    stateful: bool = False
    parallelism: int = 1


@dataclass
class AppTopology:
    app_id: str
    operators: list[OperatorSpec]
    edges: list[tuple[str, str]]
    source_bindings: dict[str, str] = field(default_factory=dict)  # op -> node name
    sink_bindings: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        ids = [o.id for o in self.operators]
        if len(set(ids)) != len(ids):
            raise TopologyError(f"{self.app_id}: duplicate operator ids")
        by_id = {o.id: o for o in self.operators}
        for o in self.operators:
            if o.kind not in KINDS:
                raise TopologyError(f"{self.app_id}: operator {o.id} has unknown kind {o.kind!r}")
            if o.parallelism < 1:
                raise TopologyError(f"{self.app_id}: operator {o.id} needs parallelism >= 1")
        for a, b in self.edges:
            if a not in by_id or b not in by_id:
                raise TopologyError(f"{self.app_id}: edge {a}->{b} names an unknown operator")
            if by_id[b].kind == "source":
                raise TopologyError(f"{self.app_id}: source {b} has an in-edge")
            if by_id[a].kind == "sink":
                raise TopologyError(f"{self.app_id}: sink {a} has an out-edge")
        if not any(o.kind == "source" for o in self.operators):
            raise TopologyError(f"{self.app_id}: no source operator")
        if not any(o.kind == "sink" for o in self.operators):
            raise TopologyError(f"{self.app_id}: no sink operator")
        self.topo_order()  # raises on cycles

    def op(self, op_id: str) -> OperatorSpec:
        return next(o for o in self.operators if o.id == op_id)

    def topo_order(self) -> list[str]:
        indeg = {o.id: 0 for o in self.operators}
        succ = defaultdict(list)
        for a, b in self.edges:
            indeg[b] += 1
            succ[a].append(b)
        ready = deque(o.id for o in self.operators if indeg[o.id] == 0)
        order = []
        while ready:
            v = ready.popleft()
            order.append(v)
            for w in succ[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
        if len(order) != len(self.operators):
            raise TopologyError(f"{self.app_id}: operator graph has a cycle")
        return order

    @property
    def sources(self) -> list[str]:
        return [o.id for o in self.operators if o.kind == "source"]

    @property
    def sinks(self) -> list[str]:
        return [o.id for o in self.operators if o.kind == "sink"]

    @classmethod
    def from_json(cls, doc: dict | str | Path) -> "AppTopology":
        if isinstance(doc, Path) or (isinstance(doc, str) and not doc.lstrip().startswith("{")):
            doc = json.loads(Path(doc).read_text())
        elif isinstance(doc, str):
            doc = json.loads(doc)
        try:
            ops = [OperatorSpec(o["id"], o["kind"], bool(o.get("stateful", False)),
                                int(o.get("parallelism", 1))) for o in doc["operators"]]
            return cls(doc["app_id"], ops, [tuple(e) for e in doc["edges"]],
                       dict(doc.get("source_bindings", {})), dict(doc.get("sink_bindings", {})))
        except KeyError as exc:
            raise TopologyError(f"app document missing field {exc}") from None

    def to_json(self) -> dict:
        return {
            "app_id": self.app_id,
            "operators": [{"id": o.id, "kind": o.kind, "stateful": o.stateful,
                           "parallelism": o.parallelism} for o in self.operators],
            "edges": [list(e) for e in self.edges],
            "source_bindings": dict(self.source_bindings),
            "sink_bindings": dict(self.sink_bindings),
        }


Instance = tuple[str, int]  # (operator id, replica index)


@dataclass(frozen=True)
class DataflowGraph:
    app_id: str
    placement: dict[Instance, int]
    shuffle_paths: dict[tuple[Instance, Instance], tuple[int, ...]]
    rendezvous: int
    join_routes: dict[str, tuple[int, ...]]
    route_nodes: tuple[int, ...]
    sink_op: str = "sink"

    def ops_on(self, node_id: int) -> list[Instance]:
        return [i for i, n in self.placement.items() if n == node_id]


def synthetic_app(rng: Rng, app_id: str, node_names: list[str], min_ops: int = 5,
                  max_ops: int = 15, stateful_frac: float = 0.3) -> AppTopology:
    """Random layered DAG with 1..3 sources, one sink, and uniform op count."""
    g = rng.gen
    n_ops = int(g.integers(min_ops, max_ops + 1))
    n_src = int(min(n_ops - 2, g.integers(1, 4)))
    n_inner = n_ops - n_src - 1
    ops = [OperatorSpec(f"src{i}", "source") for i in range(n_src)]
    ops += [OperatorSpec(f"op{i}", "inner", bool(g.random() < stateful_frac)) for i in range(n_inner)]
    ops.append(OperatorSpec("sink", "sink", True))
    edges = []
    chain = [f"op{i}" for i in range(n_inner)]
    for i in range(n_src):
        edges.append((f"src{i}", chain[0] if chain else "sink"))
    for i in range(1, n_inner):
        edges.append((chain[int(g.integers(0, i))], chain[i]))
    # every inner op without a successor feeds the sink
    has_out = {a for a, _ in edges}
    for c in chain:
        if c not in has_out:
            edges.append((c, "sink"))
    src_nodes = g.choice(len(node_names), size=n_src, replace=False) if n_src <= len(node_names) \
        else g.integers(0, len(node_names), n_src)
    sink_node = node_names[int(g.integers(0, len(node_names)))]
    return AppTopology(app_id, ops, edges,
                       {f"src{i}": node_names[int(j)] for i, j in enumerate(src_nodes)},
                       {"sink": sink_node})


@dataclass
class PlacementLoad:
    """Operator count per node across every deployed app."""

    max_ops_per_node: int = 2  # applies to inner ops; bound sources and sinks always land
    load: Counter = field(default_factory=Counter)

    def has_room(self, node_id: int) -> bool:
        return self.load[node_id] < self.max_ops_per_node


def _merge_routes(routes: list[list[int]]) -> list[int]:
    """Route nodes in dataflow order: sources first, the rendezvous last."""
    seen = set()
    out = []
    depth = max(len(r) for r in routes)
    # align routes on their common end so that upstream hops come first
    for step in range(depth):
        for r in routes:
            j = step - (depth - len(r))
            if j >= 0 and r[j] not in seen:
                seen.add(r[j])
                out.append(r[j])
    return out


def _node_of(ov: Overlay, name: str) -> int:
    nid = node_id_for(name)
    if not ov.is_live(nid):
        raise PlacementError(f"node {name!r} is not live")
    return nid


def build_dataflow(ov: Overlay, app: AppTopology, load: PlacementLoad | None = None) -> DataflowGraph:
    load = load if load is not None else PlacementLoad()
    missing = [s for s in app.sources if s not in app.source_bindings]
    if missing:
        raise PlacementError(f"{app.app_id}: unbound sources {missing}")
    if len(app.sinks) != 1 or app.sinks[0] not in app.sink_bindings:
        raise PlacementError(f"{app.app_id}: exactly one bound sink is required")
    sink_node = _node_of(ov, app.sink_bindings[app.sinks[0]])
    key = key_for_node(sink_node)
    routes = {}
    for s in app.sources:
        routes[s] = ov.route(_node_of(ov, app.source_bindings[s]), key)
    ends = {r[-1] for r in routes.values()}
    if len(ends) != 1:
        raise PlacementError(f"{app.app_id}: JOIN routes ended at {len(ends)} different nodes")
    rendezvous = ends.pop()
    chain = _merge_routes(list(routes.values()))

    placement: dict[Instance, int] = {}
    for s in app.sources:
        for r in range(app.op(s).parallelism):
            placement[(s, r)] = routes[s][0]
    for r in range(app.op(app.sinks[0]).parallelism):
        placement[(app.sinks[0], r)] = rendezvous

    for nid in placement.values():
        load.load[nid] += 1

    inner = [(o, r) for o in app.topo_order() if app.op(o).kind == "inner"
             for r in range(app.op(o).parallelism)]
    spill_pool = None
    pos = 0
    for inst in inner:
        target = None
        for _ in range(len(chain)):
            cand = chain[pos % len(chain)]
            pos += 1
            if load.has_room(cand):
                target = cand
                break
        if target is None:
            if spill_pool is None:
                spill_pool = []
                seen = set(chain)
                for c in chain:
                    for m in ov.leaf_members(c):
                        if m not in seen:
                            seen.add(m)
                            spill_pool.append(m)
            roomy = [m for m in spill_pool if load.has_room(m)]
            # the cap is a balance target: when every candidate is full, overfill the lightest
            target = min(roomy or spill_pool + chain, key=lambda m: (load.load[m], m))
        placement[inst] = target
        load.load[target] += 1

    paths = {}
    for a, b in app.edges:
        for ra in range(app.op(a).parallelism):
            for rb in range(app.op(b).parallelism):
                u, v = placement[(a, ra)], placement[(b, rb)]
                paths[((a, ra), (b, rb))] = tuple(ov.route(u, v)) if u != v else (u,)
    return DataflowGraph(app.app_id, placement, paths, rendezvous,
                         {s: tuple(r) for s, r in routes.items()}, tuple(chain), app.sinks[0])


@dataclass(frozen=True)
class DeploymentCost:
    messages: int
    hops: int
    time_ms: float


def deployment_cost(ov: Overlay, graph: DataflowGraph, setup_ms: float = 1.0) -> DeploymentCost:
    """JOIN traffic of one app deployed on its own.

    Time is the slowest JOIN route (sum of per-hop rtt) plus a fixed
    operator setup cost at the rendezvous.
    """
    hops = sum(len(r) - 1 for r in graph.join_routes.values())
    slowest = max(sum(ov.rtt_ms(a, b) for a, b in zip(r, r[1:])) for r in graph.join_routes.values())
    return DeploymentCost(len(graph.join_routes), hops, setup_ms + slowest)


def simulate_concurrent_deployments(ov: Overlay, graphs: list[DataflowGraph], proc_ms: float = 0.05,
                                    setup_ms: float = 1.0) -> list[float]:
    """Deploy every app at t=0 through one event queue.

    Each node forwards JOIN messages one at a time (``proc_ms`` each), so a
    hot node would delay every app routed through it. Returns per-app
    completion times in ms, in input order.
    """
    clock = SimClock()
    q = EventQueue(clock)
    busy = defaultdict(float)
    now = {"t": 0.0}
    done = [0.0] * len(graphs)
    pending = [len(g.join_routes) for g in graphs]
    # virtual time in integer microseconds keeps the queue ordering exact
    us = 1000.0

    def hop(app, route, i):
        t = clock.now / us
        node = route[i]
        start = max(t, busy[node])
        busy[node] = start + proc_ms
        if i + 1 == len(route):
            pending[app] -= 1
            done[app] = max(done[app], start + proc_ms)
            return
        arrive = start + proc_ms + ov.rtt_ms(node, route[i + 1])
        q.schedule(int(round(arrive * us)), lambda: hop(app, route, i + 1))

    for a, g in enumerate(graphs):
        for s in sorted(g.join_routes):
            r = g.join_routes[s]
            q.schedule(0, lambda a=a, r=r: hop(a, r, 0))
    run_until(q, 1 << 62)
    return [d + setup_ms for d in done]


def reroute_edge(ov: Overlay, graph: DataflowGraph, edge: tuple[Instance, Instance],
                 avoid: int) -> DataflowGraph:
    """Recompute one shuffle path so that it skips ``avoid``."""
    if edge not in graph.shuffle_paths:
        raise KeyError(f"edge {edge} is not part of {graph.app_id}")
    path = graph.shuffle_paths[edge]
    if avoid not in path:
        return graph
    u, v = path[0], path[-1]
    if avoid in (u, v):
        raise UnroutableError(f"{graph.app_id}: cannot avoid an endpoint of {edge}")
    for c in ov.leaf_members(u):
        if c in (avoid, u) or not ov.is_live(c):
            continue
        try:
            tail = ov.route(c, v) if c != v else [v]
        except OverlayError:
            continue
        new = [u] + tail
        if avoid in new or len(set(new)) != len(new):
            continue
        paths = dict(graph.shuffle_paths)
        paths[edge] = tuple(new)
        return replace(graph, shuffle_paths=paths)
    raise UnroutableError(f"{graph.app_id}: no leaf-set detour around the node for {edge}")


def replace_failed(ov: Overlay, graph: DataflowGraph, leaf_before: dict[int, list[int]],
                   load: PlacementLoad) -> DataflowGraph:
    """Move instances off dead nodes onto live leaf-set members and re-route.

    ``leaf_before`` holds each failed node's leaf set captured before the
    failure (the overlay drops dead nodes' state).
    """
    placement = dict(graph.placement)
    moved = {}
    for inst, nid in sorted(placement.items()):
        if ov.is_live(nid):
            continue
        if nid not in moved:
            cands = [m for m in leaf_before.get(nid, []) if ov.is_live(m)]
            if not cands:
                cands = ov.live_ids()
            if not cands:
                raise PlacementError("no live node left")
            moved[nid] = min(cands, key=lambda m: (load.load[m], m))
        placement[inst] = moved[nid]
        load.load[nid] -= 1
        load.load[moved[nid]] += 1
    paths = {}
    for (a, b), p in graph.shuffle_paths.items():
        u, v = placement[a], placement[b]
        if all(ov.is_live(x) for x in p) and p[0] == u and p[-1] == v:
            paths[(a, b)] = p
        else:
            paths[(a, b)] = tuple(ov.route(u, v)) if u != v else (u,)
    rendezvous = placement[(graph.sink_op, 0)]
    return replace(graph, placement=placement, shuffle_paths=paths, rendezvous=rendezvous)


def fail_and_repair(ov: Overlay, graphs: list[DataflowGraph], victims: list[int],
                    load: PlacementLoad) -> list[DataflowGraph]:
    leaf_before = {v: ov.leaf_members(v) for v in victims}
    ov.fail_nodes(victims)
    return [replace_failed(ov, g, leaf_before, load) for g in graphs]


# schedulers -------------------------------------------------------------------

@dataclass
class SchedulerRegistry:
    threshold: int = 50
    schedulers: dict[int, list[int]] = field(default_factory=lambda: defaultdict(list))
    assignments: dict[str, int] = field(default_factory=dict)
    load: Counter = field(default_factory=Counter)
    lookup_hops: list[int] = field(default_factory=list)

    def count(self, zone: int) -> int:
        return len(self.schedulers.get(zone, []))


def find_or_elect_scheduler(ov: Overlay, reg: SchedulerRegistry, app_id: str, origin: int) -> int:
    if not ov.is_live(origin):
        raise PlacementError("origin is not live")
    if app_id in reg.assignments:
        return reg.assignments[app_id]
    zone = ov.record(origin).zone
    bound = hop_bound(len(ov), ov.b)
    best = None
    for s in reg.schedulers.get(zone, []):
        if not ov.is_live(s) or reg.load[s] >= reg.threshold:
            continue
        h = len(ov.route(origin, s)) - 1
        if h <= bound and (best is None or (h, s) < best):
            best = (h, s)
    if best is not None:
        hops, chosen = best
    else:
        taken = set(reg.schedulers.get(zone, []))
        cands = [nid for nid in ov.live_ids() if ov.record(nid).zone == zone and nid not in taken]
        if not cands:
            raise PlacementError(f"zone {zone} has no node left to elect")
        chosen = min(cands, key=lambda nid: (-ov.record(nid).capacity, nid))
        reg.schedulers[zone].append(chosen)
        hops = len(ov.route(origin, chosen)) - 1
    reg.assignments[app_id] = chosen
    reg.load[chosen] += 1
    reg.lookup_hops.append(hops)
    return chosen


def ops_histogram(ov: Overlay, load: PlacementLoad) -> dict[int, int]:
    """Number of live nodes hosting exactly j operators."""
    hist = Counter()
    for nid in ov.live_ids():
        hist[load.load[nid]] += 1
    return dict(sorted(hist.items()))
