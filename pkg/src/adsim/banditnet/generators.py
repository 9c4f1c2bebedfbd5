"""Synthetic topologies for routing experiments.

All generators draw each link's expected delay uniformly in
[delay_min, delay_max] and its success rate uniformly in ``theta_range``;
the per-attempt base delay is expected delay times theta.
"""

from __future__ import annotations

import math

import numpy as np

from ..simkernel import Rng
from .graph import GraphError, NetGraph

DEFAULT_THETA = (0.25, 1.0)

# grid shape per node count; 6x24 keeps the 144-node/256-link network under
# the path-enumeration cap of the end-to-end learner
GRID_SHAPES = {16: (4, 4), 25: (5, 5), 36: (6, 6), 64: (8, 8), 144: (6, 24)}


def grid_shape(nodes: int) -> tuple[int, int]:
    if nodes in GRID_SHAPES:
        return GRID_SHAPES[nodes]
    r = int(math.isqrt(nodes))
    while r > 1 and nodes % r:
        r -= 1
    if r < 2:
        raise GraphError(f"cannot lay {nodes} nodes on a grid")
    return r, nodes // r


def _link_params(rng: Rng, m: int, delay_min: float, delay_max: float, theta_range):
    if not 0 < delay_min <= delay_max:
        raise GraphError("need 0 < delay_min <= delay_max")
    lo, hi = theta_range
    if not 0 < lo <= hi <= 1:
        raise GraphError("theta range must lie in (0, 1]")
    expected = rng.gen.uniform(delay_min, delay_max, m)
    theta = rng.gen.uniform(lo, hi, m)
    return theta, expected * theta


def _build(n, links, source, sink, rng, delay_min, delay_max, theta_range) -> NetGraph:
    theta, base = _link_params(rng, len(links), delay_min, delay_max, theta_range)
    edges = [(a, b, theta[i], base[i]) for i, (a, b) in enumerate(links)]
    return NetGraph.from_edges(edges, source, sink)


def grid_road(nodes: int, links: int, delay_min: float = 50.0, delay_max: float = 250.0,
              seed: int = 0, theta_range=DEFAULT_THETA) -> NetGraph:
    """Monotone road grid from the top-left corner to the bottom-right one.

    Starts from right/down street links. Extra links are diagonals (then
    two-block skips); fewer links are reached by closing streets while every
    intersection keeps an entry and an exit.
    """
    rng = Rng(seed).fork("grid-road")
    rows, cols = grid_shape(nodes)
    nid = lambda r, c: r * cols + c
    base_links = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                base_links.append((nid(r, c), nid(r, c + 1)))
            if r + 1 < rows:
                base_links.append((nid(r, c), nid(r + 1, c)))
    chosen = list(base_links)
    if links > len(chosen):
        diag = [(nid(r, c), nid(r + 1, c + 1)) for r in range(rows - 1) for c in range(cols - 1)]
        skip = [(nid(r, c), nid(r, c + 2)) for r in range(rows) for c in range(cols - 2)]
        skip += [(nid(r, c), nid(r + 2, c)) for r in range(rows - 2) for c in range(cols)]
        extra = [diag[i] for i in rng.gen.permutation(len(diag))]
        extra += [skip[i] for i in rng.gen.permutation(len(skip))]
        need = links - len(chosen)
        if need > len(extra):
            raise GraphError(f"grid of {nodes} nodes supports at most {len(chosen) + len(extra)} links")
        chosen += extra[:need]
    elif links < len(chosen):
        outdeg = np.zeros(nodes, dtype=int)
        indeg = np.zeros(nodes, dtype=int)
        for a, b in chosen:
            outdeg[a] += 1
            indeg[b] += 1
        keep = set(chosen)
        for i in rng.gen.permutation(len(base_links)):
            if len(keep) == links:
                break
            a, b = base_links[i]
            if outdeg[a] > 1 and indeg[b] > 1:
                keep.discard((a, b))
                outdeg[a] -= 1
                indeg[b] -= 1
        if len(keep) != links:
            raise GraphError(f"cannot thin a {nodes}-node grid down to {links} links")
        chosen = [l for l in base_links if l in keep]
    return _build(nodes, chosen, 0, nodes - 1, rng, delay_min, delay_max, theta_range)


def ring(nodes: int, links: int, delay_min: float = 50.0, delay_max: float = 250.0,
         seed: int = 0, theta_range=DEFAULT_THETA) -> NetGraph:
    """Clockwise ring, then counter-clockwise links, then random chords."""
    if nodes < 3 or links < nodes:
        raise GraphError("ring needs >= 3 nodes and >= nodes links")
    rng = Rng(seed).fork("ring")
    chosen = [(i, (i + 1) % nodes) for i in range(nodes)]
    back = [((i + 1) % nodes, i) for i in range(nodes)]
    chosen += [back[i] for i in rng.gen.permutation(nodes)][: links - nodes]
    have = set(chosen)
    pool = [(a, b) for a in range(nodes) for b in range(nodes) if a != b and (a, b) not in have]
    need = links - len(chosen)
    if need > len(pool):
        raise GraphError("too many links for a simple digraph")
    chosen += [pool[i] for i in rng.gen.permutation(len(pool))[:need]]
    return _build(nodes, chosen, 0, nodes // 2, rng, delay_min, delay_max, theta_range)


def random_graph(nodes: int, links: int, delay_min: float = 50.0, delay_max: float = 250.0,
                 seed: int = 0, theta_range=DEFAULT_THETA) -> NetGraph:
    """Random simple digraph containing a source-to-sink chain through every node."""
    if nodes < 2 or links < nodes - 1:
        raise GraphError("random graph needs >= nodes-1 links")
    if links > nodes * (nodes - 1):
        raise GraphError("too many links for a simple digraph")
    rng = Rng(seed).fork("random")
    middle = [int(x) + 1 for x in rng.gen.permutation(nodes - 2)]
    order = [0] + middle + [nodes - 1]
    chosen = list(zip(order, order[1:]))
    have = set(chosen)
    pool = [(a, b) for a in range(nodes) for b in range(nodes) if a != b and (a, b) not in have]
    chosen += [pool[i] for i in rng.gen.permutation(len(pool))[: links - len(chosen)]]
    return _build(nodes, chosen, 0, nodes - 1, rng, delay_min, delay_max, theta_range)


GENERATORS = {"grid-road": grid_road, "ring": ring, "random": random_graph}


def generate(kind: str, nodes: int, links: int, delay_min: float, delay_max: float,
             seed: int = 0, theta_range=DEFAULT_THETA) -> NetGraph:
    try:
        fn = GENERATORS[kind]
    except KeyError:
        raise GraphError(f"unknown topology kind {kind!r}") from None
    return fn(nodes, links, delay_min, delay_max, seed, theta_range)
