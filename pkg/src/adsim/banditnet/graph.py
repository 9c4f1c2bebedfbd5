"""Unreliable-link network graphs for the data-shuffling model."""

from __future__ import annotations

import csv
import heapq
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

THETA_MIN = 0.01


class GraphError(ValueError):
    pass


class EnumerationCapError(GraphError):
    pass


def _node_sort_key(label: str):
    return (0, int(label), "") if label.lstrip("-").isdigit() else (1, 0, label)


@dataclass
class NetGraph:
    """Directed graph with per-link success probability and base delay.

    Nodes are indexed by the sorted order of their labels (numeric labels sort
    numerically), so "lowest NodeId" tie-breaks become "lowest index".
    Links are sorted by (src, dst); ``out_ptr``/``out_links`` is the CSR
    adjacency in that order.
    """

    labels: list[str]
    src: np.ndarray
    dst: np.ndarray
    theta: np.ndarray
    base: np.ndarray
    source: int
    sink: int

    def __post_init__(self):
        n = len(self.labels)
        order = np.lexsort((self.dst, self.src))
        self.src = np.asarray(self.src, dtype=np.int64)[order]
        self.dst = np.asarray(self.dst, dtype=np.int64)[order]
        self.theta = np.asarray(self.theta, dtype=np.float64)[order]
        self.base = np.asarray(self.base, dtype=np.float64)[order]
        self.out_ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.out_ptr, self.src + 1, 1)
        self.out_ptr = np.cumsum(self.out_ptr)
        self.out_links = np.arange(len(self.src), dtype=np.int64)
        in_order = np.lexsort((self.src, self.dst))
        self.in_ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.in_ptr, self.dst + 1, 1)
        self.in_ptr = np.cumsum(self.in_ptr)
        self.in_links = in_order.astype(np.int64)
        self.link_index = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(self.src, self.dst))}
        self.expected_delay = self.base / self.theta

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    @property
    def n_links(self) -> int:
        return len(self.src)

    def out(self, v: int) -> range:
        return range(int(self.out_ptr[v]), int(self.out_ptr[v + 1]))

    def link(self, a: int, b: int) -> int:
        return self.link_index[(a, b)]

    def path_links(self, nodes: list[int]) -> list[int]:
        return [self.link_index[(a, b)] for a, b in zip(nodes, nodes[1:])]

    def path_expected_delay(self, nodes: list[int]) -> float:
        total = 0.0
        for i in self.path_links(nodes):
            total += self.expected_delay[i]
        return total

    @classmethod
    def from_edges(cls, edges, source, sink, theta_min: float = THETA_MIN) -> "NetGraph":
        """Build from ``(src_label, dst_label, theta, base_delay_ms)`` tuples."""
        labels = sorted({str(e[0]) for e in edges} | {str(e[1]) for e in edges}
                        | {str(source), str(sink)}, key=_node_sort_key)
        idx = {lab: i for i, lab in enumerate(labels)}
        seen = set()
        src, dst, theta, base = [], [], [], []
        for a, b, th, bd in edges:
            a, b = idx[str(a)], idx[str(b)]
            if a == b:
                raise GraphError(f"self-loop on {labels[a]}")
            if (a, b) in seen:
                raise GraphError(f"duplicate link {labels[a]}->{labels[b]}")
            seen.add((a, b))
            th, bd = float(th), float(bd)
            if not theta_min <= th <= 1.0:
                raise GraphError(f"theta {th} of {labels[a]}->{labels[b]} outside [{theta_min}, 1]")
            if bd <= 0:
                raise GraphError(f"base delay must be positive on {labels[a]}->{labels[b]}")
            src.append(a), dst.append(b), theta.append(th), base.append(bd)
        g = cls(labels, np.array(src), np.array(dst), np.array(theta), np.array(base),
                idx[str(source)], idx[str(sink)])
        if g.source == g.sink:
            raise GraphError("source and sink coincide")
        if not np.isfinite(dijkstra(g, g.expected_delay)[0][g.source]):
            raise GraphError("no source-to-sink path")
        return g

    # csv ---------------------------------------------------------------------

    @classmethod
    def read_csv(cls, path: str | Path) -> "NetGraph":
        text = Path(path).read_text()
        return cls.parse_csv(text)

    @classmethod
    def parse_csv(cls, text: str) -> "NetGraph":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise GraphError("first line must be '#source=<id>,sink=<id>'")
        meta = dict(kv.split("=", 1) for kv in lines[0][1:].strip().split(","))
        try:
            source, sink = meta["source"].strip(), meta["sink"].strip()
        except KeyError as exc:
            raise GraphError(f"header missing {exc}") from None
        rows = list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))
        edges = [(r["src"], r["dst"], r["theta"], r["base_delay_ms"]) for r in rows]
        return cls.from_edges(edges, source, sink)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"#source={self.labels[self.source]},sink={self.labels[self.sink]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["src", "dst", "theta", "base_delay_ms"])
        for i in range(self.n_links):
            w.writerow([self.labels[self.src[i]], self.labels[self.dst[i]],
                        repr(float(self.theta[i])), repr(float(self.base[i]))])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def dijkstra(g: NetGraph, weight: np.ndarray, target: int | None = None):
    """Distances to ``target`` (default sink) over non-negative link weights.

    Returns (dist, next_link) where next_link[v] is the first link of a
    shortest v->target path; ties go to the lowest next-node index.
    """
    target = g.sink if target is None else target
    n = g.n_nodes
    dist = np.full(n, np.inf)
    nxt = np.full(n, -1, dtype=np.int64)
    dist[target] = 0.0
    heap = [(0.0, target)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, x = heapq.heappop(heap)
        if done[x]:
            continue
        done[x] = True
        for p in range(g.in_ptr[x], g.in_ptr[x + 1]):
            i = g.in_links[p]
            v = g.src[i]
            if done[v]:
                continue
            nd = weight[i] + d
            if nd < dist[v] or (nd == dist[v] and nxt[v] >= 0 and g.dst[i] < g.dst[nxt[v]]):
                dist[v] = nd
                nxt[v] = i
                heapq.heappush(heap, (nd, v))
    return dist, nxt


def shortest_path(g: NetGraph, weight: np.ndarray) -> list[int]:
    dist, nxt = dijkstra(g, weight)
    if not np.isfinite(dist[g.source]):
        raise GraphError("sink unreachable")
    path = [g.source]
    while path[-1] != g.sink:
        path.append(int(g.dst[nxt[path[-1]]]))
    return path


def enumerate_paths(g: NetGraph, start: int | None = None, cap: int = 100_000) -> list[list[int]]:
    """All loop-free start->sink paths in lexicographic node order."""
    start = g.source if start is None else start
    out: list[list[int]] = []
    path = [start]
    on_path = {start}

    def dfs(v):
        if v == g.sink:
            out.append(list(path))
            if len(out) > cap:
                raise EnumerationCapError(f"more than {cap} loop-free paths")
            return
        for i in g.out(v):
            w = int(g.dst[i])
            if w in on_path:
                continue
            on_path.add(w)
            path.append(w)
            dfs(w)
            path.pop()
            on_path.discard(w)

    dfs(start)
    return out
