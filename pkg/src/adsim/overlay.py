"""Prefix-routed DHT ring over a physical edge topology.

Nodes carry 128-bit ids rendered as 32 hex digits. Each live node keeps

* a routing table: row ``r`` column ``c`` holds the physically nearest node
  that shares exactly ``r`` leading digits with the owner and has digit ``c``
  at position ``r``;
* a leaf set: the ``leaf_capacity`` physically nearest live nodes, used for
  operator overflow, scale-out targets and checkpoint fragment holders;
* a numeric neighbourhood (``ring_half`` ids on either side on the ring),
  which serves the terminal routing hops. It is read straight off the sorted
  live-id ring, i.e. the state a converged neighbourhood protocol would hold.

Tables are stored by node index in dense numpy arrays so that 10^4-node rings
build in seconds.
"""

from __future__ import annotations

import bisect
import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .simkernel import Rng

ID_BITS = 128
RING = 1 << ID_BITS


class OverlayError(Exception):
    pass


class ConflictError(OverlayError):
    pass


class EmptyRingError(OverlayError):
    pass


class RoutingLoopError(OverlayError):
    """A route revisited a node; the tables are inconsistent."""


def hash128(data: bytes) -> int:
    return int.from_bytes(hashlib.md5(data).digest(), "big")


def node_id_for(name: str) -> int:
    return hash128(name.encode("utf-8"))


def key_for_node(node_id: int) -> int:
    """Rendezvous key of a node: the same 128-bit hash over its id bytes."""
    return hash128(node_id.to_bytes(16, "big"))


def format_id(x: int) -> str:
    return f"{x:032x}"


def digit(x: int, i: int, b: int = 4) -> int:
    return (x >> (ID_BITS - b * (i + 1))) & ((1 << b) - 1)


def shared_prefix_len(x: int, y: int, b: int = 4) -> int:
    if x == y:
        return ID_BITS // b
    return (ID_BITS - (x ^ y).bit_length()) // b


def ring_distance(x: int, y: int) -> int:
    d = abs(x - y)
    return min(d, RING - d)


def hop_bound(n: int, b: int = 4, slack: int = 2) -> int:
    if n <= 1:
        return 0
    return math.ceil(math.log(n, 2 ** b) - 1e-12) + slack


@dataclass
class NodeRecord:
    name: str
    zone: int
    capacity: float
    x: float
    y: float

    @property
    def node_id(self) -> int:
        return node_id_for(self.name)


@dataclass
class EdgeTopology:
    """Physical layout: node records plus an rtt model over their positions."""

    nodes: list[NodeRecord]
    rtt_base_ms: float = 0.5
    rtt_per_km_ms: float = 0.02
    link_rate_mbps: float = 100.0

    def __post_init__(self):
        self.by_name = {}
        for rec in self.nodes:
            if rec.name in self.by_name:
                raise ConflictError(f"duplicate node name {rec.name!r}")
            self.by_name[rec.name] = rec

    def rtt_ms(self, a: NodeRecord, b: NodeRecord) -> float:
        return self.rtt_base_ms + self.rtt_per_km_ms * math.hypot(a.x - b.x, a.y - b.y)

    @classmethod
    def synthetic(cls, n: int, seed: int = 0, zones: int = 20, extent_km: float = 1000.0,
                  **kw) -> "EdgeTopology":
        rng = Rng(seed).fork("topology")
        g = rng.gen
        xs = g.uniform(0.0, extent_km, n)
        ys = g.uniform(0.0, extent_km, n)
        caps = g.integers(1, 17, n)
        gx = max(1, int(math.floor(math.sqrt(zones))))
        while zones % gx:
            gx -= 1
        gy = zones // gx
        nodes = []
        for i in range(n):
            zx = min(gx - 1, int(xs[i] / extent_km * gx))
            zy = min(gy - 1, int(ys[i] / extent_km * gy))
            nodes.append(NodeRecord(f"node-{i:05d}", zy * gx + zx, float(caps[i]),
                                    float(xs[i]), float(ys[i])))
        return cls(nodes, **kw)

    @classmethod
    def from_csv(cls, path: str | Path, **kw) -> "EdgeTopology":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        nodes = [NodeRecord(r["node_name"], int(r["zone_id"]), float(r["capacity"]),
                            float(r["x"]), float(r["y"])) for r in rows]
        return cls(nodes, **kw)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_name", "zone_id", "capacity", "x", "y"])
            for r in self.nodes:
                w.writerow([r.name, r.zone, repr(r.capacity), repr(r.x), repr(r.y)])


@dataclass(frozen=True)
class Proximity:
    hops: int
    rtt_ms: float
    congestion: float


@dataclass
class RoutingTable:
    owner: int
    rows: list[list[tuple[int, Proximity] | None]]


@dataclass
class LeafSet:
    owner: int
    members: list[int]
    distances_km: list[float]


@dataclass
class RepairReport:
    failed: int
    entries_recomputed: int
    leaf_entries_repaired: int
    survivors_touched: int
    time_ms: float


class Overlay:
    def __init__(self, topology: EdgeTopology, b: int = 4, leaf_capacity: int = 24,
                 ring_half: int = 8, heartbeat_ms: float = 200.0):
        if ID_BITS % b:
            raise ValueError("b must divide 128")
        self.topo = topology
        self.b = b
        self.n_rows = ID_BITS // b
        self.n_cols = 1 << b
        self.leaf_capacity = leaf_capacity
        self.ring_half = ring_half
        self.heartbeat_ms = heartbeat_ms

        self.ids: list[int] = []
        self.records: list[NodeRecord] = []
        self.index_of: dict[int, int] = {}
        self.sorted_ids: list[int] = []
        self.sorted_idx: list[int] = []
        self.leaf: list[list[int]] = []
        self._cap = 0
        self.alive = np.zeros(0, dtype=bool)
        self.pos = np.zeros((0, 2))
        self.capacity = np.zeros(0)
        self.digits = np.zeros((0, self.n_rows), dtype=np.uint8)
        self.table = np.full((0, self.n_rows, self.n_cols), -1, dtype=np.int32)
        self.leaf_worst = np.zeros(0)

    # storage ---------------------------------------------------------------

    def _grow(self, need: int) -> None:
        if need <= self._cap:
            return
        cap = max(need, 2 * self._cap, 16)
        extra = cap - self._cap

        def pad(a, fill, shape_tail=()):
            return np.concatenate([a, np.full((extra,) + shape_tail, fill, dtype=a.dtype)])

        self.alive = pad(self.alive, False)
        self.pos = pad(self.pos, 0.0, (2,))
        self.capacity = pad(self.capacity, 0.0)
        self.digits = pad(self.digits, 0, (self.n_rows,))
        self.table = pad(self.table, -1, (self.n_rows, self.n_cols))
        self.leaf_worst = pad(self.leaf_worst, np.inf)
        self._cap = cap

    def _add_record(self, rec: NodeRecord) -> int:
        nid = rec.node_id
        if nid in self.index_of:
            raise ConflictError(f"node {rec.name!r} already joined (id {format_id(nid)})")
        i = len(self.ids)
        self._grow(i + 1)
        self.ids.append(nid)
        self.records.append(rec)
        self.index_of[nid] = i
        self.leaf.append([])
        self.alive[i] = True
        self.pos[i] = (rec.x, rec.y)
        self.capacity[i] = rec.capacity
        self.digits[i] = [digit(nid, r, self.b) for r in range(self.n_rows)]
        p = bisect.bisect_left(self.sorted_ids, nid)
        self.sorted_ids.insert(p, nid)
        self.sorted_idx.insert(p, i)
        return i

    # basic queries ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self.sorted_ids)

    def live_ids(self) -> list[int]:
        return list(self.sorted_ids)

    def is_live(self, node_id: int) -> bool:
        i = self.index_of.get(node_id)
        return i is not None and bool(self.alive[i])

    def record(self, node_id: int) -> NodeRecord:
        return self.records[self.index_of[node_id]]

    def _d2(self, i: int, j: int) -> float:
        a, b = self.records[i], self.records[j]
        dx, dy = a.x - b.x, a.y - b.y
        return dx * dx + dy * dy

    def _prox_key(self, owner: int, other: int) -> tuple:
        return (self._d2(owner, other), -self.records[other].capacity, self.ids[other])

    def rtt_ms(self, a: int, b: int) -> float:
        """Round-trip time between two node ids."""
        return self.topo.rtt_ms(self.record(a), self.record(b))

    def proximity(self, owner: int, other: int) -> Proximity:
        return Proximity(1, self.rtt_ms(owner, other), 0.0)

    def physical_distance(self, a: int, b: int) -> float:
        return math.sqrt(self._d2(self.index_of[a], self.index_of[b]))

    def routing_table(self, node_id: int) -> RoutingTable:
        i = self.index_of[node_id]
        rows = []
        for r in range(self.n_rows):
            row = []
            for c in range(self.n_cols):
                e = int(self.table[i, r, c])
                row.append(None if e < 0 else (self.ids[e], self.proximity(node_id, self.ids[e])))
            rows.append(row)
        return RoutingTable(node_id, rows)

    def leaf_set(self, node_id: int) -> LeafSet:
        i = self.index_of[node_id]
        members = [self.ids[j] for j in self.leaf[i]]
        return LeafSet(node_id, members, [math.sqrt(self._d2(i, j)) for j in self.leaf[i]])

    def leaf_members(self, node_id: int) -> list[int]:
        return [self.ids[j] for j in self.leaf[self.index_of[node_id]]]

    def _prefix_range(self, prefix: int, ndigits: int) -> tuple[int, int]:
        shift = ID_BITS - self.b * ndigits
        lo = prefix << shift
        hi = (prefix + 1) << shift
        return bisect.bisect_left(self.sorted_ids, lo), bisect.bisect_left(self.sorted_ids, hi)

    def _ring_members(self, nid: int) -> list[int]:
        n = len(self.sorted_ids)
        if n - 1 <= 2 * self.ring_half:
            return [x for x in self.sorted_ids if x != nid]
        p = bisect.bisect_left(self.sorted_ids, nid)
        return [self.sorted_ids[(p + d) % n] for d in range(-self.ring_half, self.ring_half + 1) if d]

    def _in_ring_range(self, nid: int, key: int) -> bool:
        n = len(self.sorted_ids)
        if n - 1 <= 2 * self.ring_half:
            return True
        p = bisect.bisect_left(self.sorted_ids, nid)
        lo = self.sorted_ids[(p - self.ring_half) % n]
        hi = self.sorted_ids[(p + self.ring_half) % n]
        return (key - lo) % RING <= (hi - lo) % RING

    def closest_live(self, key: int) -> int:
        """Brute-force numerically closest live node (ties -> lower id)."""
        if not self.sorted_ids:
            raise EmptyRingError("ring is empty")
        n = len(self.sorted_ids)
        p = bisect.bisect_left(self.sorted_ids, key)
        cands = {self.sorted_ids[p % n], self.sorted_ids[(p - 1) % n]}
        return min(cands, key=lambda x: (ring_distance(x, key), x))

    # construction ----------------------------------------------------------

    @classmethod
    def build(cls, topology: EdgeTopology, names: Iterable[str] | None = None, **kw) -> "Overlay":
        """Bring up every named node at once with converged tables."""
        ov = cls(topology, **kw)
        recs = topology.nodes if names is None else [topology.by_name[n] for n in names]
        for rec in recs:
            ov._add_record(rec)
        ov._bulk_tables()
        ov._bulk_leaf_sets()
        return ov

    def _candidate_order(self, idx: np.ndarray) -> np.ndarray:
        # tie-break order inside a candidate set: capacity desc, id asc
        ids = [self.ids[i] for i in idx]
        return np.array(sorted(range(len(idx)), key=lambda k: (-self.capacity[idx[k]], ids[k])),
                        dtype=np.int64)

    def _bulk_tables(self) -> None:
        live = np.flatnonzero(self.alive[: len(self.ids)])
        self.table[live] = -1
        groups = [live]
        for r in range(self.n_rows):
            next_groups = []
            for g in groups:
                if len(g) < 2:
                    continue
                dig = self.digits[g, r]
                for c in range(self.n_cols):
                    sel = g[dig == c]
                    if len(sel) == 0:
                        continue
                    if len(sel) > 1:
                        next_groups.append(sel)
                    owners = g[dig != c]
                    if len(owners) == 0:
                        continue
                    cand = sel[self._candidate_order(sel)]
                    cpos = self.pos[cand]
                    for start in range(0, len(owners), 2048):
                        chunk = owners[start:start + 2048]
                        d = self.pos[chunk][:, None, :] - cpos[None, :, :]
                        d2 = np.einsum("ijk,ijk->ij", d, d)
                        self.table[chunk, r, c] = cand[np.argmin(d2, axis=1)]
            if not next_groups:
                break
            groups = next_groups

    def _bulk_leaf_sets(self) -> None:
        live = np.flatnonzero(self.alive[: len(self.ids)])
        k = min(self.leaf_capacity, len(live) - 1)
        for i in live:
            self.leaf[i] = []
            self.leaf_worst[i] = np.inf
        if k <= 0:
            return
        tree = cKDTree(self.pos[live])
        kq = min(len(live), k + 4)
        dist, nb = tree.query(self.pos[live], k=kq)
        if kq == 1:
            dist, nb = dist[:, None], nb[:, None]
        for row, i in enumerate(live):
            members = [int(live[j]) for j in nb[row] if live[j] != i]
            members.sort(key=lambda j: self._prox_key(i, j))
            self.leaf[i] = members[:k]
            self._set_worst(i)

    def _best_among(self, owner: int, cand: np.ndarray) -> int:
        if len(cand) == 0:
            return -1
        d = self.pos[cand] - self.pos[owner]
        d2 = np.einsum("ij,ij->i", d, d)
        ties = cand[d2 == d2.min()]
        if len(ties) == 1:
            return int(ties[0])
        return min((int(j) for j in ties), key=lambda j: self._prox_key(owner, j))

    def _best_for_cell(self, owner: int, r: int, c: int) -> int:
        nid = self.ids[owner]
        prefix = (nid >> (ID_BITS - self.b * r)) if r else 0
        lo, hi = self._prefix_range((prefix << self.b) | c, r + 1)
        return self._best_among(owner, np.array(self.sorted_idx[lo:hi], dtype=np.int64))

    def join(self, name: str) -> int:
        """Add one node; returns its id. Peers' tables absorb the newcomer."""
        if name not in self.topo.by_name:
            raise OverlayError(f"unknown node {name!r}")
        x = self._add_record(self.topo.by_name[name])
        xid = self.ids[x]
        # own routing table
        for r in range(self.n_rows):
            lo, hi = self._prefix_range(xid >> (ID_BITS - self.b * (r + 1)), r + 1)
            for c in range(self.n_cols):
                if c != self.digits[x, r]:
                    self.table[x, r, c] = self._best_for_cell(x, r, c)
            if hi - lo <= 1:
                break
        # peers
        others = [j for j in self.sorted_idx if j != x]
        if others:
            arr = np.array(others)
            mism = self.digits[arr] != self.digits[x]
            rows = np.argmax(mism, axis=1)
            cols = self.digits[x, rows].astype(np.int64)
            cur = self.table[arr, rows, cols]
            dx = self.pos[arr] - self.pos[x]
            d_new = np.einsum("ij,ij->i", dx, dx)
            dc = self.pos[arr] - self.pos[np.maximum(cur, 0)]
            d_cur = np.where(cur >= 0, np.einsum("ij,ij->i", dc, dc), np.inf)
            for t in np.flatnonzero(d_new <= d_cur):
                y, c0 = int(arr[t]), int(cur[t])
                if c0 < 0 or self._prox_key(y, x) < self._prox_key(y, c0):
                    self.table[y, rows[t], cols[t]] = x
        # leaf sets
        k = min(self.leaf_capacity, len(others))
        if others:
            near = arr[np.argsort(d_new, kind="stable")[: k + 8]]
            near = sorted((int(j) for j in near), key=lambda j: self._prox_key(x, j))
            self.leaf[x] = near[:k]
            self._set_worst(x)
            for t in np.flatnonzero(d_new <= self.leaf_worst[arr]):
                self._leaf_offer(int(arr[t]), x)
        return xid

    def _leaf_offer(self, y: int, x: int) -> bool:
        members = self.leaf[y]
        if x in members or x == y:
            return False
        kx = self._prox_key(y, x)
        if len(members) >= self.leaf_capacity:
            if not kx < self._prox_key(y, members[-1]):
                return False
            members.pop()
        keys = [self._prox_key(y, j) for j in members]
        members.insert(bisect.bisect_left(keys, kx), x)
        self._set_worst(y)
        return True

    def _set_worst(self, y: int) -> None:
        # offers are only worth checking when closer than the current worst member
        members = self.leaf[y]
        full = len(members) >= self.leaf_capacity
        self.leaf_worst[y] = self._d2(y, members[-1]) if full else np.inf

    # failure and repair ----------------------------------------------------

    def fail_nodes(self, victims: Iterable[int]) -> RepairReport:
        victims = sorted(set(victims))
        for v in victims:
            if not self.is_live(v):
                raise OverlayError(f"{format_id(v)} is not a live node")
        if victims and len(victims) >= len(self.sorted_ids):
            raise EmptyRingError("failing every node would leave an empty ring")
        if not victims:
            return RepairReport(0, 0, 0, 0, 0.0)
        dead = [self.index_of[v] for v in victims]
        for i in dead:
            self.alive[i] = False
            p = bisect.bisect_left(self.sorted_ids, self.ids[i])
            self.sorted_ids.pop(p)
            self.sorted_idx.pop(p)
            self.table[i] = -1
        live = np.array(self.sorted_idx)
        n_ids = len(self.ids)

        # repair time per survivor: parallel queries, so the slowest round trip
        per_node_ms: dict[int, float] = {}

        tbl = self.table[live]
        ref = tbl >= 0
        bad = np.zeros_like(ref)
        bad[ref] = ~self.alive[:n_ids][tbl[ref]]
        rows_idx, r_idx, c_idx = np.nonzero(bad)
        entries = 0
        for row, r, c in zip(rows_idx, r_idx, c_idx):
            y = int(live[row])
            new = self._best_for_cell(y, int(r), int(c))
            self.table[y, r, c] = new
            entries += 1
            # the replacement is learned from a same-row peer (or the leaf set)
            helper = self._row_helper(y, int(r)) if new < 0 else new
            if helper >= 0:
                t = self.topo.rtt_ms(self.records[y], self.records[helper])
                per_node_ms[y] = max(per_node_ms.get(y, 0.0), t)

        leaf_repairs = 0
        dead_set = set(dead)
        for y in live:
            y = int(y)
            if not dead_set.intersection(self.leaf[y]):
                continue
            keep = [j for j in self.leaf[y] if j not in dead_set]
            want = min(self.leaf_capacity, len(live) - 1)
            pool = set()
            for j in keep:
                pool.update(m for m in self.leaf[j] if self.alive[m])
            pool.discard(y)
            pool.difference_update(keep)
            missing = want - len(keep)
            fill = sorted(pool, key=lambda j: self._prox_key(y, j))[:missing]
            if len(fill) < missing:
                rest = [j for j in live if j != y and j not in keep and j not in fill]
                rest.sort(key=lambda j: self._prox_key(y, int(j)))
                fill += [int(j) for j in rest[: missing - len(fill)]]
            leaf_repairs += len(fill)
            self.leaf[y] = sorted(keep + fill, key=lambda j: self._prox_key(y, j))
            self._set_worst(y)
            if keep:
                t = max(self.topo.rtt_ms(self.records[y], self.records[j]) for j in keep[:4])
                per_node_ms[y] = max(per_node_ms.get(y, 0.0), t)

        time_ms = self.heartbeat_ms + (max(per_node_ms.values()) if per_node_ms else 0.0)
        return RepairReport(len(victims), entries, leaf_repairs, len(per_node_ms), time_ms)

    def _row_helper(self, y: int, r: int) -> int:
        for e in self.table[y, r]:
            if e >= 0:
                return int(e)
        return self.leaf[y][0] if self.leaf[y] else -1

    # routing ---------------------------------------------------------------

    def _next_hop(self, cur: int, key: int) -> int | None:
        if cur == key:
            return None
        if self._in_ring_range(cur, key):
            ring = self._ring_members(cur)
            best = min(ring + [cur], key=lambda x: (ring_distance(x, key), x))
            return None if best == cur else best
        i = self.index_of[cur]
        l = shared_prefix_len(cur, key, self.b)
        e = int(self.table[i, l, digit(key, l, self.b)])
        if e >= 0:
            return self.ids[e]
        # rare case: any known node at least as good in prefix and numerically closer
        d_cur = ring_distance(cur, key)
        known = {self.ids[j] for j in self.table[i].ravel() if j >= 0}
        known.update(self._ring_members(cur))
        known.update(self.ids[j] for j in self.leaf[i])
        better = [t for t in known
                  if shared_prefix_len(t, key, self.b) >= l and ring_distance(t, key) < d_cur]
        if not better:
            return None
        return min(better, key=lambda t: (ring_distance(t, key), t))

    def route(self, source: int, key: int) -> list[int]:
        if not self.sorted_ids:
            raise EmptyRingError("ring is empty")
        if not self.is_live(source):
            raise OverlayError(f"{format_id(source)} is not live")
        path = [source]
        seen = {source}
        cur = source
        while True:
            nxt = self._next_hop(cur, key)
            if nxt is None:
                return path
            if nxt in seen:
                raise RoutingLoopError(f"route to {format_id(key)} revisited {format_id(nxt)}")
            seen.add(nxt)
            path.append(nxt)
            cur = nxt

    def next_hop_candidates(self, at: int, key: int) -> list[int]:
        """Forwarders that make progress toward ``key``, best proximity first.

        Order: rtt ascending, capacity descending, id ascending.
        """
        if at == key:
            return []
        i = self.index_of[at]
        l = shared_prefix_len(at, key, self.b)
        d_at = ring_distance(at, key)
        cands = set()
        e = int(self.table[i, l, digit(key, l, self.b)])
        if e >= 0:
            cands.add(self.ids[e])
        for m in self._ring_members(at) + [self.ids[j] for j in self.leaf[i]]:
            lm = shared_prefix_len(m, key, self.b)
            if lm > l or (lm == l and ring_distance(m, key) < d_at):
                cands.add(m)
        return sorted(cands, key=lambda m: (self.rtt_ms(at, m), -self.record(m).capacity, m))

    # invariant scans -------------------------------------------------------

    def check_prefix_invariant(self) -> int:
        """Assert every table entry sits in the right cell; returns entries checked."""
        live = np.array([self.index_of[x] for x in self.sorted_ids])
        checked = 0
        for r in range(self.n_rows):
            t = self.table[live, r, :]
            owners, cols = np.nonzero(t >= 0)
            if len(owners) == 0:
                continue
            ent = t[owners, cols]
            o = live[owners]
            if r:
                assert np.all(self.digits[ent, :r] == self.digits[o, :r]), f"row {r} prefix mismatch"
            assert np.all(self.digits[ent, r] == cols), f"row {r} column mismatch"
            assert np.all(self.digits[o, r] != cols), f"row {r} holds owner's own digit"
            checked += len(ent)
        return checked

    def check_closure(self) -> None:
        """Assert no table or leaf set references a dead node."""
        live = [self.index_of[x] for x in self.sorted_ids]
        tbl = self.table[live]
        refs = tbl[tbl >= 0]
        assert np.all(self.alive[refs]), "routing table references a dead node"
        for i in live:
            assert all(self.alive[j] for j in self.leaf[i]), "leaf set references a dead node"
            assert i not in self.leaf[i]
            assert len(self.leaf[i]) == min(self.leaf_capacity, len(live) - 1)
