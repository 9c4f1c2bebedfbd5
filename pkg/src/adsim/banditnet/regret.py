"""Batch simulation of the routing learners and their regret ledgers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..simkernel import Rng
from . import kernels as K
from .graph import NetGraph
from .policies import (
    AgileDart, BanditConfig, EndToEnd, NextHop, Optimal, PathologicalLinkError, PathStats,
    PolicyKind, StuckError, cost_scale, optimal_path,
)


@dataclass
class PolicyRun:
    """One policy, one seed: per-packet paths and both regret ledgers."""

    policy: str
    paths: list[tuple[int, ...]]
    realized_delay: np.ndarray
    expected_delay: np.ndarray
    optimal_delay: float
    optimal_path: tuple[int, ...]

    @property
    def expected_regret(self) -> np.ndarray:
        return np.cumsum(self.expected_delay - self.optimal_delay)

    @property
    def realized_regret(self) -> np.ndarray:
        return np.cumsum(self.realized_delay - self.optimal_delay)

    @property
    def first_optimal_trial(self) -> int:
        """1-based index of the first packet sent along the optimal path; K+1 if never."""
        for k, p in enumerate(self.paths):
            if p == self.optimal_path:
                return k + 1
        return len(self.paths) + 1

    def modal_path(self, last: int | None = None) -> tuple[int, ...]:
        tail = self.paths if last is None else self.paths[-last:]
        counts: dict[tuple[int, ...], int] = {}
        for p in tail:
            counts[p] = counts.get(p, 0) + 1
        return min(counts, key=lambda p: (-counts[p], p))


def _uniforms(rng: Rng, n: int) -> np.ndarray:
    return rng.gen.random(n)


def simulate(g: NetGraph, policy: PolicyKind, cfg: BanditConfig, rng: Rng,
             paths: PathStats | None = None) -> PolicyRun:
    """Route cfg.K packets with compiled kernels.

    Consumes ``rng`` exactly as K calls of ``policies.route_packet`` would.
    """
    Kp = cfg.K
    n = g.n_nodes
    p_star = tuple(optimal_path(g))
    d_star = g.path_expected_delay(list(p_star))
    delays = np.zeros(Kp)
    out_paths: list[tuple[int, ...]]

    if isinstance(policy, (Optimal, EndToEnd)):
        if isinstance(policy, Optimal):
            links = np.array(g.path_links(list(p_star)), dtype=np.int64)
            u = _uniforms(rng, Kp * len(links))
            r = K.run_fixed_path(links, g.base, g.theta, Kp, u, 1, delays)
            out_paths = [p_star] * Kp
        else:
            ps = paths if paths is not None else PathStats.for_graph(g, cfg.path_cap)
            maxlen = int(np.max(np.diff(ps.p_ptr)))
            u = _uniforms(rng, Kp * maxlen)
            chosen = np.zeros(Kp, dtype=np.int64)
            r = K.run_end_to_end(ps.p_ptr, ps.p_links, g.base, g.theta, Kp, policy.L, u,
                                 ps.p_n.copy(), ps.p_sum.copy(), ps.link_n.copy(), 1, chosen, delays)
            tup = [tuple(p) for p in ps.paths]
            out_paths = [tup[c] for c in chosen]
    else:
        maxh = n - 1 if isinstance(policy, AgileDart) else 10 * n
        buf = np.zeros((Kp, maxh + 1), dtype=np.int64)
        plen = np.zeros(Kp, dtype=np.int64)
        if isinstance(policy, AgileDart):
            C = policy.C if policy.C is not None else cfg.C
            u = _uniforms(rng, Kp * (n - 1))
            s = np.zeros(g.n_links, dtype=np.int64)
            t = np.zeros(g.n_links, dtype=np.int64)
            r = K.run_agiledart(n, g.out_ptr, g.dst, g.in_ptr, g.in_links, g.src, g.base,
                                cost_scale(g, cfg.cost_scale), g.theta, g.source, g.sink, Kp, C,
                                cfg.tol, policy.hop_limit or 0, u, s, t, 1, buf, plen, delays)
        elif isinstance(policy, NextHop):
            u = _uniforms(rng, Kp * maxh * 3)
            r = K.run_nexthop(n, g.out_ptr, g.dst, g.base, g.theta, g.source, g.sink, Kp, u,
                              np.zeros(g.n_links), np.zeros(g.n_links, dtype=np.int64),
                              np.zeros(n, dtype=np.int64), 1, maxh, buf, plen, delays)
        else:
            raise TypeError(f"unknown policy {policy!r}")
        out_paths = [tuple(int(x) for x in buf[k, : plen[k]]) for k in range(Kp)]
    if r[0] == -1:
        raise StuckError(f"{policy.name} got stuck")
    if r[0] == -2:
        raise PathologicalLinkError(f"{policy.name} hit the attempt cap")

    cache: dict[tuple[int, ...], float] = {}
    exp = np.empty(Kp)
    for k, p in enumerate(out_paths):
        if p not in cache:
            cache[p] = g.path_expected_delay(list(p))
        exp[k] = cache[p]
    return PolicyRun(policy.name, out_paths, delays, exp, d_star, p_star)


@dataclass
class RegretLedger:
    """Per-policy regret averaged over seeds."""

    policy: str
    runs: list[PolicyRun]

    @property
    def mean_expected_regret(self) -> np.ndarray:
        return np.mean([r.expected_regret for r in self.runs], axis=0)

    @property
    def mean_realized_regret(self) -> np.ndarray:
        return np.mean([r.realized_regret for r in self.runs], axis=0)

    @property
    def final_expected_regret(self) -> float:
        return float(self.mean_expected_regret[-1])

    @property
    def mean_first_optimal(self) -> float:
        return float(np.mean([r.first_optimal_trial for r in self.runs]))


def run_regret(graph_for_seed, policies: list[PolicyKind], cfg: BanditConfig,
               seeds) -> dict[str, RegretLedger]:
    """Run each policy on each seed.

    ``graph_for_seed`` is a NetGraph (shared topology) or a callable seed ->
    NetGraph (fresh topology per seed). Every policy gets its own stream.
    """
    out = {p.name: [] for p in policies}
    if len(out) != len(policies):
        raise ValueError("policy names must be distinct")
    keys = list(out)
    for seed in seeds:
        g = graph_for_seed(seed) if callable(graph_for_seed) else graph_for_seed
        root = Rng(seed).fork("routing")
        paths = None
        for key, pol in zip(keys, policies):
            if isinstance(pol, EndToEnd) and paths is None:
                paths = PathStats.for_graph(g, cfg.path_cap)
            out[key].append(simulate(g, pol, cfg, root.fork(key), paths))
    return {k: RegretLedger(k, v) for k, v in out.items()}
