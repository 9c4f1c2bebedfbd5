"""Routing learners over a NetGraph and the per-step API they share.

Delays are in milliseconds: one transmission attempt on a link costs its
base delay, and a packet needs a geometric number of attempts per link.
Learners know base delays but not success rates; the learning signal is
the attempt count. "Time slot" tau is the global attempt counter plus one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..simkernel import Rng, SimClock
from . import kernels as K
from .graph import NetGraph, enumerate_paths, shortest_path


class StuckError(RuntimeError):
    pass


class PathologicalLinkError(RuntimeError):
    pass


@dataclass
class BanditConfig:
    C: float = 0.2
    K: int = 1000
    tol: float = 1e-9
    hop_limit: int | None = None  # None = all hops
    L: float = 1.0
    path_cap: int = 100_000
    cost_scale: str = "delay"  # "delay": base * omega; "unit": omega alone

    def __post_init__(self):
        if self.cost_scale not in ("delay", "unit"):
            raise ValueError(f"cost_scale must be 'delay' or 'unit', got {self.cost_scale!r}")
        if not 0.0 < self.C <= 1.0:
            raise ValueError(f"exploration factor C must lie in (0, 1], got {self.C}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.hop_limit is not None and self.hop_limit < 1:
            raise ValueError("hop_limit must be >= 1 or None")
        if self.L <= 0:
            raise ValueError("L must be positive")


# policy kinds ---------------------------------------------------------------

@dataclass(frozen=True)
class AgileDart:
    C: float | None = None
    hop_limit: int | None = None
    name: str = "agiledart"


@dataclass(frozen=True)
class EndToEnd:
    L: float = 1.0
    name: str = "end_to_end"

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("L must be positive")


@dataclass(frozen=True)
class NextHop:
    name: str = "next_hop"


@dataclass(frozen=True)
class Optimal:
    name: str = "optimal"


PolicyKind = AgileDart | EndToEnd | NextHop | Optimal


def policy_from_name(name: str, cfg: BanditConfig) -> PolicyKind:
    if name == "agiledart":
        return AgileDart(cfg.C, cfg.hop_limit)
    if name == "end_to_end":
        return EndToEnd(cfg.L)
    if name == "next_hop":
        return NextHop()
    if name == "optimal":
        return Optimal()
    raise ValueError(f"unknown policy {name!r}")


# state ------------------------------------------------------------------------

@dataclass
class NetClock(SimClock):
    """Millisecond clock that also counts transmission attempts."""

    now: float = 0.0
    attempts: int = 0

    @property
    def tau(self) -> int:
        return self.attempts + 1


@dataclass
class LinkStats:
    s: np.ndarray
    t: np.ndarray

    @classmethod
    def empty(cls, m: int) -> "LinkStats":
        return cls(np.zeros(m, dtype=np.int64), np.zeros(m, dtype=np.int64))

    @property
    def theta_hat(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.t > 0, self.s / np.maximum(self.t, 1), 0.0)

    def record(self, link: int, attempts: int) -> None:
        self.t[link] += attempts
        self.s[link] += 1


@dataclass
class NextHopStats:
    dsum: np.ndarray
    dcnt: np.ndarray
    node_visits: np.ndarray

    @classmethod
    def empty(cls, g: NetGraph) -> "NextHopStats":
        return cls(np.zeros(g.n_links), np.zeros(g.n_links, dtype=np.int64),
                   np.zeros(g.n_nodes, dtype=np.int64))

    def mean_delay(self, link: int) -> float:
        return self.dsum[link] / self.dcnt[link] if self.dcnt[link] else K.UNVISITED_DELAY


@dataclass
class PathStats:
    paths: list[list[int]]
    p_ptr: np.ndarray
    p_links: np.ndarray
    p_n: np.ndarray
    p_sum: np.ndarray
    link_n: np.ndarray

    @classmethod
    def for_graph(cls, g: NetGraph, cap: int = 100_000) -> "PathStats":
        paths = enumerate_paths(g, cap=cap)
        links = [g.path_links(p) for p in paths]
        ptr = np.zeros(len(paths) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(x) for x in links])
        flat = np.array([i for x in links for i in x], dtype=np.int64)
        return cls(paths, ptr, flat, np.zeros(len(paths), dtype=np.int64),
                   np.zeros(len(paths)), np.zeros(g.n_links, dtype=np.int64))


# per-step api -----------------------------------------------------------------

def kl_bernoulli(p: float, u: float) -> float:
    if not (0.0 <= p <= 1.0 and 0.0 <= u <= 1.0):
        raise ValueError("KL arguments must lie in [0, 1]")
    return float(K.kl_bernoulli(p, u))


def omega(s_tau: int, t_tau: int, tau: int, C: float, tol: float = 1e-9) -> float:
    """Exploration-adjusted transmission cost 1/u* of one link (>= 1)."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if t_tau == 0:
        return 1.0
    budget = C * math.log(tau) if tau > 1 else 0.0
    u = K.u_star(s_tau / t_tau, t_tau, budget, tol)
    return math.inf if u <= 0.0 else 1.0 / u


def cost_scale(g: NetGraph, mode: str = "delay") -> np.ndarray:
    return g.base if mode == "delay" else np.ones(g.n_links)


def link_weights(g: NetGraph, stats: LinkStats, tau: int, C: float, tol: float = 1e-9,
                 mode: str = "delay") -> np.ndarray:
    om = np.empty(g.n_links)
    K.omega_all(stats.s, stats.t, tau, C, tol, om)
    return cost_scale(g, mode) * om


def long_term_cost_all(g: NetGraph, weight: np.ndarray, dest: int | None = None,
                       hop_limit: int | None = None) -> np.ndarray:
    dest = g.sink if dest is None else dest
    J = np.empty(g.n_nodes)
    K.long_term_costs(g.n_nodes, g.out_ptr, g.dst, g.in_ptr, g.in_links, g.src, weight,
                      dest, hop_limit or 0, J)
    return J


def long_term_cost(g: NetGraph, stats: LinkStats, w: int, dest: int, tau: int, C: float,
                   hop_limit: int | None = None, tol: float = 1e-9, mode: str = "delay") -> float:
    """Minimum exploration-adjusted cost over loop-free w->dest paths."""
    weight = link_weights(g, stats, tau, C, tol, mode)
    return float(long_term_cost_all(g, weight, dest, hop_limit)[w])


def step_agiledart(g: NetGraph, stats: LinkStats, at: int, dest: int, tau: int,
                   cfg: BanditConfig, visited: np.ndarray | None = None) -> int:
    """Link out of ``at`` minimising link cost plus downstream long-term cost."""
    if at == dest:
        raise ValueError("already at the destination")
    weight = link_weights(g, stats, tau, cfg.C, cfg.tol, cfg.cost_scale)
    J = long_term_cost_all(g, weight, dest, cfg.hop_limit)
    if visited is None:
        visited = np.zeros(g.n_nodes, dtype=bool)
    i = K.agiledart_choose(at, g.out_ptr, g.dst, weight, J, visited)
    if i < 0:
        raise StuckError(f"no finite-cost next hop at {g.labels[at]}")
    return int(i)


def step_nexthop(g: NetGraph, stats: NextHopStats, at: int, dest: int, tau: int, rng: Rng,
                 visited: np.ndarray | None = None) -> int:
    """Epsilon-greedy next hop with threshold 1 - 1/N(at)."""
    if at == dest:
        raise ValueError("already at the destination")
    if visited is None:
        visited = np.zeros(g.n_nodes, dtype=bool)
    stats.node_visits[at] += 1
    u_eps = rng.random()
    threshold = 1.0 - 1.0 / stats.node_visits[at]
    u_pick = rng.random() if not u_eps < threshold else 0.0
    i, _ = K.nexthop_choose(at, g.out_ptr, g.dst, stats.dsum, stats.dcnt, g.base, visited,
                            stats.node_visits[at], u_eps, u_pick)
    if i < 0:
        raise StuckError(f"node {g.labels[at]} has no outgoing link")
    return int(i)


def plan_end_to_end(g: NetGraph, stats: PathStats, tau: int, L: float) -> list[int]:
    """Path with the minimum lower confidence bound; unvisited paths first."""
    p = K.lcb_pick(stats.p_ptr, stats.p_links, stats.p_n, stats.p_sum, stats.link_n, tau, L)
    return stats.paths[int(p)]


def transmit(g: NetGraph, link: int, rng: Rng, clock: NetClock, stats: LinkStats | None = None) -> int:
    attempts = int(K.geometric_from_uniform(rng.random(), g.theta[link]))
    if attempts > K.MAX_ATTEMPTS:
        raise PathologicalLinkError(f"link {link} needed {attempts} attempts")
    clock.now += attempts * g.base[link]
    clock.attempts += attempts
    if stats is not None:
        stats.record(link, attempts)
    return attempts


@dataclass
class PolicyState:
    """Learning state of one policy on one graph."""

    policy: PolicyKind
    cfg: BanditConfig
    links: LinkStats
    nexthop: NextHopStats | None = None
    paths: PathStats | None = None
    optimal_path: list[int] | None = None

    @classmethod
    def fresh(cls, g: NetGraph, policy: PolicyKind, cfg: BanditConfig) -> "PolicyState":
        st = cls(policy, cfg, LinkStats.empty(g.n_links))
        if isinstance(policy, NextHop):
            st.nexthop = NextHopStats.empty(g)
        elif isinstance(policy, EndToEnd):
            st.paths = PathStats.for_graph(g, cfg.path_cap)
        elif isinstance(policy, Optimal):
            st.optimal_path = optimal_path(g)
        return st

    def agiledart_cfg(self) -> BanditConfig:
        p = self.policy
        C = p.C if p.C is not None else self.cfg.C
        return replace(self.cfg, C=C, hop_limit=p.hop_limit)


def optimal_path(g: NetGraph) -> list[int]:
    return shortest_path(g, g.expected_delay)


def route_packet(g: NetGraph, state: PolicyState, rng: Rng, clock: NetClock) -> tuple[list[int], float]:
    """Send one packet source->sink; returns (node path, realised delay ms)."""
    pol = state.policy
    start = clock.now
    if isinstance(pol, (Optimal, EndToEnd)):
        if isinstance(pol, Optimal):
            path = state.optimal_path
        else:
            path = plan_end_to_end(g, state.paths, clock.tau, pol.L)
        delay = 0.0
        for i in g.path_links(path):
            a = transmit(g, i, rng, clock, state.links)
            delay += a * g.base[i]
            if state.paths is not None:
                state.paths.link_n[i] += 1
        if state.paths is not None:
            p = state.paths.paths.index(path)
            state.paths.p_n[p] += 1
            state.paths.p_sum[p] += delay
        return list(path), delay

    visited = np.zeros(g.n_nodes, dtype=bool)
    v = g.source
    visited[v] = True
    path = [v]
    delay = 0.0
    cfg = state.agiledart_cfg() if isinstance(pol, AgileDart) else state.cfg
    max_hops = 10 * g.n_nodes
    while v != g.sink:
        if len(path) > max_hops:
            raise StuckError("packet exceeded the hop budget")
        if isinstance(pol, AgileDart):
            i = step_agiledart(g, state.links, v, g.sink, clock.tau, cfg, visited)
        else:
            i = step_nexthop(g, state.nexthop, v, g.sink, clock.tau, rng, visited)
        a = transmit(g, i, rng, clock, state.links)
        d = a * g.base[i]
        delay += d
        if state.nexthop is not None:
            state.nexthop.dsum[i] += d
            state.nexthop.dcnt[i] += 1
        v = int(g.dst[i])
        visited[v] = True
        path.append(v)
    assert clock.now - start >= 0
    return path, delay
