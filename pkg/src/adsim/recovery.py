"""Erasure-coded operator checkpoints and parallel state recovery.

Codes are systematic Reed-Solomon over GF(2^8): the generator is a
Vandermonde matrix on points 0..n-1 right-multiplied by the inverse of its
top m x m block, so the first m fragments are the raw state blocks and any
m rows stay invertible.
"""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import gf256
from .overlay import Overlay
from .simkernel import EventQueue

HEADER = struct.Struct(">QIB")  # original length, epoch, fragment index


class ErasureConfigError(ValueError):
    pass


class InsufficientFragments(ValueError):
    pass


class MixedEpochError(ValueError):
    pass


class UnrecoverableError(RuntimeError):
    def __init__(self, msg: str, report: "RecoveryReport"):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class ErasureConfig:
    m: int
    k: int

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise ErasureConfigError(f"m and k must be positive (m={self.m}, k={self.k})")
        if self.n > 255:
            raise ErasureConfigError(f"n = m + k = {self.n} exceeds the GF(256) limit of 255")

    @property
    def n(self) -> int:
        return self.m + self.k


@lru_cache(maxsize=None)
def generator(m: int, n: int) -> np.ndarray:
    V = gf256.vandermonde(n, m)
    G = gf256.mat_mul(V, gf256.mat_inv(V[:m]))
    G.setflags(write=False)
    return G


@dataclass(frozen=True)
class Fragment:
    index: int
    epoch: int
    length: int  # original state length in bytes
    data: np.ndarray  # uint8 block

    def to_bytes(self) -> bytes:
        return HEADER.pack(self.length, self.epoch, self.index) + self.data.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Fragment":
        length, epoch, index = HEADER.unpack_from(blob)
        return cls(index, epoch, length, np.frombuffer(blob, dtype=np.uint8, offset=HEADER.size))


def encode(state: bytes, cfg: ErasureConfig, epoch: int = 0) -> list[Fragment]:
    if len(state) == 0:
        raise ValueError("state must be non-empty")
    m, n = cfg.m, cfg.n
    size = -(-len(state) // m)
    buf = np.zeros(m * size, dtype=np.uint8)
    buf[: len(state)] = np.frombuffer(state, dtype=np.uint8)
    blocks = [buf[i * size:(i + 1) * size] for i in range(m)]
    G = generator(m, n)
    frags = [Fragment(i, epoch, len(state), blocks[i]) for i in range(m)]
    for j in range(m, n):
        frags.append(Fragment(j, epoch, len(state), gf256.combine(G[j], blocks)))
    return frags


def _pick(fragments: list[Fragment], cfg: ErasureConfig) -> list[Fragment]:
    if len({f.epoch for f in fragments}) > 1:
        raise MixedEpochError("fragments come from different checkpoint epochs")
    uniq = {}
    for f in fragments:
        if not 0 <= f.index < cfg.n:
            raise ValueError(f"fragment index {f.index} outside 0..{cfg.n - 1}")
        uniq.setdefault(f.index, f)
    if len(uniq) < cfg.m:
        raise InsufficientFragments(f"need {cfg.m} distinct fragments, got {len(uniq)}")
    # prefer raw blocks: they need no arithmetic
    return [uniq[i] for i in sorted(uniq)][: cfg.m]


def decode(fragments: list[Fragment], cfg: ErasureConfig) -> bytes:
    chosen = _pick(fragments, cfg)
    m = cfg.m
    length = chosen[0].length
    idx = [f.index for f in chosen]
    if idx == list(range(m)):
        data = [f.data for f in chosen]
    else:
        D = gf256.mat_inv(generator(m, cfg.n)[idx])
        blocks = [f.data for f in chosen]
        data = [gf256.combine(D[i], blocks) for i in range(m)]
    return np.concatenate(data)[:length].tobytes()


def regenerate(fragments: list[Fragment], lost: int, cfg: ErasureConfig) -> Fragment:
    """Rebuild fragment ``lost`` from any m others without decoding the state."""
    chosen = _pick([f for f in fragments if f.index != lost], cfg)
    G = generator(cfg.m, cfg.n)
    idx = [f.index for f in chosen]
    coef = gf256.mat_mul(G[lost:lost + 1], gf256.mat_inv(G[idx]))[0]
    return Fragment(lost, chosen[0].epoch, chosen[0].length,
                    gf256.combine(coef, [f.data for f in chosen]))


# checkpoints ----------------------------------------------------------------------

@dataclass
class StateCheckpoint:
    instance: str
    owner: int
    epoch: int
    holders: dict[int, int]  # fragment index -> holder NodeId
    fragments: dict[int, Fragment]
    state_size: int
    cfg: ErasureConfig
    leaf_snapshot: list[int] = field(default_factory=list)  # owner's leaf set, nearest first


def nearest_leaves(ov: Overlay, owner: int) -> list[int]:
    ls = ov.leaf_set(owner)
    return [nid for _, nid in sorted(zip(ls.distances_km, ls.members))]


def place_fragments(ov: Overlay, owner: int, cfg: ErasureConfig) -> list[int]:
    leaves = nearest_leaves(ov, owner)
    if len(leaves) < cfg.n:
        raise ErasureConfigError(f"leaf set has {len(leaves)} members but n = {cfg.n} holders are needed")
    return leaves[: cfg.n]


def take_checkpoint(ov: Overlay, owner: int, instance: str, state: bytes, cfg: ErasureConfig,
                    epoch: int = 0) -> StateCheckpoint:
    holders = place_fragments(ov, owner, cfg)
    frags = encode(state, cfg, epoch)
    return StateCheckpoint(instance, owner, epoch, {f.index: h for f, h in zip(frags, holders)},
                           {f.index: f for f in frags}, len(state), cfg, nearest_leaves(ov, owner))


@dataclass
class CheckpointSchedule:
    """Recurring checkpoints driven by the shared event queue."""

    ov: Overlay
    owner: int
    instance: str
    cfg: ErasureConfig
    state_fn: object  # callable(epoch) -> bytes
    interval_ms: int = 1000
    history: list[StateCheckpoint] = field(default_factory=list)

    def start(self, q: EventQueue) -> None:
        place_fragments(self.ov, self.owner, self.cfg)  # validate early
        q.schedule_in(self.interval_ms, lambda: self._tick(q))

    def _tick(self, q: EventQueue) -> None:
        epoch = len(self.history)
        self.history.append(take_checkpoint(self.ov, self.owner, self.instance,
                                            self.state_fn(epoch), self.cfg, epoch))
        q.schedule_in(self.interval_ms, lambda: self._tick(q))

    @property
    def latest(self) -> StateCheckpoint | None:
        return self.history[-1] if self.history else None


def checkpoint(ov: Overlay, owner: int, instance: str, state_fn, cfg: ErasureConfig, q: EventQueue,
               interval_ms: int = 1000) -> CheckpointSchedule:
    sched = CheckpointSchedule(ov, owner, instance, cfg, state_fn, interval_ms)
    sched.start(q)
    return sched


# recovery -------------------------------------------------------------------------

def transfer_ms(nbytes: float, rate_mbps: float) -> float:
    return nbytes * 8.0 / (rate_mbps * 1e6) * 1e3


def model_time(m: int, k: int, B: float) -> float:
    """Recovery time m*B/(m+k-1) for per-fragment transfer time B."""
    return m * B / (m + k - 1)


@dataclass
class RecoveryReport:
    instance: str
    restart_node: int | None
    fragments_fetched: int
    model_time_ms: float
    sim_time_ms: float
    success: bool
    state: bytes | None = None
    fallback: str | None = None


def recover(ov: Overlay, ckpt: StateCheckpoint | None, failed: int, stateful: bool = True,
            rate_mbps: float | None = None, instance: str = "") -> RecoveryReport:
    """Restart a failed instance nearby and pull its state in parallel.

    The restart node is the nearest live member of the failed node's leaf
    set. m live holders are fetched concurrently; the transfer takes as long
    as the slowest fetch (fragment bytes at the link rate plus rtt). A
    fragment already on the restart node costs nothing.
    """
    rate = rate_mbps if rate_mbps is not None else ov.topo.link_rate_mbps
    leaves = ckpt.leaf_snapshot if ckpt is not None else nearest_leaves(ov, failed)
    restart = next((x for x in leaves if x != failed and ov.is_live(x)), None)
    if restart is None:
        raise UnrecoverableError("no live node to restart on",
                                 RecoveryReport(instance, None, 0, 0.0, 0.0, False))
    if not stateful or ckpt is None:
        return RecoveryReport(instance or (ckpt.instance if ckpt else ""), restart, 0, 0.0, 0.0, True)
    cfg = ckpt.cfg
    frag_bytes = -(-ckpt.state_size // cfg.m)
    B = transfer_ms(frag_bytes, rate)
    model = model_time(cfg.m, cfg.k, B)
    live = [(i, h) for i, h in sorted(ckpt.holders.items()) if ov.is_live(h)]
    if len(live) < cfg.m:
        rep = RecoveryReport(ckpt.instance, restart, 0, model, 0.0, False, fallback="stateless-restart")
        raise UnrecoverableError(f"only {len(live)} of {cfg.n} holders alive, need {cfg.m}", rep)
    cost = lambda h: 0.0 if h == restart else B + ov.rtt_ms(h, restart)
    fetch = sorted(live, key=lambda ih: (cost(ih[1]), ih[0]))[: cfg.m]
    sim = max(cost(h) for _, h in fetch)
    state = decode([ckpt.fragments[i] for i, _ in fetch], cfg)
    return RecoveryReport(ckpt.instance, restart, cfg.m, model, sim, True, state)


def single_source_ms(ov: Overlay, state_size: int, src: int, dst: int, rate_mbps: float | None = None) -> float:
    rate = rate_mbps if rate_mbps is not None else ov.topo.link_rate_mbps
    return transfer_ms(state_size, rate) + ov.rtt_ms(src, dst)


def striped_regeneration(ov: Overlay, ckpt: StateCheckpoint, lost: int, newcomer: int,
                         rate_mbps: float | None = None, verify: bool = True) -> tuple[float, Fragment | None]:
    """Rebuild holder ``lost``'s fragment on ``newcomer`` from all survivors.

    The fragment is cut into h = n-1 stripes; stripe j is rebuilt from the
    survivors j..j+m-1 (mod h), so each survivor uploads m stripes and the
    traffic spreads evenly. Returns (simulated ms, rebuilt fragment).
    """
    rate = rate_mbps if rate_mbps is not None else ov.topo.link_rate_mbps
    cfg = ckpt.cfg
    survivors = [i for i in sorted(ckpt.holders) if i != lost]
    h = len(survivors)
    size = -(-ckpt.state_size // cfg.m)
    bounds = [size * j // h for j in range(h + 1)]
    sent = {i: 0 for i in survivors}
    pieces = []
    for j in range(h):
        group = [survivors[(j + t) % h] for t in range(cfg.m)]
        width = bounds[j + 1] - bounds[j]
        for i in group:
            sent[i] += width
        if verify:
            sl = [Fragment(i, ckpt.epoch, ckpt.state_size,
                           ckpt.fragments[i].data[bounds[j]:bounds[j + 1]]) for i in group]
            pieces.append(regenerate(sl, lost, cfg).data)
    sim = max(transfer_ms(sent[i], rate) + ov.rtt_ms(ckpt.holders[i], newcomer) for i in survivors)
    frag = None
    if verify:
        frag = Fragment(lost, ckpt.epoch, ckpt.state_size, np.concatenate(pieces))
    return sim, frag


def tolerates(cfg: ErasureConfig, dead: int) -> bool:
    return dead <= cfg.n - cfg.m


def subsets(n: int, m: int, limit: int | None, rng=None):
    """All m-subsets of range(n), or ``limit`` sampled ones when there are more."""
    total = math.comb(n, m)
    if limit is None or total <= limit:
        yield from itertools.combinations(range(n), m)
        return
    seen = set()
    while len(seen) < limit:
        s = tuple(sorted(int(x) for x in rng.gen.choice(n, size=m, replace=False)))
        if s not in seen:
            seen.add(s)
            yield s
