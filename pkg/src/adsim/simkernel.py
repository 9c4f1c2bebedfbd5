"""Deterministic discrete-event core shared by every simulator module.

Virtual time is an integer number of milliseconds. Randomness comes from
numpy's PCG64 bit generator; per-module substreams are derived from the
scenario seed plus a fixed text label, so adding a consumer never shifts
the draws another consumer sees.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class SchedulingError(ValueError):
    """Raised when an event is scheduled before the current virtual time."""


@dataclass
class SimClock:
    now: int = 0

    def advance_to(self, t: int) -> None:
        if t < self.now:
            raise SchedulingError(f"clock cannot move backwards ({t} < {self.now})")
        self.now = t


@dataclass(order=True)
class Event:
    at: int
    seq: int
    payload: Any = field(compare=False)
    cancelled: bool = field(default=False, compare=False)

    def cancel(self) -> None:
        self.cancelled = True


class EventQueue:
    """Priority queue ordered by (timestamp, insertion sequence)."""

    def __init__(self, clock: SimClock | None = None):
        self.clock = clock if clock is not None else SimClock()
        self._heap: list[Event] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return sum(1 for e in self._heap if not e.cancelled)

    def schedule(self, at: int, payload: Any) -> Event:
        at = int(at)
        if at < self.clock.now:
            raise SchedulingError(f"cannot schedule at t={at} before now={self.clock.now}")
        ev = Event(at, next(self._seq), payload)
        heapq.heappush(self._heap, ev)
        return ev

    def schedule_in(self, delay: int, payload: Any) -> Event:
        return self.schedule(self.clock.now + int(delay), payload)

    def peek_time(self) -> int | None:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0].at if self._heap else None

    def pop(self) -> Event:
        while True:
            ev = heapq.heappop(self._heap)
            if not ev.cancelled:
                return ev


def run_until(
    queue: EventQueue,
    deadline: int,
    handler: Callable[[Event], None] | None = None,
    trace: list | None = None,
) -> int:
    """Process every event with timestamp <= deadline; return how many ran.

    The handler receives each event after the clock has moved to its
    timestamp; it may schedule further events (including at ``now``). When no
    handler is given the payload itself is called if it is callable.
    """
    clock = queue.clock
    if deadline < clock.now:
        raise SchedulingError(f"deadline {deadline} is before now={clock.now}")
    count = 0
    while True:
        t = queue.peek_time()
        if t is None or t > deadline:
            break
        ev = queue.pop()
        clock.advance_to(ev.at)
        if trace is not None:
            trace.append((ev.at, ev.seq, repr(ev.payload)))
        if handler is not None:
            handler(ev)
        elif callable(ev.payload):
            ev.payload()
        count += 1
    return count


def trace_digest(trace: list) -> str:
    h = hashlib.sha256()
    for row in trace:
        h.update(repr(row).encode())
        h.update(b"\n")
    return h.hexdigest()


def label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "big")


class Rng:
    """Seeded PCG64 stream with labelled forks.

    ``fork(label)`` is a pure function of (root seed, path of labels), not of
    how many draws the parent has made.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self._path = _path
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_path)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def fork(self, label: str) -> "Rng":
        return Rng(self.seed, self._path + (label_key(label),))

    def random(self) -> float:
        return float(self.gen.random())

    def integers(self, low: int, high: int) -> int:
        return int(self.gen.integers(low, high))

    def uniform(self, low: float, high: float) -> float:
        return float(self.gen.uniform(low, high))

    def choice(self, seq):
        return seq[int(self.gen.integers(0, len(seq)))]

    def geometric(self, p: float) -> int:
        return int(self.gen.geometric(p))


def bernoulli(rng: Rng, p: float) -> bool:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    return rng.random() < p
