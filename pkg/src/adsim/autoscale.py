"""Instance-count solver and scale-up / scale-out decisions.

Health of an operator with x instances under input rate R and queue Q is
f(x) = alpha*x*r/R + (1-alpha)*x*q/Q, linear in x, so a secant step from
two distinct points lands on the root f = 1 directly.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .simkernel import Rng

EPS_X = 1e-6
BAND = (0.9, 1.1)
LINK_UTIL_THRESHOLD = 0.9
QUEUE_GROWTH_SAMPLES = 3


class DegenerateLoad(ValueError):
    pass


class FlatSecant(ArithmeticError):
    pass


class NoTargetError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhaseWorkload:
    R: float
    Q: float


@dataclass(frozen=True)
class InstanceCapacity:
    r: float = 30.0
    q: float = 10.0

    def __post_init__(self):
        if self.r <= 0 or self.q <= 0:
            raise ValueError("per-instance capacities must be positive")


@dataclass
class ScalerState:
    x_prev: float
    x_curr: float
    f_prev: float
    f_curr: float
    alpha: float = 0.5


def health_score(x: float, cap: InstanceCapacity, load: PhaseWorkload, alpha: float = 0.5) -> float:
    if x <= 0:
        raise ValueError("instance count must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if load.R <= 0 or load.Q <= 0:
        raise DegenerateLoad("zero input rate or queue: operator counts as healthy")
    return alpha * (x * cap.r / load.R) + (1.0 - alpha) * (x * cap.q / load.Q)


def exact_root(cap: InstanceCapacity, load: PhaseWorkload, alpha: float = 0.5) -> float:
    return 1.0 / (alpha * cap.r / load.R + (1.0 - alpha) * cap.q / load.Q)


def secant_step(st: ScalerState) -> float:
    if st.f_curr == st.f_prev:
        raise FlatSecant("equal health at both points")
    return st.x_curr + (1.0 - st.f_curr) * (st.x_curr - st.x_prev) / (st.f_curr - st.f_prev)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def actuate(x: float) -> int:
    return max(1, round_half_up(x))


def in_band(f: float, band=BAND) -> bool:
    return band[0] <= f <= band[1]


@dataclass
class SolveResult:
    count: int
    health: float
    iterations: int
    trials: list[tuple[float, float]]  # (x evaluated, health)

    @property
    def converged(self) -> bool:
        return in_band(self.health)


def solve_instances(cap: InstanceCapacity, load: PhaseWorkload, x0: float, x1: float,
                    alpha: float = 0.5, band=BAND, max_iter: int = 20) -> SolveResult:
    """Search the instance count with secant steps.

    Every health evaluation counts as one iteration, including the two
    starting trials. Secant iterates are rounded half-up (and clamped to
    >= 1) before they are evaluated, as a real deployment would.
    """
    f = lambda x: health_score(x, cap, load, alpha)
    xa = EPS_X if x0 <= 0 else float(x0)
    xb = EPS_X if x1 <= 0 else float(x1)
    trials = []
    fa = f(xa)
    trials.append((xa, fa))
    if in_band(fa, band):
        return SolveResult(actuate(xa), fa, 1, trials)
    fb = f(xb)
    trials.append((xb, fb))
    while not in_band(fb, band) and len(trials) < max_iter:
        st = ScalerState(xa, xb, fa, fb, alpha)
        try:
            nxt = actuate(secant_step(st))
        except FlatSecant:
            nxt = actuate(xb) + 1
        if nxt == xb:
            # rounding parked us on the same count; nudge toward the root
            nxt = nxt + (1 if fb < 1.0 else -1)
            nxt = max(1, nxt)
        xa, fa = xb, fb
        xb, fb = float(nxt), f(nxt)
        trials.append((xb, fb))
    return SolveResult(actuate(xb), fb, len(trials), trials)


def random_phases(rng: Rng, n: int, R_range=(300.0, 3000.0), Q_range=(100.0, 1000.0)) -> list[PhaseWorkload]:
    """Workload phases whose healthy instance count is at least 10 (for r=30, q=10).

    A root of 10 or more keeps the rounding error of half an instance inside
    the +/-10% health band.
    """
    R = rng.gen.uniform(*R_range, n)
    Q = rng.gen.uniform(*Q_range, n)
    return [PhaseWorkload(float(a), float(b)) for a, b in zip(R, Q)]


# decisions ----------------------------------------------------------------------

@dataclass(frozen=True)
class OpMetrics:
    queue_len: float
    input_rate: float
    output_rate: float
    link_util: float
    queue_history: tuple[float, ...] = ()

    def __post_init__(self):
        if min(self.queue_len, self.input_rate, self.output_rate, self.link_util) < 0:
            raise ValueError("metrics must be non-negative")


@dataclass(frozen=True)
class ScaleDecision:
    action: str  # scale-up | scale-out | migrate | none
    reason: str  # compute-bottleneck | bandwidth-bottleneck-stateless | bandwidth-bottleneck-stateful | healthy
    op: str = ""
    new_count: int | None = None
    target: int | None = None


def queue_growing(history, samples: int = QUEUE_GROWTH_SAMPLES) -> bool:
    h = list(history)[-samples:]
    return len(h) == samples and all(a < b for a, b in zip(h, h[1:]))


def decide(m: OpMetrics, op_id: str, stateful: bool, leaf_members: list[int],
           leaf_load: dict[int, int] | None = None, health: float | None = None,
           new_count: int | None = None, band=BAND) -> ScaleDecision:
    """Pick an action from the bottleneck type and statefulness.

    Bandwidth (link utilisation at or above 0.9) wins over compute; a
    compute bottleneck is a queue that grew over three samples or a health
    score outside the band. ``new_count`` is the solver's proposal.
    """
    if m.link_util >= LINK_UTIL_THRESHOLD:
        if not leaf_members:
            raise NoTargetError(f"{op_id}: empty leaf set, nowhere to move")
        load = leaf_load or {}
        target = min(leaf_members, key=lambda n: (load.get(n, 0), n))
        if stateful:
            return ScaleDecision("migrate", "bandwidth-bottleneck-stateful", op_id, target=target)
        return ScaleDecision("scale-out", "bandwidth-bottleneck-stateless", op_id, target=target)
    growing = queue_growing(m.queue_history)
    off_band = health is not None and not in_band(health, band)
    if growing or off_band:
        return ScaleDecision("scale-up", "compute-bottleneck", op_id, new_count=new_count)
    return ScaleDecision("none", "healthy", op_id)


# scenarios ----------------------------------------------------------------------

@dataclass(frozen=True)
class PressureRow:
    time_s: float
    op_id: str
    input_rate: float
    queue_size: float
    link_util: float = 0.0


def read_pressure_csv(src: str | Path) -> list[PressureRow]:
    text = Path(src).read_text() if not str(src).lstrip().startswith("time_s") else str(src)
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append(PressureRow(float(r["time_s"]), r["op_id"], float(r["input_rate"]),
                                float(r["queue_size"]), float(r.get("link_util") or 0.0)))
    return rows


def write_pressure_csv(rows: list[PressureRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "op_id", "input_rate", "queue_size", "link_util"])
    for r in rows:
        w.writerow([repr(r.time_s), r.op_id, repr(r.input_rate), repr(r.queue_size), repr(r.link_util)])
    return buf.getvalue()


@dataclass
class TraceRow:
    time_s: float
    op_id: str
    instances: int
    health: float
    action: str
    reason: str
    target: int | None = None


@dataclass
class _OpState:
    x_prev: int
    x: int
    queue: deque = field(default_factory=lambda: deque(maxlen=QUEUE_GROWTH_SAMPLES))
    node: int = 0


def run_scaling_scenario(rows: list[PressureRow], cap: InstanceCapacity = InstanceCapacity(),
                         alpha: float = 0.5, stateful: set[str] | None = None,
                         initial: dict[str, int] | None = None,
                         leaf_sets: dict[str, list[int]] | None = None) -> list[TraceRow]:
    """Replay a pressure schedule; one evaluation per (time, op) row.

    On a compute bottleneck the solver runs from the last two counts and
    the rounded result is applied. Scale-out/migrate move the op to the
    least-loaded member of its leaf set (a placeholder set when none is
    supplied).
    """
    stateful = stateful or set()
    initial = initial or {}
    leaf_sets = leaf_sets or {}
    ops: dict[str, _OpState] = {}
    node_load: dict[int, int] = {}
    trace = []
    for row in sorted(rows, key=lambda r: (r.time_s, r.op_id)):
        st = ops.get(row.op_id)
        if st is None:
            x0 = initial.get(row.op_id, 1)
            st = ops[row.op_id] = _OpState(x0, x0)
        st.queue.append(row.queue_size)
        load = PhaseWorkload(row.input_rate, row.queue_size)
        try:
            f = health_score(st.x, cap, load, alpha)
        except DegenerateLoad:
            trace.append(TraceRow(row.time_s, row.op_id, st.x, math.nan, "none", "healthy"))
            continue
        proposal = None
        if not in_band(f) or queue_growing(st.queue):
            lo = st.x_prev if st.x_prev != st.x else st.x + 1
            proposal = solve_instances(cap, load, lo, st.x, alpha).count
        leaf = leaf_sets.get(row.op_id, [1, 2, 3])
        m = OpMetrics(row.queue_size, row.input_rate, row.input_rate, row.link_util, tuple(st.queue))
        d = decide(m, row.op_id, row.op_id in stateful, leaf, node_load, f, proposal)
        if d.action == "scale-up" and d.new_count is not None and d.new_count != st.x:
            st.x_prev, st.x = st.x, d.new_count
            f = health_score(st.x, cap, load, alpha)
        elif d.action in ("scale-out", "migrate"):
            node_load[d.target] = node_load.get(d.target, 0) + 1
            st.node = d.target
            if d.action == "scale-out":
                # a replica on the new node splits the link load
                st.x_prev, st.x = st.x, st.x + 1
                f = health_score(st.x, cap, load, alpha)
        trace.append(TraceRow(row.time_s, row.op_id, st.x, f, d.action, d.reason, d.target))
    return trace


def stabilized(trace: list[TraceRow], op_id: str, after_s: float = 0.0, run: int = 3) -> float | None:
    """First time from which ``op_id`` stays in band for ``run`` evaluations."""
    streak = []
    for t in trace:
        if t.op_id != op_id or t.time_s < after_s:
            continue
        streak = streak + [t] if in_band(t.health) else []
        if len(streak) == run:
            return streak[0].time_s
    return None


def step_pressure(ops=("op0", "op1", "op2"), duration_s: int = 180, every_s: int = 5,
                  base_rate: float = 600.0, step_every_s: int = 30, step: float = 300.0,
                  bandwidth_at_s: float | None = 60.0, bandwidth_op: str = "op1") -> list[PressureRow]:
    """Three-stage pipeline whose input climbs every ``step_every_s`` seconds.

    Queue size tracks the rate (one third of a second of backlog) and grows
    with it; the named op sees a saturated link from ``bandwidth_at_s`` for
    two samples.
    """
    rows = []
    for t in range(0, duration_s + 1, every_s):
        rate = base_rate + step * (t // step_every_s)
        for i, op in enumerate(ops):
            r = rate * (1.0 - 0.1 * i)
            util = 0.0
            if bandwidth_at_s is not None and op == bandwidth_op and bandwidth_at_s <= t < bandwidth_at_s + 2 * every_s:
                util = 0.95
            rows.append(PressureRow(float(t), op, r, r / 3.0, util))
    return rows
