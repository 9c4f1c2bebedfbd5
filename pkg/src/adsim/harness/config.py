"""Scenario configuration: a TOML file with one table per module."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

EXPERIMENTS = ("placement", "schedulers", "deployment", "scaling", "recovery", "regret",
               "convergence", "sweep-C")
POLICIES = ("agiledart", "next_hop", "end_to_end", "optimal")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


@dataclass
class OverlayParams:
    nodes: int = 10000
    b: int = 4
    leaf_size: int = 24
    zones: int = 20
    routes: int = 100_000


@dataclass
class PlacementParams:
    apps: list[int] = field(default_factory=lambda: [250, 500, 750, 1000])
    min_ops: int = 5
    max_ops: int = 15
    max_ops_per_node: int = 2
    scheduler_threshold: int = 50
    concurrent_apps: int = 500


@dataclass
class TopologyParams:
    kind: str = "grid-road"
    nodes: int = 25
    links: int = 32
    delay_min: float = 50.0
    delay_max: float = 250.0
    theta_min: float = 0.25
    theta_max: float = 1.0
    file: str | None = None
    fresh_per_seed: bool = True


@dataclass
class BanditParams:
    C: float = 0.2
    K: int = 1000
    L: float = 1.0
    policies: list[str] = field(default_factory=lambda: ["agiledart", "next_hop", "end_to_end", "optimal"])
    hop_limits: list[int] = field(default_factory=list)  # 0 = all hops; empty = no hop study
    record_every: int = 1
    C_grid: list[float] = field(default_factory=lambda: [0.001, 0.01, 0.1, 0.2, 0.4, 1.0])
    delay_ranges: list[list[float]] = field(default_factory=lambda: [[10, 100], [50, 100], [100, 300]])
    networks: list[list[int]] = field(default_factory=list)  # [[nodes, links], ...] for a size grid


@dataclass
class ErasureParams:
    m: list[int] = field(default_factory=lambda: list(range(1, 9)))
    k: list[int] = field(default_factory=lambda: list(range(1, 9)))
    n: list[int] = field(default_factory=list)  # if set, the grid is (m, n - m) and k is ignored
    state_mb: list[float] = field(default_factory=lambda: [16.0])
    rate_mbps: float = 100.0
    nodes: int = 300
    verify: bool = False


@dataclass
class ScalingParams:
    alpha: float = 0.5
    r: float = 30.0
    q: float = 10.0
    phases: int = 50
    initial_pairs: list[list[float]] = field(default_factory=lambda: [[0, 10], [5, 15], [20, 40]])
    pressure_file: str | None = None
    stateful_ops: list[str] = field(default_factory=list)


@dataclass
class ScenarioConfig:
    experiment: str
    seed: int = 0
    seeds: int = 1
    scenario_id: str = ""
    overlay: OverlayParams = field(default_factory=OverlayParams)
    placement: PlacementParams = field(default_factory=PlacementParams)
    topology: TopologyParams = field(default_factory=TopologyParams)
    bandit: BanditParams = field(default_factory=BanditParams)
    erasure: ErasureParams = field(default_factory=ErasureParams)
    scaling: ScalingParams = field(default_factory=ScalingParams)
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    @property
    def seed_list(self) -> list[int]:
        return list(range(self.seed, self.seed + self.seeds))

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path


_SECTIONS = {"overlay": OverlayParams, "placement": PlacementParams, "topology": TopologyParams,
             "bandit": BanditParams, "erasure": ErasureParams, "scaling": ScalingParams}


def _coerce(section: str, cls, raw: dict):
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, val in raw.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown key")
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(val, bool):
                raise ConfigError(f"{section}.{key}", "expected true/false")
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError(f"{section}.{key}", "expected an integer")
        elif isinstance(default, float):
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(f"{section}.{key}", "expected a number")
            val = float(val)
        elif isinstance(default, list) and not isinstance(val, list):
            raise ConfigError(f"{section}.{key}", "expected a list")
        out[key] = val
    return cls(**out)


def parse(doc: dict, base_dir: Path | None = None) -> ScenarioConfig:
    doc = dict(doc)
    exp = doc.pop("experiment", None)
    if exp is None:
        raise ConfigError("experiment", "missing")
    top = {}
    for key in ("seed", "seeds"):
        if key in doc:
            v = doc.pop(key)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(key, "expected an integer")
            top[key] = v
    if "scenario_id" in doc:
        top["scenario_id"] = str(doc.pop("scenario_id"))
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = doc.pop(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(name, "expected a table")
        sections[name] = _coerce(name, cls, raw)
    if doc:
        raise ConfigError(sorted(doc)[0], "unknown key")
    cfg = ScenarioConfig(experiment=exp, base_dir=base_dir or Path.cwd(), **top, **sections)
    if not cfg.scenario_id:
        cfg.scenario_id = exp
    validate(cfg)
    return cfg


def load(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"TOML syntax error: {exc}") from None
    return parse(doc, path.parent)


def _check(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise ConfigError(name, msg)


def validate(cfg: ScenarioConfig) -> None:
    _check(cfg.experiment in EXPERIMENTS, "experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    _check(cfg.seeds >= 1, "seeds", "must be >= 1")
    _check(cfg.seed >= 0, "seed", "must be >= 0")
    o = cfg.overlay
    _check(o.nodes >= 1, "overlay.nodes", "must be >= 1")
    _check(o.b in (1, 2, 4, 8), "overlay.b", "must be 1, 2, 4 or 8")
    _check(o.leaf_size >= 1, "overlay.leaf_size", "must be >= 1")
    _check(o.zones >= 1, "overlay.zones", "must be >= 1")
    _check(o.routes >= 0, "overlay.routes", "must be >= 0")
    p = cfg.placement
    _check(bool(p.apps) and all(isinstance(a, int) and a >= 1 for a in p.apps), "placement.apps",
           "must be a non-empty list of positive integers")
    _check(3 <= p.min_ops <= p.max_ops, "placement.min_ops", "need 3 <= min_ops <= max_ops")
    _check(p.max_ops_per_node >= 1, "placement.max_ops_per_node", "must be >= 1")
    _check(p.scheduler_threshold >= 1, "placement.scheduler_threshold", "must be >= 1")
    _check(p.concurrent_apps >= 1, "placement.concurrent_apps", "must be >= 1")
    t = cfg.topology
    _check(t.kind in ("grid-road", "ring", "random"), "topology.kind", "must be grid-road, ring or random")
    _check(0 < t.delay_min <= t.delay_max, "topology.delay_min", "need 0 < delay_min <= delay_max")
    _check(0 < t.theta_min <= t.theta_max <= 1, "topology.theta_min", "need 0 < theta_min <= theta_max <= 1")
    _check(t.nodes >= 2 and t.links >= 1, "topology.nodes", "need >= 2 nodes and >= 1 link")
    if t.file is not None:
        _check(cfg.resolve(t.file).exists(), "topology.file", f"file not found: {t.file}")
    bd = cfg.bandit
    _check(0 < bd.C <= 1, "bandit.C", "must lie in (0, 1]")
    _check(bd.K >= 1, "bandit.K", "must be >= 1")
    _check(bd.L > 0, "bandit.L", "must be positive")
    _check(all(x in POLICIES for x in bd.policies), "bandit.policies", f"entries must be among {POLICIES}")
    _check(all(isinstance(h, int) and h >= 0 for h in bd.hop_limits), "bandit.hop_limits",
           "entries must be integers >= 0 (0 = all hops)")
    if cfg.experiment in ("regret", "convergence"):
        _check(bool(bd.policies) or bool(bd.hop_limits), "bandit.policies", "no policy to run")
    _check(bd.record_every >= 1, "bandit.record_every", "must be >= 1")
    _check(all(0 < c <= 1 for c in bd.C_grid), "bandit.C_grid", "entries must lie in (0, 1]")
    _check(all(len(r) == 2 and 0 < r[0] <= r[1] for r in bd.delay_ranges), "bandit.delay_ranges",
           "entries must be [min, max] with 0 < min <= max")
    _check(all(len(x) == 2 and x[0] >= 2 and x[1] >= 1 for x in bd.networks), "bandit.networks",
           "entries must be [nodes, links]")
    e = cfg.erasure
    _check(bool(e.m) and all(isinstance(x, int) and x >= 1 for x in e.m), "erasure.m", "entries must be >= 1")
    _check(bool(e.k) and all(isinstance(x, int) and x >= 1 for x in e.k), "erasure.k", "entries must be >= 1")
    if e.n:
        _check(all(isinstance(x, int) for x in e.n), "erasure.n", "entries must be integers")
        for m in e.m:
            for n in e.n:
                _check(m < n, "erasure.m", f"m = {m} must be smaller than n = {n} (need at least one parity fragment)")
        n_max = max(e.n)
    else:
        n_max = max(e.m) + max(e.k)
    _check(n_max <= 255, "erasure.n", f"n = {n_max} exceeds the GF(256) limit of 255")
    _check(n_max <= o.leaf_size, "erasure.n", f"n = {n_max} exceeds the leaf-set size {o.leaf_size}")
    _check(bool(e.state_mb) and all(s > 0 for s in e.state_mb), "erasure.state_mb", "entries must be positive")
    _check(e.rate_mbps > 0, "erasure.rate_mbps", "must be positive")
    s = cfg.scaling
    _check(0 <= s.alpha <= 1, "scaling.alpha", "must lie in [0, 1]")
    _check(s.r > 0 and s.q > 0, "scaling.r", "per-instance capacities must be positive")
    _check(s.phases >= 1, "scaling.phases", "must be >= 1")
    _check(all(len(x) == 2 and x[0] != x[1] and min(x) >= 0 for x in s.initial_pairs),
           "scaling.initial_pairs", "entries must be two distinct non-negative counts")
    if s.pressure_file is not None:
        _check(cfg.resolve(s.pressure_file).exists(), "scaling.pressure_file", f"file not found: {s.pressure_file}")
