"""Experiment drivers. Each one maps (config, seed) to rows of a fixed schema."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import autoscale as asc
from .. import dataflow as df
from .. import recovery as rc
from ..banditnet import generators
from ..banditnet.graph import NetGraph
from ..banditnet.policies import AgileDart, BanditConfig, EndToEnd, NextHop, Optimal
from ..banditnet.regret import run_regret
from ..overlay import EdgeTopology, Overlay, node_id_for
from ..simkernel import Rng
from .config import ScenarioConfig


@dataclass(frozen=True)
class Experiment:
    name: str
    columns: tuple[str, ...]
    run: Callable[[ScenarioConfig, int], list[tuple]]
    group_by: tuple[str, ...]
    values: tuple[str, ...]
    last_packet_only: bool = False


def _overlay(cfg: ScenarioConfig, seed: int, nodes: int | None = None) -> Overlay:
    o = cfg.overlay
    topo = EdgeTopology.synthetic(nodes or o.nodes, seed=seed, zones=o.zones)
    return Overlay.build(topo, b=o.b, leaf_capacity=o.leaf_size)


# placement / schedulers / deployment ------------------------------------------------

def _deploy_apps(cfg: ScenarioConfig, seed: int, ov: Overlay, n_apps: int, load: df.PlacementLoad,
                 reg: df.SchedulerRegistry | None = None, start: int = 0):
    p = cfg.placement
    names = [r.name for r in ov.records if ov.is_live(node_id_for(r.name))]
    rng = Rng(seed).fork("apps")
    graphs = []
    for a in range(start, start + n_apps):
        app = df.synthetic_app(rng.fork(f"app{a}"), f"app{a}", names, p.min_ops, p.max_ops)
        graphs.append(df.build_dataflow(ov, app, load))
        if reg is not None:
            origin = node_id_for(app.source_bindings[app.sources[0]])
            df.find_or_elect_scheduler(ov, reg, app.app_id, origin)
    return graphs


def run_placement(cfg: ScenarioConfig, seed: int) -> list[tuple]:
    ov = _overlay(cfg, seed)
    load = df.PlacementLoad(cfg.placement.max_ops_per_node)
    rows = []
    done = 0
    for target in sorted(cfg.placement.apps):
        _deploy_apps(cfg, seed, ov, target - done, load, start=done)
        done = target
        for ops, count in df.ops_histogram(ov, load).items():
            rows.append((seed, target, ops, count, cfg.scenario_id))
    return rows


def run_schedulers(cfg: ScenarioConfig, seed: int) -> list[tuple]:
    ov = _overlay(cfg, seed)
    load = df.PlacementLoad(cfg.placement.max_ops_per_node)
    reg = df.SchedulerRegistry(cfg.placement.scheduler_threshold)
    _deploy_apps(cfg, seed, ov, max(cfg.placement.apps), load, reg)
    apps_in_zone: dict[int, int] = {}
    hops_in_zone: dict[int, list[int]] = {}
    for (app, sched), hops in zip(reg.assignments.items(), reg.lookup_hops):
        z = ov.record(sched).zone
        apps_in_zone[z] = apps_in_zone.get(z, 0) + 1
        hops_in_zone.setdefault(z, []).append(hops)
    rows = []
    for z in sorted(apps_in_zone):
        n = apps_in_zone[z]
        rows.append((seed, z, n, reg.count(z), math.ceil(n / reg.threshold),
                     float(np.mean(hops_in_zone[z])), cfg.scenario_id))
    return rows


def run_deployment(cfg: ScenarioConfig, seed: int) -> list[tuple]:
    ov = _overlay(cfg, seed)
    load = df.PlacementLoad(cfg.placement.max_ops_per_node)
    graphs = _deploy_apps(cfg, seed, ov, cfg.placement.concurrent_apps, load)
    together = df.simulate_concurrent_deployments(ov, graphs)
    rows = []
    for i, g in enumerate(graphs):
        cost = df.deployment_cost(ov, g)
        alone = df.simulate_concurrent_deployments(ov, [g])[0]
        rows.append((seed, i + 1, cost.messages, cost.hops, alone, together[i], cfg.scenario_id))
    return rows


# scaling ---------------------------------------------------------------------------

def run_scaling(cfg: ScenarioConfig, seed: int) -> list[tuple]:
    s = cfg.scaling
    cap = asc.InstanceCapacity(s.r, s.q)
    if s.pressure_file:
        rows_in = asc.read_pressure_csv(cfg.resolve(s.pressure_file))
    else:
        rows_in = asc.step_pressure()
    trace = asc.run_scaling_scenario(rows_in, cap, s.alpha, set(s.stateful_ops))
    return [(seed, t.time_s, t.op_id, t.instances, t.health, t.action, t.reason, cfg.scenario_id)
            for t in trace]


def run_scaling_phases(cfg: ScenarioConfig, seed: int) -> list[tuple]:
    s = cfg.scaling
    cap = asc.InstanceCapacity(s.r, s.q)
    rows = []
    for i, ph in enumerate(asc.random_phases(Rng(seed).fork("phases"), s.phases)):
        for x0, x1 in s.initial_pairs:
            res = asc.solve_instances(cap, ph, x0, x1, s.alpha)
            rows.append((seed, i, ph.R, ph.Q, x0, x1, res.iterations, res.count, res.health,
                         cfg.scenario_id))
    return rows


SCALING_PHASE_COLUMNS = ("seed", "phase", "R", "Q", "x0", "x1", "iterations", "instances", "health",
                         "scenario_id")


# recovery --------------------------------------------------------------------------

def erasure_grid(cfg: ScenarioConfig) -> list[tuple[int, int]]:
    e = cfg.erasure
    if e.n:
        return [(m, n - m) for m in e.m for n in e.n]
    return [(m, k) for m in e.m for k in e.k]


def run_recovery(cfg: ScenarioConfig, seed: int) -> list[tuple]:
    e = cfg.erasure
    ov = _overlay(cfg, seed, nodes=e.nodes)
    rng = Rng(seed).fork("recovery")
    owner = ov.live_ids()[int(rng.integers(0, len(ov)))]
    leaves = rc.nearest_leaves(ov, owner)
    rows = []
    for mb in e.state_mb:
        size = int(round(mb * (1 << 20)))
        state = rng.gen.bytes(size) if e.verify else None
        for m, k in erasure_grid(cfg):
            ec = rc.ErasureConfig(m, k)
            holders = leaves[: ec.n]
            if e.verify:
                ck = rc.take_checkpoint(ov, owner, "op", state, ec)
            else:
                ck = rc.StateCheckpoint("op", owner, 0, dict(enumerate(holders)), {}, size, ec, leaves)
            newcomer = leaves[ec.n] if len(leaves) > ec.n else owner
            sim, frag = rc.striped_regeneration(ov, ck, 0, newcomer, e.rate_mbps, verify=e.verify)
            if e.verify and frag.data.tobytes() != ck.fragments[0].data.tobytes():
                raise AssertionError(f"regenerated fragment differs for m={m}, k={k}")
            B = rc.transfer_ms(-(-size // m), e.rate_mbps)
            model = rc.model_time(m, k, B)
            # restart next to the owner, pull m fragments at once
            restart = leaves[0]
            cost = sorted(0.0 if h == restart else B + ov.rtt_ms(h, restart) for h in holders)
            parallel = cost[m - 1]
            single = rc.single_source_ms(ov, size, holders[-1], restart, e.rate_mbps)
            rows.append((seed, mb, m, k, model, sim, parallel, single, cfg.scenario_id))
    return rows


# routing ---------------------------------------------------------------------------

def _bandit_cfg(cfg: ScenarioConfig, C: float | None = None) -> BanditConfig:
    b = cfg.bandit
    return BanditConfig(C=b.C if C is None else C, K=b.K, L=b.L)


def _graph_source(cfg: ScenarioConfig, nodes=None, links=None, delay=None):
    t = cfg.topology
    if t.file:
        g = NetGraph.read_csv(cfg.resolve(t.file))
        return lambda seed: g
    nodes = nodes or t.nodes
    links = links or t.links
    dmin, dmax = delay or (t.delay_min, t.delay_max)

    def make(seed):
        return generators.generate(t.kind, nodes, links, dmin, dmax, seed if t.fresh_per_seed else cfg.seed,
                                   (t.theta_min, t.theta_max))
    return make


def _policies(cfg: ScenarioConfig):
    b = cfg.bandit
    out = []
    for name in b.policies:
        out.append({"agiledart": AgileDart(), "next_hop": NextHop(), "end_to_end": EndToEnd(b.L),
                    "optimal": Optimal()}[name])
    for h in b.hop_limits:
        out.append(AgileDart(hop_limit=h or None, name=f"agiledart_h{h or 'all'}"))
    return out


def _networks(cfg: ScenarioConfig):
    if cfg.bandit.networks:
        return [(n, l, f"{cfg.scenario_id}/{n}-{l}") for n, l in cfg.bandit.networks]
    return [(None, None, cfg.scenario_id)]


def run_regret_exp(cfg: ScenarioConfig, seed: int) -> list[tuple]:
    b = cfg.bandit
    rows = []
    for nodes, links, sid in _networks(cfg):
        ledgers = run_regret(_graph_source(cfg, nodes, links), _policies(cfg), _bandit_cfg(cfg), [seed])
        for key, led in ledgers.items():
            run = led.runs[0]
            reg = run.expected_regret
            for k in range(b.K):
                if (k + 1) % b.record_every == 0 or k == 0 or k == b.K - 1:
                    rows.append((seed, key, k + 1, float(reg[k]), float(run.realized_delay[k]), sid))
    return rows


def run_convergence(cfg: ScenarioConfig, seed: int) -> list[tuple]:
    rows = []
    for nodes, links, sid in _networks(cfg):
        g = _graph_source(cfg, nodes, links)(seed)
        ledgers = run_regret(g, _policies(cfg), _bandit_cfg(cfg), [seed])
        for key, led in ledgers.items():
            run = led.runs[0]
            modal = g.path_expected_delay(list(run.modal_path()))
            rows.append((seed, key, run.first_optimal_trial, modal, run.optimal_delay,
                         modal / run.optimal_delay, float(run.expected_regret[-1]), sid))
    return rows


def run_sweep_c(cfg: ScenarioConfig, seed: int) -> list[tuple]:
    b = cfg.bandit
    rows = []
    for dmin, dmax in b.delay_ranges:
        make = _graph_source(cfg, delay=(dmin, dmax))
        g = make(seed)
        for C in b.C_grid:
            led = run_regret(g, [AgileDart(C=C)], _bandit_cfg(cfg, C), [seed])["agiledart"]
            rows.append((seed, float(dmin), float(dmax), C, led.final_expected_regret, cfg.scenario_id))
    return rows


EXPERIMENTS: dict[str, Experiment] = {
    "placement": Experiment("placement", ("seed", "apps", "ops_per_node", "count", "scenario_id"),
                            run_placement, ("scenario_id", "apps", "ops_per_node"), ("count",)),
    "schedulers": Experiment("schedulers", ("seed", "zone", "apps", "schedulers", "expected_schedulers",
                                            "mean_lookup_hops", "scenario_id"),
                             run_schedulers, ("scenario_id",), ("apps", "schedulers", "mean_lookup_hops")),
    "deployment": Experiment("deployment", ("seed", "app_index", "messages", "hops", "solo_time_ms",
                                            "concurrent_time_ms", "scenario_id"),
                             run_deployment, ("scenario_id",), ("hops", "solo_time_ms", "concurrent_time_ms")),
    "scaling": Experiment("scaling", ("seed", "time_s", "op_id", "instances", "health", "action", "reason",
                                      "scenario_id"),
                          run_scaling, ("scenario_id", "op_id"), ("instances", "health")),
    "recovery": Experiment("recovery", ("seed", "state_mb", "m", "k", "model_time", "sim_time_ms",
                                        "parallel_recover_ms", "single_source_ms", "scenario_id"),
                           run_recovery, ("scenario_id", "state_mb"), ("model_time", "sim_time_ms")),
    "regret": Experiment("regret", ("seed", "policy", "packet_k", "expected_regret", "realized_delay_ms",
                                    "scenario_id"),
                         run_regret_exp, ("scenario_id", "policy"), ("expected_regret",), last_packet_only=True),
    "convergence": Experiment("convergence", ("seed", "policy", "first_optimal_trial", "modal_path_delay_ms",
                                              "optimal_delay_ms", "modal_ratio", "final_expected_regret",
                                              "scenario_id"),
                              run_convergence, ("scenario_id", "policy"),
                              ("first_optimal_trial", "modal_ratio", "final_expected_regret")),
    "sweep-C": Experiment("sweep-C", ("seed", "delay_min", "delay_max", "C", "final_expected_regret",
                                      "scenario_id"),
                          run_sweep_c, ("scenario_id", "delay_min", "delay_max", "C"),
                          ("final_expected_regret",)),
}
