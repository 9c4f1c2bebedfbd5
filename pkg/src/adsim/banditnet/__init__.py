"""Online routing over unreliable links: learners, kernels and regret."""

from .graph import EnumerationCapError, GraphError, NetGraph, dijkstra, enumerate_paths, shortest_path
from .policies import (
    AgileDart, BanditConfig, EndToEnd, LinkStats, NetClock, NextHop, Optimal, PathologicalLinkError,
    PolicyState, StuckError, kl_bernoulli, long_term_cost, omega, plan_end_to_end, route_packet,
    step_agiledart, step_nexthop, transmit,
)
from .regret import PolicyRun, RegretLedger, run_regret, simulate
