"""Independent reference implementations used only by the tests."""

import math

import numpy as np

GRID_POINTS = 1_000_000
_U = np.arange(1, GRID_POINTS) / GRID_POINTS  # open grid on (0, 1)
_LOG_U = np.log(_U)
_LOG_1MU = np.log1p(-_U)


def kl(p, u):
    """Bernoulli KL divergence written out by hand, vectorised over u."""
    u = np.asarray(u, dtype=float)
    a = 0.0 if p == 0 else p * (math.log(p) - np.log(u))
    b = 0.0 if p == 1 else (1 - p) * (math.log1p(-p) - np.log1p(-u))
    return a + b


def u_star_grid(theta_hat, attempts, budget):
    """Largest u >= theta_hat with attempts*KL(theta_hat, u) <= budget.

    Scans a 10^6-point grid of (0, 1) for the last feasible point, then
    refines inside the bracketing cell by linear interpolation of the
    constraint (KL is smooth and increasing there).
    """
    p = theta_hat
    if p >= 1.0:
        return 1.0
    if budget <= 0:
        return p
    a = p * math.log(p) if p > 0 else 0.0
    b = (1 - p) * math.log1p(-p)
    g = attempts * (a - p * _LOG_U + b - (1 - p) * _LOG_1MU) - budget
    if p > 0:
        g[_U < p] = -1.0  # left of theta_hat: not part of the search range
    feasible = np.flatnonzero(g <= 0)
    j = feasible[-1]
    if j + 1 >= len(_U):
        return float(_U[j])
    u0, u1, g0, g1 = _U[j], _U[j + 1], g[j], g[j + 1]
    lo = max(u0, p)
    if g1 == g0:
        return float(lo)
    return float(u0 - g0 * (u1 - u0) / (g1 - g0))


def loop_free_paths(n, adj, start, sink):
    """Plain recursive DFS over simple paths (adj: node -> list of (dst, weight))."""
    out = []

    def go(v, seen, cost):
        if v == sink:
            out.append(cost)
            return
        for w, c in adj.get(v, []):
            if w not in seen:
                go(w, seen | {w}, cost + c)

    go(start, {start}, 0.0)
    return out


def min_path_cost(n, adj, start, sink):
    costs = loop_free_paths(n, adj, start, sink)
    return min(costs) if costs else math.inf


def lookahead_cost(adj, v, sink, h, reach):
    """h-step truncated cost: 0 at the sink, 0 after h links, inf if stranded."""
    if v not in reach:
        return math.inf
    if v == sink or h == 0:
        return 0.0
    best = math.inf
    for w, c in adj.get(v, []):
        best = min(best, c + lookahead_cost(adj, w, sink, h - 1, reach))
    return best
