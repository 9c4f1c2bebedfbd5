"""Compiled inner loops for the routing learners.

Every kernel consumes uniforms from a caller-provided buffer in a fixed
order (one per link transmission, plus the epsilon draw and the explore
draw for next-hop routing), so the batch runners replay exactly what the
step-by-step API in ``policies`` does with the same stream.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

INF = np.inf
MAX_ATTEMPTS = 1_000_000
UNVISITED_DELAY = 1.0  # optimistic floor for links with no delay sample


@njit(cache=True)
def kl_bernoulli(p, u):
    res = 0.0
    if p > 0.0:
        if u <= 0.0:
            return INF
        res += p * math.log(p / u)
    if p < 1.0:
        if u >= 1.0:
            return INF
        res += (1.0 - p) * math.log((1.0 - p) / (1.0 - u))
    # the two terms can cancel to a tiny negative number when p ~ u
    return max(res, 0.0)


@njit(cache=True)
def u_star(theta_hat, attempts, budget, tol):
    """Largest u in [theta_hat, 1] with attempts * KL(theta_hat, u) <= budget."""
    if attempts <= 0 or theta_hat >= 1.0:
        return 1.0
    if budget <= 0.0:
        return theta_hat
    lo = theta_hat
    hi = 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if attempts * kl_bernoulli(theta_hat, mid) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def omega_all(s, t, tau, C, tol, out):
    budget = C * math.log(tau) if tau > 1 else 0.0
    for i in range(len(s)):
        if t[i] == 0:
            out[i] = 1.0
        else:
            u = u_star(s[i] / t[i], t[i], budget, tol)
            out[i] = INF if u <= 0.0 else 1.0 / u


@njit(cache=True)
def geometric_from_uniform(u, theta):
    if theta >= 1.0:
        return 1
    k = math.ceil(math.log1p(-u) / math.log1p(-theta))
    return max(1, int(k))


@njit(cache=True)
def cost_to_sink(n, in_ptr, in_links, src, weight, sink, dist):
    """Dense Dijkstra toward ``sink``; dist[v] = min over v->sink paths."""
    done = np.zeros(n, dtype=np.bool_)
    for v in range(n):
        dist[v] = INF
    dist[sink] = 0.0
    for _ in range(n):
        x = -1
        best = INF
        for v in range(n):
            if not done[v] and dist[v] < best:
                best = dist[v]
                x = v
        if x < 0:
            break
        done[x] = True
        for p in range(in_ptr[x], in_ptr[x + 1]):
            i = in_links[p]
            v = src[i]
            if not done[v]:
                nd = weight[i] + dist[x]
                if nd < dist[v]:
                    dist[v] = nd


@njit(cache=True)
def cost_to_sink_limited(n, out_ptr, dst, weight, sink, full, hops, dist):
    """Cost of the first ``hops`` links of the best continuation toward the sink.

    ``full`` is the unrestricted cost; nodes that cannot reach the sink stay
    at infinity. With hops=0 every reachable node costs 0.
    """
    prev = np.empty(n)
    for v in range(n):
        prev[v] = 0.0 if np.isfinite(full[v]) else INF
    for _ in range(hops):
        for v in range(n):
            if v == sink:
                dist[v] = 0.0
                continue
            best = INF
            for i in range(out_ptr[v], out_ptr[v + 1]):
                c = weight[i] + prev[dst[i]]
                if c < best:
                    best = c
            dist[v] = best
        for v in range(n):
            prev[v] = dist[v]
    for v in range(n):
        dist[v] = prev[v]


@njit(cache=True)
def long_term_costs(n, out_ptr, dst, in_ptr, in_links, src, weight, sink, hop_limit, J):
    cost_to_sink(n, in_ptr, in_links, src, weight, sink, J)
    if hop_limit > 0:
        full = J.copy()
        cost_to_sink_limited(n, out_ptr, dst, weight, sink, full, hop_limit, J)


@njit(cache=True)
def agiledart_choose(v, out_ptr, dst, weight, J, visited):
    best = INF
    pick = -1
    for i in range(out_ptr[v], out_ptr[v + 1]):
        w = dst[i]
        if visited[w]:
            continue
        c = weight[i] + J[w]
        if c < best:
            best = c
            pick = i
    return pick


@njit(cache=True)
def run_agiledart(n, out_ptr, dst, in_ptr, in_links, src, base, scale, theta, source, sink,
                  K, C, tol, hop_limit, uniforms, s, t, tau0, paths, path_len, delays):
    """Route K packets; returns (final tau, uniforms used) or (-1, -1) if stuck.

    ``scale`` multiplies omega into a link weight (base delay, or ones for
    pure attempt-count costs).
    """
    tau = tau0
    ui = 0
    m = len(base)
    om = np.empty(m)
    weight = np.empty(m)
    J = np.empty(n)
    visited = np.zeros(n, dtype=np.bool_)
    for k in range(K):
        for v in range(n):
            visited[v] = False
        v = source
        visited[v] = True
        paths[k, 0] = v
        hops = 0
        delay = 0.0
        while v != sink:
            omega_all(s, t, tau, C, tol, om)
            for i in range(m):
                weight[i] = scale[i] * om[i]
            long_term_costs(n, out_ptr, dst, in_ptr, in_links, src, weight, sink, hop_limit, J)
            i = agiledart_choose(v, out_ptr, dst, weight, J, visited)
            if i < 0:
                return -1, -1
            a = geometric_from_uniform(uniforms[ui], theta[i])
            ui += 1
            if a > MAX_ATTEMPTS:
                return -2, -2
            t[i] += a
            s[i] += 1
            tau += a
            delay += a * base[i]
            v = dst[i]
            visited[v] = True
            hops += 1
            paths[k, hops] = v
        path_len[k] = hops + 1
        delays[k] = delay
    return tau, ui


@njit(cache=True)
def nexthop_choose(v, out_ptr, dst, dsum, dcnt, base, visited, n_visits, u_eps, u_pick):
    """Returns (link, consumed_pick): exploit with probability 1 - 1/N(v)."""
    cnt = 0
    for i in range(out_ptr[v], out_ptr[v + 1]):
        if not visited[dst[i]]:
            cnt += 1
    restrict = cnt > 0
    if not restrict:
        cnt = out_ptr[v + 1] - out_ptr[v]
    if cnt == 0:
        return -1, False
    threshold = 1.0 - 1.0 / n_visits
    if u_eps < threshold:
        best = INF
        pick = -1
        for i in range(out_ptr[v], out_ptr[v + 1]):
            if restrict and visited[dst[i]]:
                continue
            d = dsum[i] / dcnt[i] if dcnt[i] > 0 else UNVISITED_DELAY
            if d < best:
                best = d
                pick = i
        return pick, False
    j = min(int(u_pick * cnt), cnt - 1)
    for i in range(out_ptr[v], out_ptr[v + 1]):
        if restrict and visited[dst[i]]:
            continue
        if j == 0:
            return i, True
        j -= 1
    return -1, True


@njit(cache=True)
def run_nexthop(n, out_ptr, dst, base, theta, source, sink, K, uniforms,
                dsum, dcnt, nvis, tau0, max_hops, paths, path_len, delays):
    tau = tau0
    ui = 0
    visited = np.zeros(n, dtype=np.bool_)
    for k in range(K):
        for v in range(n):
            visited[v] = False
        v = source
        visited[v] = True
        paths[k, 0] = v
        hops = 0
        delay = 0.0
        while v != sink:
            if hops >= max_hops:
                return -1, -1
            nvis[v] += 1
            u_eps = uniforms[ui]
            u_pick = uniforms[ui + 1]
            i, used_pick = nexthop_choose(v, out_ptr, dst, dsum, dcnt, base, visited,
                                          nvis[v], u_eps, u_pick)
            ui += 2 if used_pick else 1
            if i < 0:
                return -1, -1
            a = geometric_from_uniform(uniforms[ui], theta[i])
            ui += 1
            if a > MAX_ATTEMPTS:
                return -2, -2
            d = a * base[i]
            dsum[i] += d
            dcnt[i] += 1
            tau += a
            delay += d
            v = dst[i]
            visited[v] = True
            hops += 1
            if hops < paths.shape[1]:
                paths[k, hops] = v
        path_len[k] = hops + 1
        delays[k] = delay
    return tau, ui


@njit(cache=True)
def lcb_pick(p_ptr, p_links, p_n, p_sum, link_n, tau, L):
    """Index of the path with the minimum lower confidence bound."""
    n_paths = len(p_n)
    for p in range(n_paths):
        if p_n[p] == 0:
            return p
    logt = math.log(tau) if tau > 1 else 0.0
    best = INF
    pick = 0
    for p in range(n_paths):
        tot = 0
        for q in range(p_ptr[p], p_ptr[p + 1]):
            tot += link_n[p_links[q]]
        lcb = p_sum[p] / p_n[p] - math.sqrt((L + 1.0) * logt / tot)
        if lcb < best:
            best = lcb
            pick = p
    return pick


@njit(cache=True)
def run_end_to_end(p_ptr, p_links, base, theta, K, L, uniforms, p_n, p_sum, link_n,
                   tau0, chosen, delays):
    tau = tau0
    ui = 0
    for k in range(K):
        p = lcb_pick(p_ptr, p_links, p_n, p_sum, link_n, tau, L)
        delay = 0.0
        for q in range(p_ptr[p], p_ptr[p + 1]):
            i = p_links[q]
            a = geometric_from_uniform(uniforms[ui], theta[i])
            ui += 1
            if a > MAX_ATTEMPTS:
                return -2, -2
            delay += a * base[i]
            tau += a
            link_n[i] += 1
        p_n[p] += 1
        p_sum[p] += delay
        chosen[k] = p
        delays[k] = delay
    return tau, ui


@njit(cache=True)
def run_fixed_path(links, base, theta, K, uniforms, tau0, delays):
    tau = tau0
    ui = 0
    for k in range(K):
        delay = 0.0
        for i in links:
            a = geometric_from_uniform(uniforms[ui], theta[i])
            ui += 1
            if a > MAX_ATTEMPTS:
                return -2, -2
            delay += a * base[i]
            tau += a
        delays[k] = delay
    return tau, ui
