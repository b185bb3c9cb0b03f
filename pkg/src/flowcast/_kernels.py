"""Compiled inner loops for the flow solver.

Everything here works on flat arrays describing candidate paths:

  fp_ptr      paths of flow f are indices fp_ptr[f]..fp_ptr[f+1] (cost order)
  path_ptr    links of path p are path_links[path_ptr[p]..path_ptr[p+1]]
  lp_ptr/lp_idx   reverse map, paths crossing link l

Rates and capacities are bits per second, float64 throughout. The loops are
deterministic: no threading, no fastmath, first-hit tie-breaks.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["mw_max_throughput", "mincost_shift", "select_paths"]


@njit(cache=True)
def mw_max_throughput(fp_ptr, path_ptr, path_links, lp_ptr, lp_idx,
                      avail, rcap, eps, max_iter):
    """Round-robin multiplicative-weights packing over candidate paths.

    Maintains a length per link and per flow budget (the budget acts as one
    more capacitated edge every path of that flow crosses). Each step routes
    a flow's currently shortest candidate at the bottleneck of the ORIGINAL
    capacities and multiplies the lengths touched; the caller rescales the
    returned raw path flows to feasibility. Terminates when every candidate
    path has length >= 1 (converged) or after max_iter routing steps.
    """
    n_flows = fp_ptr.shape[0] - 1
    n_paths = path_ptr.shape[0] - 1
    n_links = avail.shape[0]
    m = n_links + n_flows
    delta = (1.0 + eps) * ((1.0 + eps) * m) ** (-1.0 / eps)
    if delta < 1e-300:
        delta = 1e-300

    wlink = np.empty(n_links)
    for l in range(n_links):
        wlink[l] = delta / avail[l] if avail[l] > 0.0 else np.inf
    wdem = np.empty(n_flows)
    for f in range(n_flows):
        wdem[f] = delta / rcap[f] if rcap[f] > 0.0 else np.inf

    plen = np.empty(n_paths)
    raw = np.zeros(n_paths)
    alpha = np.inf
    for f in range(n_flows):
        for p in range(fp_ptr[f], fp_ptr[f + 1]):
            s = wdem[f]
            for j in range(path_ptr[p], path_ptr[p + 1]):
                s += wlink[path_links[j]]
            plen[p] = s
            if s < alpha:
                alpha = s

    it = 0
    while alpha < 1.0 and it < max_iter:
        thresh = (1.0 + eps) * alpha
        if thresh > 1.0:
            thresh = 1.0
        for f in range(n_flows):
            while it < max_iter:
                best = -1
                blen = np.inf
                for p in range(fp_ptr[f], fp_ptr[f + 1]):
                    if plen[p] < blen:
                        blen = plen[p]
                        best = p
                if best < 0 or blen >= thresh:
                    break
                u = rcap[f]
                for j in range(path_ptr[best], path_ptr[best + 1]):
                    c = avail[path_links[j]]
                    if c < u:
                        u = c
                if u <= 0.0:
                    break
                raw[best] += u
                dd = wdem[f] * (eps * u / rcap[f])
                wdem[f] += dd
                for p in range(fp_ptr[f], fp_ptr[f + 1]):
                    plen[p] += dd
                for j in range(path_ptr[best], path_ptr[best + 1]):
                    l = path_links[j]
                    dl = wlink[l] * (eps * u / avail[l])
                    wlink[l] += dl
                    for q in range(lp_ptr[l], lp_ptr[l + 1]):
                        plen[lp_idx[q]] += dl
                it += 1
            if it >= max_iter:
                break
        # phase boundary: recompute lengths exactly to wash out the
        # incremental float drift, and tighten the lower bound
        alpha = np.inf
        for f in range(n_flows):
            for p in range(fp_ptr[f], fp_ptr[f + 1]):
                s = wdem[f]
                for j in range(path_ptr[p], path_ptr[p + 1]):
                    s += wlink[path_links[j]]
                plen[p] = s
                if s < alpha:
                    alpha = s
    return raw, it, alpha >= 1.0


@njit(cache=True)
def mincost_shift(fp_ptr, path_ptr, path_links, path_cost, avail, x,
                  max_passes, tol_bps):
    """Move rate from expensive candidates onto strictly cheaper ones.

    Per-flow throughput is preserved exactly; a shift is limited by the
    residual capacity of the cheap path's links not shared with the source
    path (shared links release and absorb the same amount). Returns the
    total rate moved.
    """
    n_flows = fp_ptr.shape[0] - 1
    n_paths = path_ptr.shape[0] - 1
    n_links = avail.shape[0]
    load = np.zeros(n_links)
    for p in range(n_paths):
        if x[p] > 0.0:
            for j in range(path_ptr[p], path_ptr[p + 1]):
                load[path_links[j]] += x[p]
    moved_total = 0.0
    for _ in range(max_passes):
        improved = False
        for f in range(n_flows):
            lo = fp_ptr[f]
            hi = fp_ptr[f + 1]
            for q in range(hi - 1, lo, -1):
                if x[q] <= tol_bps:
                    continue
                for p in range(lo, q):
                    if x[q] <= tol_bps:
                        break
                    if path_cost[p] >= path_cost[q]:
                        continue
                    room = x[q]
                    for j in range(path_ptr[p], path_ptr[p + 1]):
                        l = path_links[j]
                        shared = False
                        for jj in range(path_ptr[q], path_ptr[q + 1]):
                            if path_links[jj] == l:
                                shared = True
                                break
                        if not shared:
                            r = avail[l] - load[l]
                            if r < room:
                                room = r
                    if room > tol_bps:
                        x[q] -= room
                        x[p] += room
                        for j in range(path_ptr[q], path_ptr[q + 1]):
                            load[path_links[j]] -= room
                        for j in range(path_ptr[p], path_ptr[p + 1]):
                            load[path_links[j]] += room
                        moved_total += room
                        improved = True
        if not improved:
            break
    return moved_total


@njit(cache=True)
def select_paths(order, fp_ptr, path_ptr, path_links, x, pi, rcap, nmin, avail):
    """Pick one path and rate per flow, in the given processing order.

    For each flow the achievable rate on a candidate is
    min(cap, residual bottleneck) with cap = min(R, fractional throughput);
    the winner maximizes achievable rate, ties broken by larger fractional
    share then lower candidate index. Flows whose best achievable rate is
    zero or below their floor N stay unrouted (chosen == -1; minfail flags
    an unmet floor).
    """
    n_flows = fp_ptr.shape[0] - 1
    resid = avail.copy()
    chosen = np.full(n_flows, -1, dtype=np.int64)
    rate = np.zeros(n_flows)
    minfail = np.zeros(n_flows, dtype=np.int64)
    for oi in range(order.shape[0]):
        f = order[oi]
        cap = pi[f]
        if rcap[f] < cap:
            cap = rcap[f]
        if cap <= 0.0:
            if nmin[f] > 0.0:
                minfail[f] = 1
            continue
        lo = fp_ptr[f]
        hi = fp_ptr[f + 1]
        best = -1
        best_rate = 0.0
        best_share = -1.0
        for p in range(lo, hi):
            r = cap
            for j in range(path_ptr[p], path_ptr[p + 1]):
                c = resid[path_links[j]]
                if c < r:
                    r = c
            if r < 0.0:
                r = 0.0
            if r > best_rate or (r == best_rate and x[p] > best_share):
                best = p
                best_rate = r
                best_share = x[p]
        if best < 0 or best_rate <= 0.0:
            if nmin[f] > 0.0:
                minfail[f] = 1
            continue
        if best_rate < nmin[f]:
            minfail[f] = 1
            continue
        chosen[f] = best
        rate[f] = best_rate
        for j in range(path_ptr[best], path_ptr[best + 1]):
            l = path_links[j]
            resid[l] -= best_rate
            if resid[l] < 0.0:
                resid[l] = 0.0
    return chosen, rate, minfail


@njit(cache=True)
def path_loads(path_ptr, path_links, x, n_links):
    """Aggregate per-link load of a path-rate vector."""
    load = np.zeros(n_links, dtype=np.float64)
    for p in range(path_ptr.shape[0] - 1):
        r = x[p]
        if r > 0.0:
            for j in range(path_ptr[p], path_ptr[p + 1]):
                load[path_links[j]] += r
    return load


@njit(cache=True)
def greedy_fill(fp_ptr, path_ptr, path_links, resid, want, x):
    """Top flows up in id order, candidates in stored (cost) order.

    Mutates x and resid in place; want is read-only. Returns total added.
    """
    n_flows = fp_ptr.shape[0] - 1
    added = 0.0
    for i in range(n_flows):
        w = want[i]
        if w <= 1e-9:
            continue
        for p in range(fp_ptr[i], fp_ptr[i + 1]):
            if w <= 1e-9:
                break
            room = 1e300
            for j in range(path_ptr[p], path_ptr[p + 1]):
                a = resid[path_links[j]]
                if a < room:
                    room = a
            gain = w if w < room else room
            if gain > 1e-9:
                x[p] += gain
                w -= gain
                added += gain
                for j in range(path_ptr[p], path_ptr[p + 1]):
                    l = path_links[j]
                    r = resid[l] - gain
                    resid[l] = r if r > 0.0 else 0.0
    return added


@njit(cache=True)
def route_choices(order, fp_ptr, path_ptr, path_links, choice, rmax, rmin, resid):
    """Commit flows to externally chosen candidates, clipping to residuals.

    Flows are visited in `order`; each tries its chosen candidate first and
    falls back to the remaining candidates in stored order. A flow routes
    min(rmax, bottleneck) if that clears both zero and its rmin floor.
    Mutates resid. Returns (flat picked path index or -1, rate).
    """
    n = fp_ptr.shape[0] - 1
    picked = np.full(n, -1, dtype=np.int64)
    rate = np.zeros(n, dtype=np.float64)
    for oi in range(n):
        i = order[oi]
        lo = fp_ptr[i]
        hi = fp_ptr[i + 1]
        k = hi - lo
        if k <= 0:
            continue
        c = choice[i]
        if c < 0:
            c = 0
        if c >= k:
            c = k - 1
        for step in range(k):
            if step == 0:
                idx = c
            elif step - 1 < c:
                idx = step - 1
            else:
                idx = step
            p = lo + idx
            room = 1e300
            for j in range(path_ptr[p], path_ptr[p + 1]):
                a = resid[path_links[j]]
                if a < room:
                    room = a
            r = rmax[i] if rmax[i] < room else room
            if r <= 0.0:
                continue
            if r + 1e-9 < rmin[i]:
                continue
            picked[i] = p
            rate[i] = r
            for j in range(path_ptr[p], path_ptr[p + 1]):
                l = path_links[j]
                a = resid[l] - r
                resid[l] = a if a > 0.0 else 0.0
            break
    return picked, rate
