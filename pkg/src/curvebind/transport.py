"""Exact discrete optimal transport (earth mover's distance).

The transportation problem is solved as a min-cost flow by successive
shortest paths (SSP).  Source nodes carry ``mu``, sink nodes carry ``nu``,
every source-sink arc is uncapacitated with the given cost.  Shortest paths
come from a dense Bellman-Ford on the residual graph, which handles the
negative reverse-arc costs without potentials.  Problems here are tiny (node
degrees), so the kernel is a plain loop nest compiled with numba.
"""

from __future__ import annotations

import numba
import numpy as np

MASS_TOL = 1e-9


class InfeasibleTransport(ValueError):
    pass


@numba.njit(cache=True)
def _ssp(a, b, C, eps):
    m, n = a.shape[0], b.shape[0]
    supply = a.copy()
    demand = b.copy()
    flow = np.zeros((m, n))
    # warm start on zero-cost arcs: a flow using only cost-0 arcs is min-cost
    # for its value (reverse arcs cost 0, so the residual has no negative cycle)
    for i in range(m):
        for j in range(n):
            if C[i, j] == 0.0:
                amt = min(supply[i], demand[j])
                if amt > 0.0:
                    flow[i, j] += amt
                    supply[i] -= amt
                    demand[j] -= amt
    inf = np.inf
    dist_s = np.empty(m)
    dist_t = np.empty(n)
    pred_s = np.empty(m, np.int64)  # sink reached through a reverse arc, -1 = super source
    pred_t = np.empty(n, np.int64)  # source of the forward arc
    for _ in range(4 * (m + 1) * (n + 1) + 16):
        any_s = False
        any_t = False
        for i in range(m):
            if supply[i] > eps:
                any_s = True
        for j in range(n):
            if demand[j] > eps:
                any_t = True
        if not any_s or not any_t:
            return flow, 0
        for i in range(m):
            dist_s[i] = 0.0 if supply[i] > eps else inf
            pred_s[i] = -1
        for j in range(n):
            dist_t[j] = inf
            pred_t[j] = -1
        changed = True
        rounds = 0
        while changed and rounds <= m + n:
            changed = False
            rounds += 1
            for i in range(m):
                if dist_s[i] == inf:
                    continue
                for j in range(n):
                    d = dist_s[i] + C[i, j]
                    if d < dist_t[j] - 1e-15:
                        dist_t[j] = d
                        pred_t[j] = i
                        changed = True
            for i in range(m):
                for j in range(n):
                    if flow[i, j] > eps and dist_t[j] != inf:
                        d = dist_t[j] - C[i, j]
                        if d < dist_s[i] - 1e-15:
                            dist_s[i] = d
                            pred_s[i] = j
                            changed = True
        best = inf
        jb = -1
        for j in range(n):
            if demand[j] > eps and dist_t[j] < best:
                best = dist_t[j]
                jb = j
        if jb < 0:
            return flow, 1
        bottleneck = demand[jb]
        jt = jb
        reached = False
        for _hop in range(m + n + 1):
            i = pred_t[jt]
            back = pred_s[i]
            if back < 0:
                bottleneck = min(bottleneck, supply[i])
                reached = True
                break
            bottleneck = min(bottleneck, flow[i, back])
            jt = back
        if not reached:
            return flow, 2
        jt = jb
        for _hop in range(m + n + 1):
            i = pred_t[jt]
            back = pred_s[i]
            flow[i, jt] += bottleneck
            if back < 0:
                supply[i] -= bottleneck
                break
            flow[i, back] -= bottleneck
            if abs(flow[i, back]) <= eps:
                flow[i, back] = 0.0
            jt = back
        demand[jb] -= bottleneck
    return flow, 3


_FAILURES = {1: "no augmenting path", 2: "predecessor walk did not reach the source",
             3: "iteration limit reached"}


def transport_plan(mu, nu, cost) -> np.ndarray:
    """Optimal coupling of ``mu`` (rows) and ``nu`` (columns) under ``cost``."""
    a = np.array(mu, dtype=np.float64).ravel()
    b = np.array(nu, dtype=np.float64).ravel()
    C = np.ascontiguousarray(cost, dtype=np.float64)
    m, n = len(a), len(b)
    if C.shape != (m, n):
        raise ValueError(f"cost has shape {C.shape}, expected {(m, n)}")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ValueError("cost must be finite and non-negative")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("masses must be non-negative")
    if abs(a.sum() - b.sum()) > MASS_TOL:
        raise InfeasibleTransport(f"mass mismatch: {a.sum()!r} vs {b.sum()!r}")
    if m == 0 or n == 0:
        return np.zeros((m, n))
    scale = max(a.sum(), b.sum(), 1.0)
    flow, status = _ssp(a, b, C, 1e-14 * scale)
    if status:
        raise InfeasibleTransport(_FAILURES[status])
    return flow


def wasserstein1(mu, nu, cost) -> float:
    """Exact W1 cost between two discrete measures for a ground cost matrix."""
    plan = transport_plan(mu, nu, cost)
    return float(np.sum(plan * np.asarray(cost, dtype=np.float64)))
