"""Ollivier-Ricci curvature of graph edges and Local Curvature Features (LCF).

For an edge (u, v) both endpoints carry the uniform measure over their
one-hop neighbourhood (no mass on the node itself).  The curvature is
``1 - W1(m_u, m_v)`` with hop-count ground cost in the full graph.  A node's
LCF is ``[min, max, mean, std, median]`` of the curvatures of its incident
edges; std is the population std, isolated nodes get zeros.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .molgraph import Graph
from .transport import wasserstein1

LCF_WIDTH = 5
LCF_NAMES = ("lcf_min", "lcf_max", "lcf_mean", "lcf_std", "lcf_median")


class UndefinedMeasureError(ValueError):
    pass


class UnreachableError(ValueError):
    pass


@dataclass(frozen=True)
class NeighborMeasure:
    support: tuple[int, ...]
    mass: tuple[float, ...]

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.support, self.mass))


def _neighbor_lists(graph: Graph) -> list[list[int]]:
    return graph.neighbors()


def neighbor_measure(graph: Graph, node: int, _nbrs=None) -> NeighborMeasure:
    nbrs = (_nbrs or _neighbor_lists(graph))[node]
    if not nbrs:
        raise UndefinedMeasureError(f"node {node} has no neighbours")
    return NeighborMeasure(tuple(nbrs), tuple(1.0 / len(nbrs) for _ in nbrs))


def _bfs(nbrs: list[list[int]], source: int, max_depth: int | None = None) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        x = queue.popleft()
        if max_depth is not None and dist[x] >= max_depth:
            continue
        for y in nbrs[x]:
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    return dist


def local_distances(graph: Graph, S, T, _nbrs=None, max_depth: int | None = None) -> np.ndarray:
    """Hop-count shortest-path distances between node sets ``S`` and ``T``."""
    nbrs = _nbrs or _neighbor_lists(graph)
    out = np.empty((len(S), len(T)))
    for a, s in enumerate(S):
        dist = _bfs(nbrs, s, max_depth)
        for b, t in enumerate(T):
            if t not in dist:
                raise UnreachableError(f"no path between {s} and {t}")
            out[a, b] = dist[t]
    return out


def _adjacent(nbrs: list[list[int]], u: int, v: int) -> bool:
    return v in nbrs[u]


def edge_curvature(graph: Graph, u: int, v: int, _nbrs=None, _balls=None) -> float:
    nbrs = _nbrs or _neighbor_lists(graph)
    if u == v or not _adjacent(nbrs, u, v):
        raise ValueError(f"({u}, {v}) is not an edge")
    mu = neighbor_measure(graph, u, nbrs)
    nu = neighbor_measure(graph, v, nbrs)
    # neighbourhoods of adjacent nodes are at most 3 hops apart
    if _balls is None:
        cost = local_distances(graph, mu.support, nu.support, nbrs, max_depth=3)
    else:
        cost = np.array([[_balls[s][t] for t in nu.support] for s in mu.support], dtype=np.float64)
    return 1.0 - wasserstein1(mu.mass, nu.mass, cost)


def edge_curvatures(graph: Graph) -> np.ndarray:
    """Curvature of every edge in ``graph.edges`` order."""
    nbrs = _neighbor_lists(graph)
    balls = [_bfs(nbrs, s, max_depth=3) for s in range(graph.n)]
    return np.array([edge_curvature(graph, int(u), int(v), nbrs, balls) for u, v in graph.edges],
                    dtype=np.float64)


def lcf_statistics(values) -> np.ndarray:
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        return np.zeros(LCF_WIDTH)
    return np.array([vals.min(), vals.max(), vals.mean(), vals.std(), np.median(vals)])


def node_lcf(graph: Graph, v: int, kappa: np.ndarray | None = None) -> np.ndarray:
    if kappa is None:
        kappa = edge_curvatures(graph)
    if not graph.n_edges:
        return np.zeros(LCF_WIDTH)
    incident = (graph.edges[:, 0] == v) | (graph.edges[:, 1] == v)
    return lcf_statistics(kappa[incident])


def graph_lcf(graph: Graph, kappa: np.ndarray | None = None) -> np.ndarray:
    """``(n, 5)`` LCF matrix; each edge curvature is computed once."""
    if kappa is None:
        kappa = edge_curvatures(graph)
    cms: list[list[float]] = [[] for _ in range(graph.n)]
    for (u, v), k in zip(graph.edges, kappa):
        cms[u].append(k)
        cms[v].append(k)
    out = np.zeros((graph.n, LCF_WIDTH))
    for node, values in enumerate(cms):
        out[node] = lcf_statistics(values)
    return out


def curvature_tsv(graph: Graph) -> tuple[str, str]:
    """``(edge table, node table)`` as TSV text."""
    kappa = edge_curvatures(graph)
    lcf = graph_lcf(graph, kappa)
    edge_rows = ["u\tv\tkappa"] + [f"{u}\t{v}\t{k:.17g}" for (u, v), k in zip(graph.edges, kappa)]
    node_rows = ["node\t" + "\t".join(LCF_NAMES)]
    node_rows += [f"{i}\t" + "\t".join(f"{x:.17g}" for x in row) for i, row in enumerate(lcf)]
    return "\n".join(edge_rows) + "\n", "\n".join(node_rows) + "\n"
