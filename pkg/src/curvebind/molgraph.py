"""Ligand, protein and cross-edge graphs of a complex.

Protein edges use an inclusive cutoff (``<= 8 A``); ligand/protein cross
edges use a strict one (``< 10 A``).  Both cutoffs can be overridden.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jsonio import dumps
from .structio import ComplexRecord, pairwise_distances

PROTEIN_CUTOFF = 8.0
CROSS_CUTOFF = 10.0


def _degrees(n: int, edges: np.ndarray) -> np.ndarray:
    deg = np.zeros(n, dtype=np.int64)
    if len(edges):
        np.add.at(deg, edges[:, 0], 1)
        np.add.at(deg, edges[:, 1], 1)
    return deg


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph with coordinates.

    ``edges`` is an ``(m, 2)`` int array with ``i < j`` in lexicographic order.
    """

    n: int
    coords: np.ndarray
    edges: np.ndarray
    degree: np.ndarray

    @classmethod
    def from_edges(cls, n: int, coords: np.ndarray, pairs) -> "Graph":
        pairs = sorted({(min(i, j), max(i, j)) for i, j in pairs if i != j})
        edges = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        coords = np.asarray(coords, dtype=np.float64).reshape(n, 3)
        return cls(n, coords, edges, _degrees(n, edges))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nbrs[i].append(int(j))
            nbrs[j].append(int(i))
        return [sorted(x) for x in nbrs]

    def directed_edges(self) -> np.ndarray:
        """Both orientations of every edge, as ``(src, dst)`` rows."""
        if not len(self.edges):
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate([self.edges, self.edges[:, ::-1]], axis=0)

    def subgraph(self, nodes) -> "Graph":
        """Induced subgraph on ``nodes`` (relabelled 0..k-1 in the given order)."""
        nodes = np.asarray(list(nodes), dtype=np.int64)
        remap = np.full(self.n, -1, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        edges = remap[self.edges].reshape(-1, 2)
        edges = np.sort(edges[(edges >= 0).all(axis=1)], axis=1)
        edges = np.unique(edges, axis=0).reshape(-1, 2)
        return Graph(len(nodes), self.coords[nodes].reshape(-1, 3), edges, _degrees(len(nodes), edges))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "coords": self.coords.tolist(),
            "edges": self.edges.tolist(),
            "degree": self.degree.tolist(),
        }


LigandGraph = Graph
ProteinGraph = Graph


@dataclass(frozen=True)
class CrossEdges:
    """Ligand atom -> residue pairs, ``pairs[:, 0]`` ligand, ``pairs[:, 1]`` residue."""

    pairs: np.ndarray
    cutoff: float = CROSS_CUTOFF

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class ComplexGraph:
    ligand: Graph
    protein: Graph
    cross: CrossEdges

    def to_dict(self) -> dict:
        return {
            "ligand": self.ligand.to_dict(),
            "protein": self.protein.to_dict(),
            "cross": {"cutoff": self.cross.cutoff, "pairs": self.cross.pairs.tolist()},
        }

    def dumps(self) -> str:
        return dumps(self.to_dict())


def build_ligand_graph(record: ComplexRecord) -> Graph:
    return Graph.from_edges(record.n_atoms, record.ligand_coords(),
                            [(b.i, b.j) for b in record.ligand_bonds])


def protein_edges(ca: np.ndarray, cutoff: float = PROTEIN_CUTOFF) -> np.ndarray:
    ca = np.asarray(ca, dtype=np.float64).reshape(-1, 3)
    d = pairwise_distances(ca, ca)
    i, j = np.nonzero(np.triu(d <= cutoff, k=1))
    return np.stack([i, j], axis=1).astype(np.int64)


def build_protein_graph(record: ComplexRecord, cutoff: float = PROTEIN_CUTOFF) -> Graph:
    ca = record.ca_coords()
    edges = protein_edges(ca, cutoff)
    return Graph(len(ca), ca, edges, _degrees(len(ca), edges))


def cross_pairs(ligand_xyz: np.ndarray, ca: np.ndarray, cutoff: float = CROSS_CUTOFF) -> np.ndarray:
    if len(ligand_xyz) == 0 or len(ca) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    i, j = np.nonzero(pairwise_distances(ligand_xyz, ca) < cutoff)
    return np.stack([i, j], axis=1).astype(np.int64)


def build_cross_edges(record: ComplexRecord, cutoff: float = CROSS_CUTOFF) -> CrossEdges:
    return CrossEdges(cross_pairs(record.ligand_coords(), record.ca_coords(), cutoff), cutoff)


def build_complex_graph(record: ComplexRecord, protein_cutoff: float = PROTEIN_CUTOFF,
                        cross_cutoff: float = CROSS_CUTOFF) -> ComplexGraph:
    return ComplexGraph(
        build_ligand_graph(record),
        build_protein_graph(record, protein_cutoff),
        build_cross_edges(record, cross_cutoff),
    )
