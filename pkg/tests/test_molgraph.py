import json

import numpy as np
import pytest

from curvebind.molgraph import build_complex_graph, build_cross_edges, build_ligand_graph, build_protein_graph

from .conftest import make_record


def test_path_degrees():
    rec = make_record([[0, 0, 0]], [[0, 0, 0], [1.5, 0, 0], [3, 0, 0]], bonds=[(0, 1), (1, 2)])
    g = build_ligand_graph(rec)
    assert g.degree.tolist() == [1, 2, 1]
    assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (1, 2)]


def test_isolated_atom():
    g = build_ligand_graph(make_record([[0, 0, 0]], [[0, 0, 0]]))
    assert g.degree.tolist() == [0] and g.n_edges == 0


def test_six_cycle():
    ang = np.linspace(0, 2 * np.pi, 7)[:-1]
    lig = np.stack([1.4 * np.cos(ang), 1.4 * np.sin(ang), np.zeros(6)], 1)
    g = build_ligand_graph(make_record([[0, 0, 0]], lig, bonds=[(k, (k + 1) % 6) for k in range(6)]))
    assert g.degree.tolist() == [2] * 6


@pytest.mark.parametrize("d, edge", [(7.5, True), (8.0, True), (8.01, False)])
def test_protein_cutoff_is_inclusive(d, edge):
    g = build_protein_graph(make_record([[0, 0, 0], [d, 0, 0]], [[0, 0, 0]]))
    assert (g.n_edges == 1) is edge


@pytest.mark.parametrize("d, present", [(9.99, True), (10.0, False)])
def test_cross_cutoff_is_strict(d, present):
    cross = build_cross_edges(make_record([[0, 0, 0]], [[d, 0, 0]]))
    assert (len(cross) == 1) is present


def test_far_ligand_has_no_cross_edges():
    assert len(build_cross_edges(make_record([[0, 0, 0], [4, 0, 0]], [[40, 0, 0]]))) == 0


def test_subgraph_keeps_induced_edges():
    ca = [[0, 0, 0], [5, 0, 0], [10, 0, 0], [15, 0, 0]]
    g = build_protein_graph(make_record(ca, [[0, 0, 0]]))
    sub = g.subgraph([1, 2, 3])
    assert sub.n == 3
    assert sorted(map(tuple, sub.edges.tolist())) == [(0, 1), (1, 2)]
    assert sub.degree.tolist() == [1, 2, 1]


def test_dump_is_json():
    rec = make_record([[0, 0, 0], [5, 0, 0]], [[1, 0, 0], [2.5, 0, 0]], bonds=[(0, 1)])
    doc = json.loads(build_complex_graph(rec).dumps())
    assert doc["ligand"]["edges"] == [[0, 1]]
    assert set(doc) == {"ligand", "protein", "cross"}
