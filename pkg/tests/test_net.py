import numpy as np
import pytest
import torch
from torch import nn

from curvebind.net import (EDGE_BLOCK, CWFLayer, EdgeMLP, GraphState, InterfaceMessaging, StackConfig, Topology, contact_pairs,
                           cross_attention_update, degree_weights, independent_update, interface_update,
                           layer_forward, segment_softmax, stack_forward)
from curvebind.molgraph import Graph
from curvebind.synthetic import random_rigid_motion

CFG = StackConfig(d_node=8, d_pair=4, d_opm=2, heads=2, M1=1, M2=2, freeze_protein=False)


def f64(x):
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def random_state(seed, n_l=5, n_p=7, cfg=CFG):
    rng = np.random.default_rng(seed)
    lig = np.cumsum(rng.normal(scale=1.0, size=(n_l, 3)), axis=0)
    prot = lig.mean(0) + rng.normal(scale=4.0, size=(n_p, 3))
    lg = Graph.from_edges(n_l, lig, [(k, k + 1) for k in range(n_l - 1)])
    pg = Graph.from_edges(n_p, prot, [(j, k) for j in range(n_p) for k in range(j + 1, n_p)
                                     if np.linalg.norm(prot[j] - prot[k]) <= 8.0])
    state = GraphState(f64(rng.normal(size=(n_l, cfg.d_node))), f64(rng.normal(size=(n_p, cfg.d_node))),
                       f64(lig), f64(prot), f64(rng.normal(size=(n_l, n_p, cfg.d_pair))))
    return state, Topology.from_graphs(lg, pg)


def layer(seed=0, cfg=CFG, gate=None):
    torch.manual_seed(seed)
    m = CWFLayer(cfg).double()
    if gate is not None:
        for mod in (m.lig_msg.phi_x, m.prot_msg.phi_x, m.lig_iface.phi_xv, m.prot_iface.phi_xv):
            nn.init.constant_(mod.fc2.weight, gate)
            nn.init.constant_(mod.fc2.bias, gate)
    return m


def test_degree_weights():
    # receiver 0 with neighbours of degree 1 and 3
    edges = torch.tensor([[0, 1], [0, 2]])
    w = degree_weights(edges, f64([2, 1, 3]), 3)
    torch.testing.assert_close(w, f64([0.25, 0.75]))
    torch.testing.assert_close(degree_weights(edges[:1], f64([1, 1, 3]), 3), f64([1.0]))
    torch.testing.assert_close(degree_weights(edges, f64([2, 1, 3]), 3, uniform=True), f64([0.5, 0.5]))


def test_segment_softmax():
    logits = f64([1.0, 2.0, 5.0, 0.3])
    seg = torch.tensor([0, 0, 1, 2])
    out = segment_softmax(logits, seg, 3)
    torch.testing.assert_close(out[2:], f64([1.0, 1.0]))
    torch.testing.assert_close(out[:2], torch.softmax(logits[:2], 0))


def test_zero_gate_keeps_coordinates_but_updates_h():
    state, topo = random_state(0)
    m = layer(gate=0.0)
    h, x = independent_update(state, topo, m, "ligand")
    torch.testing.assert_close(x, state.x_l)
    assert not torch.allclose(h, state.h_l)


def test_interface_single_neighbour_and_empty():
    torch.manual_seed(0)
    m = InterfaceMessaging(8, 4).double()
    h_r, x_r = f64(np.random.default_rng(0).normal(size=(2, 8))), f64([[0, 0, 0], [50, 0, 0]])
    h_s, x_s = f64(np.random.default_rng(1).normal(size=(1, 8))), f64([[1, 0, 0]])
    pairs = torch.tensor([[0, 0]])
    h_new, x_new = m(h_r, x_r, h_s, x_s, pairs, f64(np.zeros((1, 4))))
    # residue 1 has no contact: untouched
    torch.testing.assert_close(h_new[1], h_r[1])
    torch.testing.assert_close(x_new[1], x_r[1])
    h0, x0 = m(h_r, x_r, h_s, x_s, torch.zeros((0, 2), dtype=torch.long), f64(np.zeros((0, 4))))
    assert h0 is h_r and x0 is x_r


def test_cross_attention_single_residue_and_zero_output():
    state, _ = random_state(1, n_p=1)
    m = layer(1)
    nn.init.zeros_(m.cross.out_l.weight)
    nn.init.zeros_(m.cross.out_l.bias)
    out = cross_attention_update(state, m)
    torch.testing.assert_close(out.h_l, state.h_l)


def test_all_gates_zero_freeze_coordinates_through_layer_and_stack():
    state, topo = random_state(2)
    layers = [layer(3, gate=0.0), layer(4, gate=0.0)]
    one = layer_forward(state, topo, layers[0], CFG)
    torch.testing.assert_close(one.x_l, state.x_l)
    two = stack_forward(state, topo, layers, CFG)
    torch.testing.assert_close(two.x_l, state.x_l)
    torch.testing.assert_close(two.x_p, state.x_p)


def test_stack_of_one_is_layer_forward():
    state, topo = random_state(3)
    m = layer(5)
    a = stack_forward(state, topo, [m], CFG)
    b = layer_forward(state, topo, m, CFG)
    torch.testing.assert_close(a.x_l, b.x_l, rtol=0, atol=0)
    torch.testing.assert_close(a.h_p, b.h_p, rtol=0, atol=0)


def test_frozen_protein_keeps_residue_coordinates():
    cfg = StackConfig(d_node=8, d_pair=4, d_opm=2, heads=2, freeze_protein=True)
    state, topo = random_state(4)
    out = layer_forward(state, topo, layer(6, cfg, gate=0.5), cfg)
    torch.testing.assert_close(out.x_p, state.x_p, rtol=0, atol=0)
    assert not torch.allclose(out.x_l, state.x_l)


def test_contact_pairs_strict_cutoff():
    pairs = contact_pairs(f64([[0, 0, 0]]), f64([[9.99, 0, 0], [10.0, 0, 0]]))
    assert pairs.tolist() == [[0, 0]]


@pytest.mark.parametrize("seed", range(5))
def test_layer_equivariance(seed):
    state, topo = random_state(10 + seed)
    m = layer(seed, gate=0.02)
    Q, t = random_rigid_motion(np.random.default_rng(seed), reflect=bool(seed % 2))
    Qt, tt = f64(Q), f64(t)
    moved = GraphState(state.h_l, state.h_p, state.x_l @ Qt.T + tt, state.x_p @ Qt.T + tt, state.z)
    with torch.no_grad():
        a = stack_forward(state, topo, [m, layer(seed + 50, gate=0.02)], CFG)
        b = stack_forward(moved, topo, [m, layer(seed + 50, gate=0.02)], CFG)
    torch.testing.assert_close(b.x_l, a.x_l @ Qt.T + tt, atol=1e-9, rtol=0)
    assert a.x_l.abs().max() < 100
    torch.testing.assert_close(b.x_p, a.x_p @ Qt.T + tt, atol=1e-9, rtol=0)
    torch.testing.assert_close(b.h_l, a.h_l, atol=1e-9, rtol=0)
    torch.testing.assert_close(b.z, a.z, atol=1e-9, rtol=0)


def test_fast_paths_match_explicit_messages():
    state, topo = random_state(7)
    m = layer(8)
    with torch.no_grad():
        h_fast, _ = independent_update(state, topo, m, "protein", update_coords=False)
        h_full, _ = independent_update(state, topo, m, "protein", update_coords=True)
        pairs = contact_pairs(state.x_l, state.x_p)
        assert len(pairs)
        hi_fast, _ = interface_update(state, pairs, m, "protein", update_coords=False)
        hi_full, _ = interface_update(state, pairs, m, "protein", update_coords=True)
    torch.testing.assert_close(h_fast, h_full, atol=1e-12, rtol=0)
    torch.testing.assert_close(hi_fast, hi_full, atol=1e-12, rtol=0)


def test_blocked_aggregation_matches_autograd_path():
    torch.manual_seed(3)
    mlp = EdgeMLP(6, 6, 5).double()
    n, e = 40, 2 * EDGE_BLOCK + 17
    recv, send = torch.randint(0, n, (e,)), torch.randint(0, n, (e,))
    h = torch.randn(n, 6, dtype=torch.float64)
    d2 = torch.rand(e, 1, dtype=torch.float64) * 50
    w = torch.rand(e, dtype=torch.float64)
    for weight in (None, w):
        with torch.no_grad():
            fast = mlp.aggregate(n, recv, h, send, h, d2, weight)
        ref = torch.zeros(n, 5, dtype=torch.float64).index_add(
            0, recv, mlp(recv, h, send, h, d2) * (1.0 if weight is None else weight[:, None]))
        torch.testing.assert_close(fast, ref.detach(), atol=1e-12, rtol=0)


def test_permuting_ligand_atoms_permutes_outputs():
    state, topo = random_state(9, n_l=4)
    m = layer(9, gate=0.2)
    perm = torch.tensor([2, 0, 3, 1])
    inv = torch.argsort(perm)
    lig_edges = inv[topo.lig_edges]
    ptopo = Topology(lig_edges, topo.lig_degree[perm], topo.prot_edges, topo.prot_degree)
    pstate = GraphState(state.h_l[perm], state.h_p, state.x_l[perm], state.x_p, state.z[perm])
    with torch.no_grad():
        a = layer_forward(state, topo, m, CFG)
        b = layer_forward(pstate, ptopo, m, CFG)
    torch.testing.assert_close(b.x_l, a.x_l[perm], atol=1e-12, rtol=0)
    torch.testing.assert_close(b.h_p, a.h_p, atol=1e-12, rtol=0)
