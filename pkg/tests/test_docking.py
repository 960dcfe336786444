import numpy as np
import pytest
import torch

from curvebind.docking import (DIVERGENCE_LIMIT, DivergenceError, DockingResult, coord_loss, distance_map_loss,
                               distance_maps, docking_loss, init_pose, load_pose, refine)
from curvebind.model import CWFBind, ModelConfig, prepare_complex
from curvebind.estimator import dock_complex
from curvebind.net import GraphState, Topology, stack_forward
from curvebind.synthetic import micro_complex

from .conftest import zero_coordinate_gates

TINY = ModelConfig(d_node=8, d_pair=4, d_opm=2, heads=2, M2=1, n_iterations=3)


def t(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def test_init_pose_cases():
    conf = np.array([[-1.0, 0, 0], [1.0, 0, 0]])
    np.testing.assert_array_equal(init_pose(conf, [1, 1, 1]), conf + 1)
    np.testing.assert_array_equal(init_pose(conf, [0, 0, 0]), conf)
    np.testing.assert_array_equal(init_pose([[4.0, 5.0, 6.0]], [1, 2, 3]), [[1, 2, 3]])
    torch.testing.assert_close(init_pose(t(conf), t([1, 1, 1])), t(conf + 1))


def docking_state(seed=0):
    model = CWFBind(TINY, seed=seed)
    inp = prepare_complex(micro_complex(seed))
    h_l, h_p = model.encode(inp)
    x0 = init_pose(t(inp.conformer), t(inp.ca).mean(0))
    state = GraphState(h_l, h_p, x0, t(inp.ca), model.dock_opm(h_l, h_p))
    return model, state, Topology.from_graphs(inp.ligand_graph, inp.protein_graph)


def test_zero_gates_keep_initial_pose():
    model, state, topo = docking_state()
    zero_coordinate_gates(model)
    with torch.no_grad():
        final, snaps = refine(state, topo, model.dock_layers, TINY.stack, 8, trace=True)
    torch.testing.assert_close(final.x_l, state.x_l, rtol=0, atol=0)
    assert len(snaps) == 8


def test_single_iteration_is_one_stack_pass():
    model, state, topo = docking_state(1)
    with torch.no_grad():
        final, _ = refine(state, topo, model.dock_layers, TINY.stack, 1)
        direct = stack_forward(state, topo, model.dock_layers, TINY.stack)
    torch.testing.assert_close(final.x_l, direct.x_l, rtol=0, atol=0)


def test_divergence_guard():
    model, state, topo = docking_state(2)
    far = GraphState(state.h_l, state.h_p, state.x_l + 2 * DIVERGENCE_LIMIT, state.x_p, state.z)
    with pytest.raises(DivergenceError) as err:
        with torch.no_grad():
            refine(far, topo, model.dock_layers, TINY.stack, 2)
    assert err.value.diagnostics["iteration"] == 0
    assert err.value.diagnostics["max_abs_coordinate"] > DIVERGENCE_LIMIT


def test_zero_gate_checkpoint_docks_to_predicted_center():
    model = zero_coordinate_gates(CWFBind(TINY, seed=3))
    rec = micro_complex(3)
    result, pocket = dock_complex(model, rec)
    expected = init_pose(rec.conformer_coords(), pocket.center)
    np.testing.assert_allclose(result.pose, expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("off, expected", [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5)])
def test_coord_loss(off, expected):
    truth = t([[0.0, 0, 0]])
    assert float(coord_loss(truth + t([off, 0, 0]), truth)) == expected


def test_coord_loss_averages_and_checks_shape():
    truth = t(np.zeros((2, 3)))
    assert float(coord_loss(t([[2.0, 0, 0], [0, 0, 0]]), truth)) == 0.75
    with pytest.raises(ValueError):
        coord_loss(truth, t(np.zeros((3, 3))))


def test_distance_map_loss_cases():
    D, Dt, Dh = t([[2.0]]), t([[3.0]]), t([[2.0]])
    assert float(distance_map_loss(D, Dt, Dh, 1.0)) == 2.0
    assert float(distance_map_loss(D, Dt, Dh, 0.0)) == 1.0
    assert float(distance_map_loss(D, D, D)) == 0.0
    with pytest.raises(ValueError):
        distance_map_loss(D, t([[1.0, 2.0]]), Dh)


def test_distance_maps_shapes_and_values():
    pred = t([[0.0, 0, 0], [3.0, 4, 0]])
    D, Dt, _ = distance_maps(pred, pred.numpy(), [[0.0, 0, 0]], torch.zeros(2, 1, dtype=torch.float64))
    assert D.shape == Dt.shape == (2, 1)
    torch.testing.assert_close(Dt[:, 0], t([0.0, 5.0]), atol=1e-8, rtol=0)


def test_docking_loss():
    assert docking_loss(1.25, 2.0) == 3.25


def test_result_round_trips():
    rng = np.random.default_rng(0)
    pose = rng.normal(size=(4, 3)) * 1e3
    res = DockingResult("abc", pose, ["C", "N", "O", "C"], snapshots=[pose * 0.5, pose])
    for text in (res.to_json(), res.to_xyz()):
        rid, coords = load_pose(text)
        assert rid == "abc"
        np.testing.assert_array_equal(coords, pose)
    assert res.to_xyz().count("iteration") == 2
