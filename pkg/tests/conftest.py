import numpy as np
import pytest
import torch
from torch import nn

from curvebind.structio import Bond, ComplexRecord, LigandAtom, Residue, count_contacts


def make_record(ca, lig, bonds=(), rid="fixture", types=None, conformer=None):
    ca = np.asarray(ca, dtype=float).reshape(-1, 3)
    lig = np.asarray(lig, dtype=float).reshape(-1, 3)
    types = types or ["ALA"] * len(ca)
    residues = tuple(Residue(t, tuple(map(float, p))) for t, p in zip(types, ca))
    atoms = tuple(LigandAtom("C", tuple(map(float, p))) for p in lig)
    conf = None if conformer is None else tuple(tuple(map(float, p)) for p in conformer)
    return ComplexRecord(rid, residues, atoms, tuple(Bond(i, j, 1) for i, j in bonds), None, conf)


def contact_fixture(n_contacts, n_atoms, rid="fixture"):
    """One residue within 10 A of exactly ``n_contacts`` atoms of an ``n_atoms`` ligand."""
    lig = np.zeros((n_atoms, 3))
    lig[:, 0] = np.arange(n_atoms) * 0.01
    lig[n_contacts:, 1] = 500.0
    rec = make_record([[0, 0, 0], [1000, 0, 0]], lig, rid=rid)
    assert count_contacts(rec) == n_contacts
    return rec


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def zero_coordinate_gates(model):
    """Zero every coordinate-update gate so poses pass through unchanged."""
    for layer in list(model.pocket_layers) + list(model.dock_layers):
        for mod in (layer.lig_msg.phi_x, layer.prot_msg.phi_x, layer.lig_iface.phi_xv, layer.prot_iface.phi_xv):
            nn.init.zeros_(mod.fc2.weight)
            nn.init.zeros_(mod.fc2.bias)
    return model


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
