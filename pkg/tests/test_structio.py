import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvebind.structio import (EMBEDDING_MAGIC, EmbeddingTable, FilterPolicy, MissingEmbeddingError, ParseError,
                                ValidationError, apply_filters, count_contacts, dump_embedding_binary,
                                dump_embedding_tsv, dumps_complex, load_embedding_table, parse_complex,
                                prune_chains, record_from_dict)
from curvebind.synthetic import micro_complex

from .conftest import contact_fixture, make_record


def minimal_doc(**extra):
    doc = {"schema": "curvebind-complex/1", "id": "m",
           "residues": [{"residue_type": "GLY", "ca_xyz": [0, 0, 0]}],
           "ligand_atoms": [{"element": "C", "xyz": [1, 0, 0]}], "ligand_bonds": []}
    doc.update(extra)
    return doc


def test_minimal_json_record():
    rec = parse_complex(json.dumps(minimal_doc()))
    assert rec.n_atoms == 1 and rec.n_residues == 1


def test_duplicate_bond_is_rejected():
    doc = minimal_doc(ligand_atoms=[{"element": "C", "xyz": [0, 0, 0]}, {"element": "O", "xyz": [1, 0, 0]}],
                      ligand_bonds=[{"i": 0, "j": 1}, {"i": 1, "j": 0}])
    with pytest.raises(ValidationError):
        parse_complex(json.dumps(doc))


def test_malformed_json_reports_position():
    with pytest.raises(ParseError, match="line 1"):
        parse_complex('{"id": ')


def test_missing_coordinates_is_validation_error():
    doc = minimal_doc(ligand_atoms=[{"element": "C"}])
    with pytest.raises(ValidationError):
        record_from_dict(doc)


def test_unknown_schema():
    with pytest.raises(ParseError):
        record_from_dict(minimal_doc(schema="other/9"))


PDB = """\
ATOM      1  N   ALA A   1      -1.000   0.000   0.000  1.00  0.00           N
ATOM      2  CA  ALA A   1       0.000   0.000   0.000  1.00  0.00           C
ATOM      3  CA  GLY A   2       3.800   0.000   0.000  1.00  0.00           C
ATOM      4  CA  TRP A   3       7.600   0.000   0.000  1.00  0.00           C
HETATM    5  C1  LIG A 101       2.000   2.000   0.000  1.00  0.00           C
HETATM    6  O1  LIG A 101       3.200   2.000   0.000  1.00  0.00           O
HETATM    7  O   HOH A 201       9.000   9.000   9.000  1.00  0.00           O
CONECT    5    6    6
CONECT    6    5    5
END
"""


def test_pdb_with_ligand_block():
    rec = parse_complex(PDB, "pdb+ligand", id_hint="toy")
    # independent scan of the fixture
    ca_lines = [line for line in PDB.splitlines() if line.startswith("ATOM") and line[12:16].strip() == "CA"]
    assert rec.n_residues == len(ca_lines) == 3
    assert rec.n_atoms == 2
    assert [r.residue_type for r in rec.residues] == ["ALA", "GLY", "TRP"]
    assert [a.element for a in rec.ligand_atoms] == ["C", "O"]
    assert len(rec.ligand_bonds) == 1 and rec.ligand_bonds[0].order == 2


def test_json_round_trip_is_exact():
    rec = micro_complex(3)
    again = parse_complex(dumps_complex(rec))
    assert again == rec


@pytest.mark.parametrize("z, expected", [(9.99, 1), (10.0, 0)])
def test_contact_boundary_is_strict(z, expected):
    rec = make_record([[0, 0, 0]], [[0, 0, z]])
    assert count_contacts(rec, 10.0) == expected


def test_contacts_complete_bipartite():
    rec = make_record([[0, 0, 0], [0.5, 0, 0]], [[0, 0.5, 0], [0, 0, 0.5]])
    assert count_contacts(rec) == 4


@pytest.mark.parametrize("contacts, atoms, keep, reason", [
    (5, 20, False, "contacts"),
    (6, 20, True, None),
    (50, 100, False, "ligand_size"),
    (6, 99, True, None),
])
def test_filter_thresholds(contacts, atoms, keep, reason):
    decision = apply_filters(contact_fixture(contacts, atoms), FilterPolicy())
    assert decision.keep is keep and decision.reason == reason


def test_filter_policy_validation():
    with pytest.raises(ValueError):
        FilterPolicy(contact_cutoff=0)


def test_prune_chains_drops_distant_chain():
    from curvebind.structio import ComplexRecord, Residue

    base = make_record([[0, 0, 0]], [[1, 0, 0]])
    residues = (Residue("ALA", (0.0, 0.0, 0.0), "A"), Residue("GLY", (50.0, 0.0, 0.0), "B"))
    rec = ComplexRecord("c", residues, base.ligand_atoms)
    assert [r.chain for r in prune_chains(rec).residues] == ["A"]


def test_embedding_table_tsv_and_lookup():
    rows = np.arange(3 * 1280, dtype=float).reshape(3, 1280) / 7
    table = EmbeddingTable()
    table.add("prot", rows)
    loaded = load_embedding_table(dump_embedding_tsv(table).encode())
    assert len(loaded) == 1 and loaded.width == 1280
    np.testing.assert_array_equal(loaded.lookup("prot", 3), rows)
    with pytest.raises(MissingEmbeddingError):
        loaded.lookup("other", 3)


def test_empty_table():
    table = load_embedding_table(b"")
    assert len(table) == 0 and table.width is None
    with pytest.raises(MissingEmbeddingError):
        table.lookup("x", 1)


def test_fallback_width_table_is_accepted():
    table = load_embedding_table(b"k\t0\t" + b"\t".join(b"0.5" for _ in range(30)) + b"\n")
    assert table.width == 30


def test_ragged_table_is_rejected():
    with pytest.raises(ParseError):
        load_embedding_table(b"k\t0\t1\t2\nk\t1\t1\n")


def test_binary_table_round_trip():
    rows = np.random.default_rng(0).normal(size=(4, 6))
    blob = dump_embedding_binary(rows)
    assert blob[:8] == EMBEDDING_MAGIC and struct.unpack("<II", blob[8:16]) == (6, 4)
    table = load_embedding_table(blob, key="p")
    np.testing.assert_array_equal(table.lookup("p", 4), rows)
    with pytest.raises(ParseError):
        load_embedding_table(blob[:-8], key="p")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)),
                min_size=1, max_size=6))
def test_round_trip_arbitrary_coordinates(points):
    rec = make_record(points, points[:1])
    assert parse_complex(dumps_complex(rec)) == rec
