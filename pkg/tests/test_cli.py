import json

import numpy as np
import pytest

from curvebind.cli import main, resolve_seed
from curvebind.docking import init_pose, load_pose
from curvebind.model import CWFBind, ModelConfig
from curvebind.structio import dumps_complex
from curvebind.synthetic import micro_dataset
from curvebind.trainer import save_checkpoint

from .conftest import contact_fixture, zero_coordinate_gates

TINY = ["--preset", "tiny"]


def write_records(directory, records):
    directory.mkdir(parents=True, exist_ok=True)
    for rec in records:
        (directory / f"{rec.id}.json").write_text(dumps_complex(rec))
    return directory


def error_of(capsys):
    err = capsys.readouterr().err
    return json.loads(next(line for line in err.splitlines() if line.startswith('{"error"')))


@pytest.fixture(scope="module")
def complexes(tmp_path_factory):
    return write_records(tmp_path_factory.mktemp("data") / "cx", micro_dataset(2, seed=31))


# -- ingest -------------------------------------------------------------------------------

def test_ingest_filters_with_reasons(tmp_path):
    src = write_records(tmp_path / "in", [contact_fixture(5, 20, "few"), contact_fixture(50, 100, "big"),
                                          contact_fixture(6, 99, "ok")])
    (src / "broken.json").write_text("{not json")
    assert main(["ingest", str(src), "-o", str(tmp_path / "index.json")]) == 0
    index = json.loads((tmp_path / "index.json").read_text())
    assert [e["id"] for e in index["kept"]] == ["ok"]
    assert {e["id"]: e["reason"] for e in index["dropped"]} == {"few": "contacts", "big": "ligand_size"}
    assert len(index["errors"]) == 1
    first = (tmp_path / "index.json").read_bytes()
    main(["ingest", str(src), "-o", str(tmp_path / "index.json")])
    assert (tmp_path / "index.json").read_bytes() == first
    manifest = json.loads((tmp_path / "index.json.manifest.json").read_text())
    assert manifest["command"] == "ingest" and manifest["exit_code"] == 0 and manifest["version"]


def test_ingest_empty_directory_warns(tmp_path, caplog):
    (tmp_path / "empty").mkdir()
    assert main(["ingest", str(tmp_path / "empty"), "-o", str(tmp_path / "i.json")]) == 0
    assert json.loads((tmp_path / "i.json").read_text())["kept"] == []
    assert "no complex" in caplog.text


# -- curvature / featurize / dump-graph ---------------------------------------------------

def test_curvature_of_triangle(tmp_path):
    (tmp_path / "k3.txt").write_text("0 1\n1 2\n0 2\n")
    assert main(["curvature", "--graph", str(tmp_path / "k3.txt"), "-o", str(tmp_path / "k3")]) == 0
    rows = (tmp_path / "k3.edges.tsv").read_text().splitlines()[1:]
    assert [float(r.split("\t")[-1]) for r in rows] == [0.5, 0.5, 0.5]


def test_curvature_of_empty_graph(tmp_path, capsys):
    (tmp_path / "g.json").write_text(json.dumps({"n": 4, "edges": []}))
    assert main(["curvature", "--graph", str(tmp_path / "g.json")]) == 0
    out = capsys.readouterr().out.splitlines()
    node_rows = [line for line in out if line and line[0].isdigit() and len(line.split("\t")) == 6]
    assert len(node_rows) == 4
    assert all(float(v) == 0 for row in node_rows for v in row.split("\t")[1:])


def test_curvature_of_complex_writes_two_tables(complexes, tmp_path):
    doc = next(complexes.iterdir())
    assert main(["curvature", "--complex", str(doc), "-o", str(tmp_path / "c")]) == 0
    names = sorted(p.name for p in tmp_path.iterdir() if p.suffix == ".tsv")
    assert names == ["c.ligand.edges.tsv", "c.ligand.nodes.tsv", "c.protein.edges.tsv", "c.protein.nodes.tsv"]


def test_malformed_graph_is_validation_error(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("0 0\n")
    assert main(["curvature", "--graph", str(tmp_path / "bad.txt")]) == 2
    assert error_of(capsys)["exit_code"] == 2


def test_featurize_and_dump_graph(complexes, tmp_path):
    assert main(["featurize", str(complexes), "-o", str(tmp_path / "f")]) == 0
    lig = sorted((tmp_path / "f").glob("*.ligand.tsv"))
    assert len(lig) == 2
    header = lig[0].read_text().splitlines()[0].split("\t")
    assert len(header) == 1 + 52 + 5
    doc = next(complexes.iterdir())
    assert main(["dump-graph", str(doc), "-o", str(tmp_path / "g.json")]) == 0
    assert set(json.loads((tmp_path / "g.json").read_text())) == {"ligand", "protein", "cross"}


def test_missing_input_is_io_error(tmp_path, capsys):
    assert main(["dump-graph", str(tmp_path / "nope.json")]) == 4
    assert error_of(capsys)["error"] in ("FileNotFoundError", "OSError")


# -- train / dock / eval --------------------------------------------------------------------

def test_train_dock_eval(complexes, tmp_path):
    assert main(["train", str(complexes), *TINY, "--max-steps", "2", "-o", str(tmp_path / "run")]) == 0
    ckpt = tmp_path / "run" / "checkpoint.json"
    assert len((tmp_path / "run" / "train.jsonl").read_text().splitlines()) == 2
    assert main(["dock", str(complexes), "--checkpoint", str(ckpt), "-o", str(tmp_path / "poses")]) == 0
    assert len(list((tmp_path / "poses").glob("*.pose.json"))) == 2
    assert main(["eval", "--poses", str(tmp_path / "poses"), "--truth", str(complexes),
                 "-o", str(tmp_path / "ev")]) == 0
    table = (tmp_path / "ev" / "metrics.tsv").read_text().splitlines()
    assert table[0].split("\t")[1:] == ["25%", "50%", "75%", "Mean", "2A", "5A"]


def test_dock_jobs_matches_serial(complexes, tmp_path):
    ckpt = tmp_path / "m.json"
    save_checkpoint(CWFBind(ModelConfig(d_node=8, d_pair=4, d_opm=2, heads=2, M2=1, n_iterations=2)), ckpt)
    main(["dock", str(complexes), "--checkpoint", str(ckpt), "-o", str(tmp_path / "a")])
    main(["dock", str(complexes), "--checkpoint", str(ckpt), "-o", str(tmp_path / "b"), "--jobs", "2"])
    for p in sorted((tmp_path / "a").glob("*.pose.json")):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_zero_gate_checkpoint_docks_to_predicted_center(complexes, tmp_path):
    model = zero_coordinate_gates(CWFBind(ModelConfig(d_node=8, d_pair=4, d_opm=2, heads=2, M2=1)))
    save_checkpoint(model, tmp_path / "zero.json")
    doc = sorted(complexes.iterdir())[0]
    assert main(["dock", str(doc), "--checkpoint", str(tmp_path / "zero.json"), "--format", "xyz",
                 "-o", str(tmp_path / "out")]) == 0
    pose_file = next((tmp_path / "out").glob("*.pose.xyz"))
    _, pose = load_pose(pose_file.read_text())
    pocket = json.loads(next((tmp_path / "out").glob("*.pocket.json")).read_text())
    from curvebind.structio import load_complex

    conformer = load_complex(doc).conformer_coords()
    np.testing.assert_allclose(pose, init_pose(conformer, pocket["center"]), atol=1e-12, rtol=0)


def test_eval_identical_is_zero(complexes, tmp_path):
    from curvebind.docking import DockingResult
    from curvebind.structio import load_complex

    poses = tmp_path / "poses"
    poses.mkdir()
    for doc in complexes.iterdir():
        rec = load_complex(doc)
        (poses / f"{rec.id}.pose.json").write_text(DockingResult(rec.id, rec.ligand_coords(), []).to_json())
    assert main(["eval", "--poses", str(poses), "--truth", str(complexes), "-o", str(tmp_path / "ev")]) == 0
    for row in (tmp_path / "ev" / "metrics.tsv").read_text().splitlines()[1:]:
        assert [float(v) for v in row.split("\t")[1:5]] == [0.0, 0.0, 0.0, 0.0]


def test_bad_checkpoint_is_validation_error(complexes, tmp_path, capsys):
    (tmp_path / "bad.json").write_text('{"format": "curvebind-checkpoint", "version": 7}')
    code = main(["dock", str(complexes), "--checkpoint", str(tmp_path / "bad.json"), "-o", str(tmp_path / "o")])
    assert code == 2 and error_of(capsys)["error"] == "CheckpointVersionError"


def test_train_manifest_and_ablation_flags(complexes, tmp_path):
    out = tmp_path / "abl"
    assert main(["train", str(complexes), *TINY, "--max-steps", "1", "--fixed-radius", "--plain-bce",
                 "--seed", "9", "-o", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 9 and manifest["config"]["fixed_radius"] and manifest["config"]["plain_bce"]
    assert len(manifest["config_hash"]) == 64 and "train" in manifest["timing"]
    ckpt = json.loads((out / "checkpoint.json").read_text())
    assert ckpt["config"]["fixed_radius"] and ckpt["config"]["plain_bce"] and not ckpt["config"]["uniform_weights"]


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv("CURVEBIND_SEED", "17")
    assert resolve_seed(None) == 17
    assert resolve_seed(None, 5) == 5
    assert resolve_seed(3, 5) == 3
    monkeypatch.delenv("CURVEBIND_SEED")
    assert resolve_seed(None) == 0


def test_gradcheck_command(tmp_path):
    out = tmp_path / "gc.json"
    assert main(["gradcheck", "--instances", "1", "--terms", "r", "--samples", "10", "-o", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"]
