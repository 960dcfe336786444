"""``curvebind`` command line: ingest, curvature, featurize, dump-graph, train, dock, eval, gradcheck.

Every run writes a manifest (command, config hash, seed, inputs, version,
per-stage timings).  Errors are reported on stderr as one JSON object and map
to exit codes 2 (validation), 3 (numeric divergence or failed gradient check)
and 4 (I/O).  Artifacts never carry timestamps, so identical inputs and seeds
give byte-identical files; only the manifest records wall-clock times.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._jsonio import dumps
from .curvature import curvature_tsv
from .docking import DivergenceError, load_pose
from .encoder import ligand_base_features, load_atom_feature_override, protein_base_features
from .metrics import MetricReport
from .model import DESK, ModelConfig, prepare_complex
from .molgraph import Graph, build_complex_graph, build_ligand_graph, build_protein_graph
from .structio import (SCHEMA, EmbeddingTable, FilterPolicy, MissingEmbeddingError, ParseError,
                       ValidationError, apply_filters, count_contacts, load_complex, load_embedding_table,
                       prune_chains)
from .trainer import (CheckpointError, TrainConfig, Trainer, gradcheck, load_checkpoint, load_config_document,
                      model_loss_fn, save_checkpoint)

log = logging.getLogger("curvebind")

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4
COMPLEX_SUFFIXES = (".json", ".pdb", ".ent")
POSE_SUFFIXES = (".json", ".xyz")
PRESETS = {
    "desk": DESK,
    "full": {},
    "tiny": dict(d_node=8, d_pair=4, d_opm=2, heads=2, M2=1, n_iterations=2),
}
GRADCHECK_TERMS = ("cls", "coord", "r", "dist", "total")


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION, **details):
        super().__init__(message)
        self.code = code
        self.details = details


class GradCheckFailed(CommandError):
    def __init__(self, failures):
        super().__init__("gradient check failed", EXIT_DIVERGENCE, failures=failures)


# -- manifest ------------------------------------------------------------------

class RunManifest:
    def __init__(self, command: str, argv: list[str]):
        self.command = command
        self.argv = list(argv)
        self.seed: int | None = None
        self.config: dict = {}
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.timing: dict[str, float] = {}
        self.started = datetime.now(timezone.utc).isoformat()
        self.exit_code: int | None = None

    @contextlib.contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timing[name] = self.timing.get(name, 0.0) + time.perf_counter() - t0

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(dumps(self.config, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "version": version_string(),
            "timing": self.timing,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "exit_code": self.exit_code,
        }


def version_string() -> str:
    try:
        from importlib.metadata import version
        return f"curvebind {__version__} (distribution {version('artifact')})"
    except Exception:
        return f"curvebind {__version__}"


# -- helpers ---------------------------------------------------------------------

def resolve_seed(explicit: int | None, configured: int | None = None) -> int:
    """``--seed``, then the config file, then ``CURVEBIND_SEED``, then 0."""
    if explicit is not None:
        return explicit
    if configured is not None:
        return configured
    env = os.environ.get("CURVEBIND_SEED")
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise CommandError(f"CURVEBIND_SEED must be an integer, got {env!r}") from None


def _expand(paths, suffixes) -> list[Path]:
    out = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.is_file() and q.suffix.lower() in suffixes))
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(f"{p}: no such file or directory")
    return out


def _is_index(path: Path) -> bool:
    if path.suffix.lower() != ".json":
        return False
    with path.open("rb") as fh:
        head = fh.read(4096)
    return b'"kept"' in head and SCHEMA.encode() not in head


def complex_paths(paths) -> list[Path]:
    """Complex files named directly, found in directories, or listed in an ingest index."""
    out = []
    for p in _expand(paths, COMPLEX_SUFFIXES):
        if _is_index(p):
            index = json.loads(p.read_text())
            out.extend((p.parent / entry["path"]) for entry in index["kept"])
        else:
            out.append(p)
    return out


def load_records(paths):
    files = complex_paths(paths)
    return files, [load_complex(f) for f in files]


def _embeddings(path) -> EmbeddingTable | None:
    return None if path is None else load_embedding_table(path)


def write_text(path: Path, text: str, manifest: RunManifest | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    if manifest is not None:
        manifest.outputs.append(str(path))


def configure_threads(args) -> None:
    import torch

    if getattr(args, "deterministic", False):
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
        args.jobs = 1


def _features_tsv(base: np.ndarray, lcf: np.ndarray, prefix: str) -> str:
    names = [f"{prefix}{k}" for k in range(base.shape[1])] + ["lcf_min", "lcf_max", "lcf_mean", "lcf_std",
                                                              "lcf_median"]
    rows = ["index\t" + "\t".join(names)]
    for i, (b, c) in enumerate(zip(base, lcf)):
        rows.append(f"{i}\t" + "\t".join(f"{v:.17g}" for v in np.concatenate([b, c])))
    return "\n".join(rows) + "\n"


def read_graph(path: Path) -> Graph:
    """Graph from JSON (``{"n": ..., "edges": [[u, v], ...]}``) or an edge list.

    Edge lists have one ``u v`` pair per line; ``#`` starts a comment and a
    ``nodes N`` line declares isolated trailing nodes.
    """
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
            pairs = [tuple(e) for e in doc["edges"]]
            n = int(doc.get("n", doc.get("nodes", 0) if not isinstance(doc.get("nodes"), list)
                            else len(doc["nodes"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed graph document ({exc})") from exc
    else:
        pairs, n = [], 0
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "nodes" and len(parts) == 2:
                    n = max(n, int(parts[1]))
                elif len(parts) == 2:
                    pairs.append((int(parts[0]), int(parts[1])))
                else:
                    raise ValueError("expected 'u v'")
            except ValueError as exc:
                raise ParseError(f"{path} line {lineno}: {exc}") from exc
    for u, v in pairs:
        if not isinstance(u, int) or not isinstance(v, int) or u < 0 or v < 0:
            raise ParseError(f"{path}: node ids must be non-negative integers, got ({u}, {v})")
        if u == v:
            raise ParseError(f"{path}: self-loop on node {u}")
    n = max([n] + [max(u, v) + 1 for u, v in pairs])
    return Graph.from_edges(n, np.zeros((n, 3)), pairs)


# -- subcommands -----------------------------------------------------------------

def cmd_ingest(args, manifest: RunManifest) -> int:
    policy = FilterPolicy.from_file(args.filter_policy) if args.filter_policy else FilterPolicy()
    manifest.config = {"policy": policy.__dict__, "prune_chains": args.prune_chains}
    out = Path(args.out)
    base = out.parent.resolve()
    kept, dropped, errors = [], [], []
    with manifest.stage("scan"):
        candidates = []
        for raw in args.paths:
            p = Path(raw)
            if p.is_dir():
                candidates.extend(sorted(q for q in p.iterdir() if q.is_file()
                                         and q.suffix.lower() in COMPLEX_SUFFIXES))
            else:
                candidates.append(p)
    manifest.inputs = [str(p) for p in candidates]
    with manifest.stage("filter"):
        for path in candidates:
            rel = os.path.relpath(path.resolve(), base)
            try:
                record = load_complex(path)
            except (OSError, ParseError, ValidationError, ValueError) as exc:
                errors.append({"path": rel, "error": type(exc).__name__, "message": str(exc)})
                continue
            if args.prune_chains:
                record = prune_chains(record, policy.contact_cutoff)
            decision = apply_filters(record, policy)
            entry = {"id": record.id, "path": rel, "n_atoms": record.n_atoms,
                     "n_residues": record.n_residues,
                     "contacts": count_contacts(record, policy.contact_cutoff)}
            if decision.keep:
                kept.append(entry)
            else:
                dropped.append({**entry, "reason": decision.reason})
    if not candidates:
        log.warning("no complex documents found in %s", ", ".join(args.paths))
    index = {"policy": policy.__dict__, "kept": kept, "dropped": dropped, "errors": errors}
    write_text(out, dumps(index, indent=1) + "\n", manifest)
    return EXIT_OK


def cmd_curvature(args, manifest: RunManifest) -> int:
    out = Path(args.out) if args.out else None
    tables = []
    with manifest.stage("curvature"):
        if args.graph:
            manifest.inputs = [args.graph]
            tables.append(("", curvature_tsv(read_graph(Path(args.graph)))))
        else:
            manifest.inputs = [args.complex]
            record = load_complex(args.complex)
            tables.append(("ligand.", curvature_tsv(build_ligand_graph(record))))
            tables.append(("protein.", curvature_tsv(build_protein_graph(record, args.protein_cutoff))))
    for label, (edges, nodes) in tables:
        if out is None:
            if label:
                sys.stdout.write(f"# {label.rstrip('.')}\n")
            sys.stdout.write(edges + "\n" + nodes)
        else:
            write_text(out.with_name(f"{out.name}.{label}edges.tsv"), edges, manifest)
            write_text(out.with_name(f"{out.name}.{label}nodes.tsv"), nodes, manifest)
    return EXIT_OK


def cmd_featurize(args, manifest: RunManifest) -> int:
    from . import curvature

    table = _embeddings(args.embeddings)
    manifest.config = {"protein_mode": args.protein_mode, "protein_cutoff": args.protein_cutoff}
    files, records = load_records(args.paths)
    manifest.inputs = [str(f) for f in files]
    out = Path(args.out)
    override = None
    if args.atom_features:
        if len(records) != 1:
            raise CommandError("--atom-features applies to exactly one complex")
        override = load_atom_feature_override(Path(args.atom_features).read_text(), records[0].n_atoms)
    with manifest.stage("featurize"):
        for record in records:
            lg = build_ligand_graph(record)
            pg = build_protein_graph(record, args.protein_cutoff)
            lig = ligand_base_features(record, lg) if override is None else override
            prot = protein_base_features(record, table, args.protein_mode)
            write_text(out / f"{record.id}.ligand.tsv", _features_tsv(lig, curvature.graph_lcf(lg), "f"),
                       manifest)
            write_text(out / f"{record.id}.protein.tsv", _features_tsv(prot, curvature.graph_lcf(pg), "f"),
                       manifest)
    return EXIT_OK


def cmd_dump_graph(args, manifest: RunManifest) -> int:
    manifest.inputs = [args.complex]
    manifest.config = {"protein_cutoff": args.protein_cutoff, "cross_cutoff": args.cross_cutoff}
    record = load_complex(args.complex)
    with manifest.stage("graph"):
        text = dumps(build_complex_graph(record, args.protein_cutoff, args.cross_cutoff).to_dict(), indent=1)
    if args.out:
        write_text(Path(args.out), text + "\n", manifest)
    else:
        sys.stdout.write(text + "\n")
    return EXIT_OK


def train_config_from_args(args) -> TrainConfig:
    base = TrainConfig.from_file(args.config).to_dict() if args.config else TrainConfig().to_dict()
    model = {**PRESETS[args.preset], **base.pop("model")}
    for name in ("max_steps", "epochs", "learning_rate", "batch_size", "T_p", "schedule"):
        value = getattr(args, name)
        if value is not None:
            base[name] = value
    for flag in ("no_lcf", "uniform_weights", "fixed_radius", "plain_bce"):
        if getattr(args, flag):
            base[flag] = True
    if args.protein_mode:
        model["protein_mode"] = args.protein_mode
    configured = None
    if args.config:
        doc = load_config_document(args.config)
        configured = doc.get("train", {}).get("seed", doc.get("seed"))
    base["seed"] = resolve_seed(args.seed, configured)
    return TrainConfig.from_dict({**base, "model": model})


def cmd_train(args, manifest: RunManifest) -> int:
    import torch

    from .model import CWFBind

    cfg = train_config_from_args(args)
    manifest.seed = cfg.seed
    manifest.config = cfg.to_dict()
    table = _embeddings(args.embeddings)
    with manifest.stage("load"):
        files, records = load_records(args.paths)
    manifest.inputs = [str(f) for f in files]
    with manifest.stage("prepare"):
        inputs = [prepare_complex(r, cfg.model_config().protein_mode, table) for r in records]
    usable = [inp for inp in inputs if inp.labels.trainable]
    if not usable:
        raise CommandError("no trainable complex among the inputs")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = CWFBind(cfg.model_config(), seed=cfg.seed)
    trainer = Trainer(model, cfg)
    log_path = out / "train.jsonl"
    with manifest.stage("train"), open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        history = trainer.fit(usable, log_stream=fh)
    manifest.outputs.append(str(log_path))
    rejected = sum(not h.accepted for h in history)
    if rejected:
        log.warning("%d of %d steps rejected", rejected, len(history))
    if history and rejected == len(history):
        raise CommandError("every optimizer step was rejected", EXIT_DIVERGENCE, steps=len(history))
    if not all(bool(torch.isfinite(p).all()) for p in model.parameters()):
        raise CommandError("non-finite parameters after training", EXIT_DIVERGENCE)
    with manifest.stage("checkpoint"):
        save_checkpoint(model, out / "checkpoint.json", extra={"train": cfg.to_dict()})
    manifest.outputs.append(str(out / "checkpoint.json"))
    return EXIT_OK


_WORKER: dict = {}


def _worker_init(checkpoint: str, embeddings: str | None) -> None:
    import torch

    torch.set_num_threads(1)
    _WORKER["model"] = load_checkpoint(checkpoint)
    _WORKER["table"] = _embeddings(embeddings)


def _worker_dock(job):
    from .estimator import dock_complex

    path, trace = job
    record = load_complex(path)
    try:
        result, pocket = dock_complex(_WORKER["model"], record, _WORKER["table"], trace)
    except DivergenceError as exc:
        return ("divergence", record.id, str(exc))
    return ("ok", result, pocket)


def cmd_dock(args, manifest: RunManifest) -> int:
    files = complex_paths(args.paths)
    manifest.inputs = [str(f) for f in files] + [args.checkpoint]
    with manifest.stage("load"):
        model = load_checkpoint(args.checkpoint)
    manifest.config = {"model": model.config.to_dict(), "format": args.format, "trace": args.trace}
    if model.config.protein_mode == "precomputed-1280" and args.embeddings is None:
        raise CommandError("checkpoint uses precomputed embeddings; pass --embeddings", EXIT_VALIDATION)
    out = Path(args.out)
    jobs = [(str(f), args.trace) for f in files]
    with manifest.stage("dock"):
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(args.jobs, initializer=_worker_init,
                                     initargs=(args.checkpoint, args.embeddings)) as pool:
                results = list(pool.map(_worker_dock, jobs))
        else:
            _WORKER["model"] = model
            _WORKER["table"] = _embeddings(args.embeddings)
            results = [_worker_dock(j) for j in jobs]
    diverged = []
    for res in results:
        if res[0] == "divergence":
            diverged.append({"id": res[1], "message": res[2]})
            continue
        _, result, pocket = res
        pose_text = result.to_json() if args.format == "json" else result.to_xyz()
        write_text(out / f"{result.id}.pose.{args.format}", pose_text, manifest)
        write_text(out / f"{result.id}.pocket.json", dumps({"id": result.id, **pocket.to_dict()}, indent=1) + "\n",
                   manifest)
        manifest.timing[f"forward:{result.id}"] = result.runtime
    if diverged:
        raise CommandError("docking diverged", EXIT_DIVERGENCE, complexes=diverged)
    return EXIT_OK


def cmd_eval(args, manifest: RunManifest) -> int:
    pose_files = []
    for raw in args.poses:
        p = Path(raw)
        if p.is_dir():
            # directories written by `dock`: pick the pose files only
            pose_files.extend(q for q in _expand([p], POSE_SUFFIXES) if ".pose." in q.name)
        else:
            pose_files.extend(_expand([p], POSE_SUFFIXES))
    truth_files, truths = load_records(args.truth)
    manifest.inputs = [str(p) for p in pose_files] + [str(f) for f in truth_files]
    by_id = {r.id: r for r in truths}
    ids, preds, refs = [], [], []
    with manifest.stage("match"):
        for path in pose_files:
            pid, pose = load_pose(path.read_text())
            if pid not in by_id:
                raise CommandError(f"{path}: no reference complex with id {pid!r}")
            ref = by_id[pid].ligand_coords()
            if pose.shape != ref.shape:
                raise CommandError(f"{pid}: pose has {len(pose)} atoms, reference has {len(ref)}")
            ids.append(pid)
            preds.append(pose)
            refs.append(ref)
    if not ids:
        raise CommandError("no poses to evaluate")
    with manifest.stage("metrics"):
        report = MetricReport.from_poses(ids, preds, refs)
    out = Path(args.out)
    write_text(out / "metrics.tsv", report.table_tsv(), manifest)
    write_text(out / "metrics.json", report.to_json() + "\n", manifest)
    return EXIT_OK


def cmd_gradcheck(args, manifest: RunManifest) -> int:
    from .model import CWFBind
    from .synthetic import micro_dataset

    seed = resolve_seed(args.seed)
    manifest.seed = seed
    model_kw = dict(PRESETS[args.preset])
    if args.config:
        cfg = TrainConfig.from_file(args.config)
        model_kw.update(cfg.model)
        model_cfg = TrainConfig.from_dict({**cfg.to_dict(), "model": model_kw}).model_config()
    else:
        model_cfg = ModelConfig(**model_kw)
    terms = args.terms.split(",")
    bad = [t for t in terms if t not in GRADCHECK_TERMS + ("pocket", "cen", "docking")]
    if bad:
        raise CommandError(f"unknown loss terms {bad}")
    manifest.config = {"model": model_cfg.to_dict(), "terms": terms, "step": args.step,
                       "tolerance": args.tolerance, "samples": args.samples, "granularity": args.granularity}
    if args.paths:
        files, records = load_records(args.paths)
        manifest.inputs = [str(f) for f in files]
    else:
        records = micro_dataset(args.instances, seed=seed)
    model = CWFBind(model_cfg, seed=seed)
    instances, failures = [], []
    with manifest.stage("gradcheck"):
        for k, record in enumerate(records[:args.instances]):
            inp = prepare_complex(record, model_cfg.protein_mode)
            if not inp.labels.trainable:
                continue
            entry = {"id": record.id, "terms": {}}
            for term in terms:
                rep = gradcheck(model, model_loss_fn(inp, term, seed=seed + k), args.step, args.tolerance,
                                args.samples, seed=seed + k, granularity=args.granularity)
                entry["terms"][term] = rep.to_dict()
                failures += [f"{record.id}:{term}:{b}" for b in rep.failures]
            instances.append(entry)
    report = {"passed": not failures, "failures": failures, "tolerance": args.tolerance, "step": args.step,
              "instances": instances}
    text = dumps(report, indent=1) + "\n"
    if args.out:
        write_text(Path(args.out), text, manifest)
    else:
        sys.stdout.write(text)
    if failures:
        raise GradCheckFailed(failures)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvebind", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version_string())
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True, out_help="output path"):
        p.add_argument("--out", "-o", required=out_required, help=out_help)
        p.add_argument("--manifest", help="manifest path (default: next to the outputs)")
        p.add_argument("--seed", type=int, default=None, help="seed (falls back to $CURVEBIND_SEED, then 0)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for per-complex work")
        p.add_argument("--deterministic", action="store_true", help="single thread, serial reductions")

    p = sub.add_parser("ingest", help="filter complexes and write a dataset index")
    p.add_argument("paths", nargs="+", help="complex files or directories")
    p.add_argument("--filter-policy", help="JSON filter policy")
    p.add_argument("--prune-chains", action="store_true", help="drop chains far from the ligand first")
    common(p, out_help="index JSON path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("curvature", help="edge curvature and local curvature features as TSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--graph", help="edge list or JSON graph")
    src.add_argument("--complex", help="complex document (ligand and protein graphs)")
    p.add_argument("--protein-cutoff", type=float, default=8.0)
    common(p, out_required=False, out_help="output prefix (stdout when absent)")
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("featurize", help="node feature tables (base features and curvature features)")
    p.add_argument("paths", nargs="+")
    p.add_argument("--embeddings")
    p.add_argument("--protein-mode", default="fallback-25", choices=("fallback-25", "precomputed-1280"))
    p.add_argument("--protein-cutoff", type=float, default=8.0)
    p.add_argument("--atom-features", help="per-atom feature override TSV (single complex)")
    common(p, out_help="output directory")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("dump-graph", help="ligand, protein and cross edges as JSON")
    p.add_argument("complex")
    p.add_argument("--protein-cutoff", type=float, default=8.0)
    p.add_argument("--cross-cutoff", type=float, default=10.0)
    common(p, out_required=False)
    p.set_defaults(func=cmd_dump_graph)

    p = sub.add_parser("train", help="train a model and write a checkpoint and a JSON-lines log")
    p.add_argument("paths", nargs="+", help="complex files, directories or an ingest index")
    p.add_argument("--config", help="TOML or JSON config")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="architecture widths")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--T-p", dest="T_p", type=int, help="curriculum switch epoch")
    p.add_argument("--schedule", choices=("constant", "linear", "constant-then-linear"))
    p.add_argument("--protein-mode", choices=("fallback-25", "precomputed-1280"))
    p.add_argument("--embeddings")
    p.add_argument("--no-lcf", action="store_true", help="drop curvature features")
    p.add_argument("--uniform-weights", action="store_true", help="plain mean instead of degree weights")
    p.add_argument("--fixed-radius", action="store_true", help="constant pocket radius")
    p.add_argument("--plain-bce", action="store_true", help="unweighted cross-entropy instead of focal loss")
    common(p, out_help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dock", help="dock complexes with a checkpoint")
    p.add_argument("paths", nargs="+")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--format", choices=("json", "xyz"), default="json")
    p.add_argument("--trace", action="store_true", help="include per-iteration snapshots")
    common(p, out_help="output directory")
    p.set_defaults(func=cmd_dock)

    p = sub.add_parser("eval", help="ligand RMSD and centroid distance report")
    p.add_argument("--poses", nargs="+", required=True)
    p.add_argument("--truth", nargs="+", required=True)
    common(p, out_help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p.add_argument("paths", nargs="*", help="complexes (synthetic ones when absent)")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(PRESETS), default="tiny")
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--terms", default=",".join(GRADCHECK_TERMS))
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--granularity", choices=("mlp", "component"), default="component")
    common(p, out_required=False)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _manifest_path(args) -> Path | None:
    if args.manifest:
        return Path(args.manifest)
    if not args.out:
        return None
    out = Path(args.out)
    if args.command in ("featurize", "train", "dock", "eval"):
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def _classify(exc: BaseException) -> tuple[int, dict]:
    if isinstance(exc, CommandError):
        return exc.code, exc.details
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE, {k: v for k, v in exc.diagnostics.items() if k != "coords"}
    if isinstance(exc, (ParseError, ValidationError, CheckpointError, MissingEmbeddingError,
                        ValueError, TypeError, KeyError)):
        return EXIT_VALIDATION, {}
    if isinstance(exc, OSError):
        return EXIT_IO, {"path": getattr(exc, "filename", None)}
    raise exc


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else
                        logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    manifest = RunManifest(args.command, argv)
    code = EXIT_OK
    try:
        if args.jobs < 1:
            raise CommandError("--jobs must be >= 1")
        configure_threads(args)
        if manifest.seed is None and args.command not in ("train", "gradcheck"):
            manifest.seed = resolve_seed(args.seed)
        code = args.func(args, manifest)
    except Exception as exc:  # reported as machine-readable JSON
        code, details = _classify(exc)
        error = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if details:
            error["details"] = details
        sys.stderr.write(dumps(error) + "\n")
    manifest.exit_code = code
    path = _manifest_path(args)
    text = dumps(manifest.to_dict(), indent=1) + "\n"
    try:
        if path is None:
            sys.stderr.write(text)
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
    except OSError as exc:
        sys.stderr.write(dumps({"error": "OSError", "message": f"manifest: {exc}", "exit_code": EXIT_IO}) + "\n")
        code = code or EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
