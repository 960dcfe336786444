"""Complex documents: parsing, validation, dataset filtering, embedding tables.

A complex is held as a :class:`ComplexRecord`.  The canonical on-disk form is
a JSON document tagged ``"schema": "curvebind-complex/1"``; a minimal PDB
reader (Calpha atoms + one HETATM ligand block + CONECT bonds) is provided for
convenience.
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Iterable

import numpy as np

from ._jsonio import dumps

log = logging.getLogger(__name__)

SCHEMA = "curvebind-complex/1"
BOND_ORDERS = (1, 2, 3, "aromatic")
EMBEDDING_MAGIC = b"CBEMB\x00\x01\x00"
EXCLUDED_HET = frozenset({"HOH", "WAT", "DOD", "NA", "CL", "K", "MG", "CA", "ZN", "MN", "SO4", "PO4"})


class ParseError(ValueError):
    """Malformed document; message carries the offending line or field."""


class ValidationError(ValueError):
    """Well-formed document that violates a record invariant."""


class MissingEmbeddingError(KeyError):
    pass


@dataclass(frozen=True)
class Residue:
    residue_type: str
    ca_xyz: tuple[float, float, float]
    chain: str | None = None


@dataclass(frozen=True)
class LigandAtom:
    element: str
    xyz: tuple[float, float, float]
    formal_charge: int = 0
    aromatic: bool = False
    in_ring: bool = False
    h_count: int = 0
    chirality: str = "none"  # none | CW | CCW


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: int | str = 1


@dataclass(frozen=True)
class ComplexRecord:
    id: str
    residues: tuple[Residue, ...]
    ligand_atoms: tuple[LigandAtom, ...]
    ligand_bonds: tuple[Bond, ...] = ()
    embedding_key: str | None = None
    # input geometry for docking; reference ligand xyz are used when absent
    conformer: tuple[tuple[float, float, float], ...] | None = None

    @property
    def n_atoms(self) -> int:
        return len(self.ligand_atoms)

    @property
    def n_residues(self) -> int:
        return len(self.residues)

    def ca_coords(self) -> np.ndarray:
        return np.asarray([r.ca_xyz for r in self.residues], dtype=np.float64).reshape(-1, 3)

    def ligand_coords(self) -> np.ndarray:
        return np.asarray([a.xyz for a in self.ligand_atoms], dtype=np.float64).reshape(-1, 3)

    def conformer_coords(self) -> np.ndarray:
        if self.conformer is None:
            return self.ligand_coords()
        return np.asarray(self.conformer, dtype=np.float64).reshape(-1, 3)

    def with_coords(self, ca: np.ndarray | None = None, ligand: np.ndarray | None = None,
                    conformer: np.ndarray | None = None) -> "ComplexRecord":
        """Copy of the record with some coordinate blocks replaced."""
        residues = self.residues
        if ca is not None:
            residues = tuple(Residue(r.residue_type, _vec(c), r.chain) for r, c in zip(self.residues, ca))
        atoms = self.ligand_atoms
        if ligand is not None:
            atoms = tuple(_replace_xyz(a, c) for a, c in zip(self.ligand_atoms, ligand))
        conf = self.conformer
        if conformer is not None:
            conf = tuple(_vec(c) for c in conformer)
        return ComplexRecord(self.id, residues, atoms, self.ligand_bonds, self.embedding_key, conf)


def _vec(c: Iterable[float]) -> tuple[float, float, float]:
    x, y, z = (float(v) for v in c)
    return (x, y, z)


def _replace_xyz(atom: LigandAtom, xyz) -> LigandAtom:
    return LigandAtom(atom.element, _vec(xyz), atom.formal_charge, atom.aromatic,
                      atom.in_ring, atom.h_count, atom.chirality)


def validate_record(record: ComplexRecord) -> ComplexRecord:
    """Check the record invariants, raising :class:`ValidationError`."""
    n = record.n_atoms
    for k, r in enumerate(record.residues):
        if len(r.ca_xyz) != 3 or not all(math.isfinite(v) for v in r.ca_xyz):
            raise ValidationError(f"residues[{k}].ca_xyz: non-finite or malformed coordinate")
    for k, a in enumerate(record.ligand_atoms):
        if len(a.xyz) != 3 or not all(math.isfinite(v) for v in a.xyz):
            raise ValidationError(f"ligand_atoms[{k}].xyz: non-finite or malformed coordinate")
        if a.h_count < 0:
            raise ValidationError(f"ligand_atoms[{k}].h_count: negative")
        if a.chirality not in ("none", "CW", "CCW"):
            raise ValidationError(f"ligand_atoms[{k}].chirality: {a.chirality!r}")
    seen = set()
    for k, b in enumerate(record.ligand_bonds):
        if not (0 <= b.i < n and 0 <= b.j < n):
            raise ValidationError(f"ligand_bonds[{k}]: endpoint out of range")
        if b.i == b.j:
            raise ValidationError(f"ligand_bonds[{k}]: self-loop on atom {b.i}")
        if b.order not in BOND_ORDERS:
            raise ValidationError(f"ligand_bonds[{k}].order: {b.order!r}")
        key = (min(b.i, b.j), max(b.i, b.j))
        if key in seen:
            raise ValidationError(f"ligand_bonds[{k}]: duplicate bond {key}")
        seen.add(key)
    if record.conformer is not None:
        if len(record.conformer) != n:
            raise ValidationError("conformer: row count differs from ligand atom count")
        if not np.all(np.isfinite(np.asarray(record.conformer, dtype=np.float64))):
            raise ValidationError("conformer: non-finite coordinate")
    return record


# ---------------------------------------------------------------- JSON format

def _coord(value: Any, where: str) -> tuple[float, float, float]:
    if value is None:
        raise ValidationError(f"{where}: missing coordinates")
    try:
        xyz = _vec(value)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: expected 3 numbers, got {value!r}") from exc
    return xyz


def record_from_dict(doc: dict) -> ComplexRecord:
    if not isinstance(doc, dict):
        raise ParseError("top level: expected an object")
    schema = doc.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ParseError(f"schema: unsupported {schema!r}")
    try:
        residues = tuple(
            Residue(str(r["residue_type"]).upper(), _coord(r.get("ca_xyz"), f"residues[{k}].ca_xyz"),
                    r.get("chain"))
            for k, r in enumerate(doc["residues"])
        )
        atoms = tuple(
            LigandAtom(
                element=str(a["element"]),
                xyz=_coord(a.get("xyz"), f"ligand_atoms[{k}].xyz"),
                formal_charge=int(a.get("formal_charge", 0)),
                aromatic=bool(a.get("aromatic", False)),
                in_ring=bool(a.get("in_ring", False)),
                h_count=int(a.get("h_count", 0)),
                chirality=str(a.get("chirality", "none")),
            )
            for k, a in enumerate(doc["ligand_atoms"])
        )
        bonds = tuple(
            Bond(int(b["i"]), int(b["j"]), b.get("order", 1))
            for b in doc.get("ligand_bonds", [])
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}") from exc
    conformer = doc.get("conformer")
    if conformer is not None:
        conformer = tuple(_coord(c, f"conformer[{k}]") for k, c in enumerate(conformer))
    record = ComplexRecord(
        id=str(doc.get("id", "")),
        residues=residues,
        ligand_atoms=atoms,
        ligand_bonds=bonds,
        embedding_key=doc.get("embedding_key"),
        conformer=conformer,
    )
    return validate_record(record)


def record_to_dict(record: ComplexRecord) -> dict:
    doc: dict[str, Any] = {
        "schema": SCHEMA,
        "id": record.id,
        "residues": [],
        "ligand_atoms": [],
        "ligand_bonds": [{"i": b.i, "j": b.j, "order": b.order} for b in record.ligand_bonds],
        "embedding_key": record.embedding_key,
    }
    for r in record.residues:
        entry: dict[str, Any] = {"residue_type": r.residue_type, "ca_xyz": list(r.ca_xyz)}
        if r.chain is not None:
            entry["chain"] = r.chain
        doc["residues"].append(entry)
    for a in record.ligand_atoms:
        doc["ligand_atoms"].append({
            "element": a.element, "formal_charge": a.formal_charge, "aromatic": a.aromatic,
            "in_ring": a.in_ring, "h_count": a.h_count, "chirality": a.chirality, "xyz": list(a.xyz),
        })
    if record.conformer is not None:
        doc["conformer"] = [list(c) for c in record.conformer]
    return doc


def dumps_complex(record: ComplexRecord) -> str:
    # 17 significant digits round-trip every float64 exactly
    return dumps(record_to_dict(record), indent=1)


# ----------------------------------------------------------------- PDB format

def _parse_pdb(text: str, id_hint: str) -> ComplexRecord:
    residues: list[Residue] = []
    atoms: list[LigandAtom] = []
    serial_to_index: dict[int, int] = {}
    bond_counts: dict[tuple[int, int], int] = {}
    ligand_res: tuple[str, str, str] | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        rec = line[:6].strip()
        if rec not in ("ATOM", "HETATM", "CONECT"):
            continue
        try:
            if rec == "CONECT":
                fields = [int(line[k:k + 5]) for k in range(6, len(line.rstrip()), 5) if line[k:k + 5].strip()]
                if not fields:
                    continue
                a = fields[0]
                for b in fields[1:]:
                    if a in serial_to_index and b in serial_to_index and a < b:
                        key = (serial_to_index[a], serial_to_index[b])
                        bond_counts[key] = bond_counts.get(key, 0) + 1
                    elif a in serial_to_index and b in serial_to_index and a > b:
                        key = (serial_to_index[b], serial_to_index[a])
                        bond_counts.setdefault(key, 0)
                continue
            name = line[12:16].strip()
            resname = line[17:20].strip()
            chain = line[21].strip() or None
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except (ValueError, IndexError) as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
        if rec == "ATOM":
            if name == "CA":
                residues.append(Residue(resname.upper(), xyz, chain))
            continue
        if resname.upper() in EXCLUDED_HET:
            continue
        resid = (resname, chain or "", line[22:26].strip())
        if ligand_res is None:
            ligand_res = resid
        elif resid != ligand_res:
            continue
        element = line[76:78].strip() or "".join(ch for ch in name if ch.isalpha())[:1]
        element = element[:1].upper() + element[1:].lower()
        charge_field = line[78:80].strip()
        charge = 0
        if charge_field:
            sign = -1 if charge_field.endswith("-") else 1
            charge = sign * int(charge_field.rstrip("+-") or 0)
        try:
            serial = int(line[6:11])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: bad atom serial") from exc
        serial_to_index[serial] = len(atoms)
        atoms.append(LigandAtom(element=element, xyz=xyz, formal_charge=charge))
    bonds = []
    for (i, j), count in sorted(bond_counts.items()):
        bonds.append(Bond(i, j, min(max(count, 1), 3)))
    record = ComplexRecord(id=id_hint, residues=tuple(residues), ligand_atoms=tuple(atoms),
                           ligand_bonds=tuple(bonds))
    return validate_record(record)


def parse_complex(document: bytes | str | BinaryIO, format: str = "json-complex",
                  id_hint: str = "") -> ComplexRecord:
    """Parse a complex document.

    ``format`` is ``"json-complex"`` or ``"pdb+ligand"``.  Raises
    :class:`ParseError` on malformed input and :class:`ValidationError` when a
    record invariant fails.
    """
    if hasattr(document, "read"):
        document = document.read()
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"byte {exc.start}: not UTF-8") from exc
    if format == "json-complex":
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        return record_from_dict(doc)
    if format == "pdb+ligand":
        return _parse_pdb(document, id_hint)
    raise ValueError(f"unknown format {format!r}")


def load_complex(path: str | Path) -> ComplexRecord:
    path = Path(path)
    fmt = "pdb+ligand" if path.suffix.lower() in (".pdb", ".ent") else "json-complex"
    return parse_complex(path.read_bytes(), fmt, id_hint=path.stem)


# ------------------------------------------------------------------ filtering

@dataclass(frozen=True)
class FilterPolicy:
    contact_cutoff: float = 10.0
    min_contacts_exclusive: int = 5
    max_ligand_atoms_exclusive: int = 100

    def __post_init__(self):
        if not self.contact_cutoff > 0:
            raise ValueError("contact_cutoff must be positive")
        if self.min_contacts_exclusive < 0 or self.max_ligand_atoms_exclusive < 0:
            raise ValueError("thresholds must be non-negative")

    @classmethod
    def from_file(cls, path: str | Path) -> "FilterPolicy":
        return cls(**json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str | None = None


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = np.asarray(a, dtype=np.float64)[:, None, :] - np.asarray(b, dtype=np.float64)[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def count_contacts(record: ComplexRecord, cutoff: float = 10.0) -> int:
    """Number of (residue, ligand atom) pairs closer than ``cutoff`` (strict)."""
    if record.n_residues == 0 or record.n_atoms == 0:
        return 0
    return int(np.count_nonzero(pairwise_distances(record.ca_coords(), record.ligand_coords()) < cutoff))


def apply_filters(record: ComplexRecord, policy: FilterPolicy = FilterPolicy()) -> FilterDecision:
    if count_contacts(record, policy.contact_cutoff) <= policy.min_contacts_exclusive:
        return FilterDecision(False, "contacts")
    if record.n_atoms >= policy.max_ligand_atoms_exclusive:
        return FilterDecision(False, "ligand_size")
    return FilterDecision(True)


def prune_chains(record: ComplexRecord, cutoff: float = 10.0) -> ComplexRecord:
    """Drop chains with no Calpha within ``cutoff`` of any ligand atom.

    Records without chain ids are returned unchanged.
    """
    if not record.residues or any(r.chain is None for r in record.residues):
        return record
    near = pairwise_distances(record.ca_coords(), record.ligand_coords()).min(axis=1) < cutoff
    keep_chains = {r.chain for r, ok in zip(record.residues, near) if ok}
    residues = tuple(r for r in record.residues if r.chain in keep_chains)
    if len(residues) == len(record.residues):
        return record
    return ComplexRecord(record.id, residues, record.ligand_atoms, record.ligand_bonds,
                         record.embedding_key, record.conformer)


# ----------------------------------------------------------- embedding tables

@dataclass
class EmbeddingTable:
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    width: int | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def add(self, key: str, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ParseError(f"{key}: expected a 2-d matrix")
        if self.width is None:
            self.width = rows.shape[1]
        elif rows.shape[1] != self.width:
            raise ParseError(f"{key}: width {rows.shape[1]} differs from table width {self.width}")
        self.entries[key] = rows

    def lookup(self, key: str | None, n_rows: int | None = None) -> np.ndarray:
        if key is None or key not in self.entries:
            raise MissingEmbeddingError(key)
        rows = self.entries[key]
        if n_rows is not None and rows.shape[0] != n_rows:
            raise ValidationError(f"{key}: {rows.shape[0]} embedding rows for {n_rows} residues")
        return rows


def _load_tsv_table(text: str) -> EmbeddingTable:
    grouped: dict[str, dict[int, list[float]]] = {}
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 3:
            raise ParseError(f"line {lineno}: expected key, residue_index, values")
        try:
            idx = int(parts[1])
            values = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(f"line {lineno}: ragged row of width {len(values)}, expected {width}")
        grouped.setdefault(parts[0], {})[idx] = values
    table = EmbeddingTable()
    for key, rows in grouped.items():
        if sorted(rows) != list(range(len(rows))):
            raise ParseError(f"{key}: residue indices are not 0..{len(rows) - 1}")
        table.add(key, np.asarray([rows[i] for i in range(len(rows))], dtype=np.float64))
    return table


def load_embedding_table(file: bytes | BinaryIO | str | Path, key: str | None = None) -> EmbeddingTable:
    """Load an embedding table from TSV text or the binary matrix format.

    The binary format is a 16-byte header (8-byte magic, uint32 width, uint32
    rows, little-endian) followed by row-major float64 values; it holds one
    matrix stored under ``key`` (the file stem when loading from a path).
    """
    if isinstance(file, (str, Path)):
        path = Path(file)
        key = key or path.stem
        file = path.read_bytes()
    if hasattr(file, "read"):
        file = file.read()
    data: bytes = file
    if data.startswith(EMBEDDING_MAGIC):
        if len(data) < 16:
            raise ParseError("binary table: truncated header")
        width, rows = struct.unpack("<II", data[8:16])
        body = data[16:]
        if len(body) != 8 * width * rows:
            raise ParseError(f"binary table: expected {8 * width * rows} payload bytes, got {len(body)}")
        table = EmbeddingTable()
        table.add(key or "default", np.frombuffer(body, dtype="<f8").reshape(rows, width).astype(np.float64))
        return table
    try:
        return _load_tsv_table(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError("embedding table: neither binary nor UTF-8 TSV") from exc


def dump_embedding_binary(rows: np.ndarray) -> bytes:
    rows = np.ascontiguousarray(rows, dtype="<f8")
    return EMBEDDING_MAGIC + struct.pack("<II", rows.shape[1], rows.shape[0]) + rows.tobytes()


def dump_embedding_tsv(table: EmbeddingTable) -> str:
    out = io.StringIO()
    for key, rows in table.entries.items():
        for i, row in enumerate(rows):
            out.write("\t".join([key, str(i)] + [repr(float(v)) for v in row]) + "\n")
    return out.getvalue()
