"""Node features, feature projection, and the outer-product pair embedding.

Ligand atoms get a fixed 52-slot chemical vector, residues either a
precomputed embedding row (width 1280) or a 25-slot fallback vector.  Both
are concatenated with the 5-slot LCF and projected to ``d_node``.

52-slot ligand layout::

    [0:18]   element one-hot (C N O S F Cl Br I P B Si Se H Na K Mg Zn other)
    [18:25]  degree one-hot 0..6
    [25:30]  formal charge one-hot -2..+2
    [30:38]  explicit valence one-hot 0..7
    [38]     aromatic
    [39]     in ring
    [40:45]  hydrogen count one-hot 0..4
    [45:47]  chirality CW, CCW
    [47:51]  incident bond counts: single, double, triple, aromatic
    [51]     bias (1.0)

25-slot fallback residue layout: amino-acid one-hot (20, alphabetical by
3-letter code) then hydropathy, net charge at pH 7, polarity flag, molecular
weight, aromatic flag, each mapped to [0, 1] with the constants below.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .molgraph import Graph, build_ligand_graph
from .structio import ComplexRecord, EmbeddingTable, MissingEmbeddingError, ParseError

log = logging.getLogger(__name__)

LIGAND_WIDTH = 52
FALLBACK_WIDTH = 25
ESM_WIDTH = 1280

ELEMENTS = ("C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "Si", "Se", "H", "Na", "K", "Mg", "Zn")
_BOND_SLOT = {1: 0, 2: 1, 3: 2, "aromatic": 3}
_BOND_VALENCE = {1: 1.0, 2: 2.0, 3: 3.0, "aromatic": 1.5}

AMINO_ACIDS = ("ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
               "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL")
# Kyte-Doolittle hydropathy, net charge at pH 7, polar flag, residue mass (Da)
_PHYSCHEM = {
    "ALA": (1.8, 0, 0, 89.09), "ARG": (-4.5, 1, 1, 174.20), "ASN": (-3.5, 0, 1, 132.12),
    "ASP": (-3.5, -1, 1, 133.10), "CYS": (2.5, 0, 0, 121.16), "GLN": (-3.5, 0, 1, 146.15),
    "GLU": (-3.5, -1, 1, 147.13), "GLY": (-0.4, 0, 0, 75.07), "HIS": (-3.2, 0, 1, 155.16),
    "ILE": (4.5, 0, 0, 131.17), "LEU": (3.8, 0, 0, 131.17), "LYS": (-3.9, 1, 1, 146.19),
    "MET": (1.9, 0, 0, 149.21), "PHE": (2.8, 0, 0, 165.19), "PRO": (-1.6, 0, 0, 115.13),
    "SER": (-0.8, 0, 1, 105.09), "THR": (-0.7, 0, 1, 119.12), "TRP": (-0.9, 0, 0, 204.23),
    "TYR": (-1.3, 0, 1, 181.19), "VAL": (4.2, 0, 0, 117.15),
}
AROMATIC_RESIDUES = frozenset({"PHE", "TRP", "TYR"})
HYDROPATHY_RANGE = (-4.5, 4.5)
CHARGE_RANGE = (-1.0, 1.0)
MASS_RANGE = (75.07, 204.23)


def _onehot(n: int, idx: int) -> np.ndarray:
    v = np.zeros(n)
    v[idx] = 1.0
    return v


def _clamped(value: int, lo: int, hi: int, what: str, atom: int) -> int:
    if value < lo or value > hi:
        log.warning("atom %d: %s %d outside [%d, %d], clamped", atom, what, value, lo, hi)
        return min(max(value, lo), hi)
    return value


def ligand_base_features(record: ComplexRecord, graph: Graph | None = None) -> np.ndarray:
    graph = graph or build_ligand_graph(record)
    counts = np.zeros((record.n_atoms, 4))
    valence = np.zeros(record.n_atoms)
    for b in record.ligand_bonds:
        for a in (b.i, b.j):
            counts[a, _BOND_SLOT[b.order]] += 1
            valence[a] += _BOND_VALENCE[b.order]
    out = np.zeros((record.n_atoms, LIGAND_WIDTH))
    for k, atom in enumerate(record.ligand_atoms):
        el = ELEMENTS.index(atom.element) if atom.element in ELEMENTS else len(ELEMENTS)
        deg = _clamped(int(graph.degree[k]), 0, 6, "degree", k)
        charge = _clamped(atom.formal_charge, -2, 2, "formal charge", k)
        val = _clamped(int(np.floor(valence[k] + 0.5)) + atom.h_count, 0, 7, "valence", k)
        hcount = _clamped(atom.h_count, 0, 4, "hydrogen count", k)
        out[k] = np.concatenate([
            _onehot(18, el),
            _onehot(7, deg),
            _onehot(5, charge + 2),
            _onehot(8, val),
            [float(atom.aromatic), float(atom.in_ring)],
            _onehot(5, hcount),
            [float(atom.chirality == "CW"), float(atom.chirality == "CCW")],
            counts[k],
            [1.0],
        ])
    return out


def load_atom_feature_override(text: str, n_atoms: int) -> np.ndarray:
    """Per-atom feature override: TSV rows ``atom_index`` + 52 values."""
    out = np.full((n_atoms, LIGAND_WIDTH), np.nan)
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != LIGAND_WIDTH + 1:
            raise ParseError(f"line {lineno}: expected {LIGAND_WIDTH + 1} fields, got {len(parts)}")
        idx = int(parts[0])
        if not 0 <= idx < n_atoms:
            raise ParseError(f"line {lineno}: atom index {idx} out of range")
        out[idx] = [float(v) for v in parts[1:]]
    if np.isnan(out).any():
        raise ParseError("override file does not cover every atom")
    return out


def _scale(v: float, rng: tuple[float, float]) -> float:
    return (v - rng[0]) / (rng[1] - rng[0])


def fallback_residue_vector(residue_type: str) -> np.ndarray:
    code = residue_type.upper()
    if code not in _PHYSCHEM:
        log.warning("unknown residue type %r, using zero one-hot and mid-range scalars", code)
        return np.concatenate([np.zeros(20), [0.5, 0.5, 0.0, 0.5, 0.0]])
    hyd, charge, polar, mass = _PHYSCHEM[code]
    return np.concatenate([
        _onehot(20, AMINO_ACIDS.index(code)),
        [_scale(hyd, HYDROPATHY_RANGE), _scale(charge, CHARGE_RANGE), float(polar),
         _scale(mass, MASS_RANGE), float(code in AROMATIC_RESIDUES)],
    ])


def protein_base_features(record: ComplexRecord, table: EmbeddingTable | None = None,
                          mode: str = "fallback-25") -> np.ndarray:
    if mode == "precomputed-1280":
        if table is None:
            raise MissingEmbeddingError(record.embedding_key)
        return np.array(table.lookup(record.embedding_key, record.n_residues), dtype=np.float64)
    if mode != "fallback-25":
        raise ValueError(f"unknown protein_mode {mode!r}")
    if not record.residues:
        return np.zeros((0, FALLBACK_WIDTH))
    return np.stack([fallback_residue_vector(r.residue_type) for r in record.residues])


@dataclass(frozen=True)
class EncoderConfig:
    d_node: int = 512
    d_pair: int = 128
    d_opm: int = 32
    use_lcf: bool = True
    protein_mode: str = "fallback-25"

    def __post_init__(self):
        if min(self.d_node, self.d_pair, self.d_opm) < 1:
            raise ValueError("widths must be >= 1")
        if self.protein_mode not in ("fallback-25", "precomputed-1280"):
            raise ValueError(f"unknown protein_mode {self.protein_mode!r}")

    @property
    def protein_width(self) -> int:
        return ESM_WIDTH if self.protein_mode == "precomputed-1280" else FALLBACK_WIDTH


def assemble_node_features(base: torch.Tensor, lcf: torch.Tensor, projection: nn.Linear,
                           use_lcf: bool = True) -> torch.Tensor:
    """Project ``concat(base, lcf)`` to the node width; LCF slots zeroed when disabled."""
    if base.shape[0] != lcf.shape[0]:
        raise ValueError(f"row mismatch: {base.shape[0]} base rows, {lcf.shape[0]} LCF rows")
    if not use_lcf:
        lcf = torch.zeros_like(lcf)
    x = torch.cat([base, lcf], dim=-1)
    if x.shape[-1] != projection.in_features:
        raise ValueError(f"feature width {x.shape[-1]} != projection input {projection.in_features}")
    return projection(x)


class OuterProduct(nn.Module):
    """``z_ij = W (A h_i (x) B h_j) + c`` for ligand rows i and residue rows j."""

    def __init__(self, d_node: int, d_opm: int, d_pair: int):
        super().__init__()
        self.left = nn.Linear(d_node, d_opm)
        self.right = nn.Linear(d_node, d_opm)
        self.out = nn.Linear(d_opm * d_opm, d_pair)
        self.d_opm = d_opm

    def forward(self, h_l: torch.Tensor, h_p: torch.Tensor) -> torch.Tensor:
        a = self.left(h_l)
        b = self.right(h_p)
        w = self.out.weight.view(-1, self.d_opm, self.d_opm)
        # contract the right factor first: (n_p, d_pair, d_opm)
        wb = torch.einsum("cpq,jq->jcp", w, b)
        return torch.einsum("ip,jcp->ijc", a, wb) + self.out.bias


def opm_pair_embedding(h_l: torch.Tensor, h_p: torch.Tensor, params: OuterProduct) -> torch.Tensor:
    return params(h_l, h_p)
