"""Synthetic micro-complexes for tests, demos and overfitting checks.

A ligand is a short bonded chain (optionally closed into a ring) with
1.5 A bonds.  Pocket residues sit on a shell around it, drawn from a
hydrophobic/aromatic vocabulary; the remaining residues form a separate
cluster of polar residues at least 11 A from every ligand atom, so residue
type and geometry both carry the pocket label.  The docking input conformer
is the reference ligand rigidly rotated about its centroid (plus jitter) and
moved away from the protein.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .structio import Bond, ComplexRecord, LigandAtom, Residue

POCKET_TYPES = ("PHE", "TRP", "TYR", "LEU", "ILE", "MET", "VAL")
SURFACE_TYPES = ("GLU", "LYS", "ASP", "ARG", "SER", "THR", "ASN", "GLN")


def _ligand_chain(rng: np.random.Generator, n: int) -> np.ndarray:
    pts = [np.zeros(3)]
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    for _ in range(n - 1):
        for _attempt in range(100):
            step = direction + 0.9 * rng.normal(size=3)
            step /= np.linalg.norm(step)
            cand = pts[-1] + 1.5 * step
            if all(np.linalg.norm(cand - p) > 2.2 for p in pts[:-1]):
                break
        pts.append(cand)
        direction = step
    return np.array(pts)


def _shell_points(rng, n, center, radius_range, avoid, min_gap, max_attempts=20000):
    out = []
    for _attempt in range(max_attempts):
        if len(out) == n:
            break
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        p = center + v * rng.uniform(*radius_range)
        if np.min(np.linalg.norm(avoid - p, axis=1)) < min_gap[0]:
            continue
        if out and np.min(np.linalg.norm(np.array(out) - p, axis=1)) < min_gap[1]:
            continue
        out.append(p)
    if len(out) < n:
        raise RuntimeError("could not place residues")
    return np.array(out)


def micro_complex(seed: int, n_atoms: int | None = None, n_pocket: int | None = None,
                  n_surface: int | None = None, rotation_deg: float = 180.0,
                  jitter: float = 0.05) -> ComplexRecord:
    rng = np.random.default_rng(seed)
    n_atoms = n_atoms or int(rng.integers(5, 11))
    n_pocket = n_pocket or int(rng.integers(8, 13))
    n_surface = n_surface if n_surface is not None else int(rng.integers(8, 31 - n_pocket))
    lig = _ligand_chain(rng, n_atoms)
    lig -= lig.mean(axis=0)
    offset = rng.uniform(-20, 20, size=3)
    lig += offset
    # shell residues: close to the ligand but not clashing
    extent = np.max(np.linalg.norm(lig - offset, axis=1))
    pocket = _shell_points(rng, n_pocket, offset, (extent + 3.5, extent + 5.0), lig, (3.5, 3.8))
    far_dir = rng.normal(size=3)
    far_dir /= np.linalg.norm(far_dir)
    surface = np.zeros((0, 3))
    spread = 6.0
    while n_surface:
        # a dense cluster may not fit; widen it (and move it out) until it does
        far_center = offset + far_dir * (extent + 11.0 + spread)
        try:
            surface = _shell_points(rng, n_surface, far_center, (0.0, spread), lig, (11.0, 3.8),
                                     max_attempts=400 * n_surface)
            break
        except RuntimeError:
            spread += 2.0

    residues = [Residue(str(rng.choice(POCKET_TYPES)), tuple(p)) for p in pocket]
    residues += [Residue(str(rng.choice(SURFACE_TYPES)), tuple(p)) for p in surface]
    order = rng.permutation(len(residues))
    residues = [residues[k] for k in order]

    elements = rng.choice(["C", "C", "C", "N", "O"], size=n_atoms)
    bonds = [Bond(k, k + 1, 1) for k in range(n_atoms - 1)]
    ring = n_atoms >= 6 and np.linalg.norm(lig[0] - lig[-1]) < 2.0
    if ring:
        bonds.append(Bond(0, n_atoms - 1, 1))
    atoms = [LigandAtom(str(e), tuple(x), in_ring=bool(ring), h_count=int(rng.integers(0, 3)))
             for e, x in zip(elements, lig)]

    rot = Rotation.from_rotvec(_random_axis(rng) * np.deg2rad(rng.uniform(0, rotation_deg)))
    conformer = rot.apply(lig - offset) + rng.normal(scale=jitter, size=lig.shape)
    conformer += rng.uniform(-50, 50, size=3)
    return ComplexRecord(f"micro{seed:04d}", tuple(residues), tuple(atoms), tuple(bonds),
                         None, tuple(tuple(c) for c in conformer))


def _random_axis(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def micro_dataset(n: int, seed: int = 0, **kwargs) -> list[ComplexRecord]:
    return [micro_complex(seed * 1000 + k, **kwargs) for k in range(n)]


def random_rigid_motion(rng: np.random.Generator, reflect: bool | None = None):
    """Random orthogonal matrix (reflection with probability 1/2) and translation."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    if reflect is None:
        reflect = bool(rng.integers(0, 2))
    if reflect:
        q = q @ np.diag([1.0, 1.0, -1.0])
    return q, rng.uniform(-30, 30, size=3)


def globular_complex(seed: int, n_residues: int = 300, n_atoms: int = 40) -> ComplexRecord:
    """Larger complex: residues on a jittered 3.8 A lattice around a ligand cavity."""
    rng = np.random.default_rng(seed)
    lig = _ligand_chain(rng, n_atoms)
    lig -= lig.mean(axis=0)
    side = int(np.ceil((4 * n_residues) ** (1 / 3))) + 4
    axis = (np.arange(side) - side / 2) * 3.8
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    grid += rng.normal(scale=0.3, size=grid.shape)
    # cavity around the ligand, protein bulk on one side of it
    keep = pairwise_min(grid, lig) > 3.5
    grid = grid[keep]
    bulk = np.array([0.0, 0.0, -12.0])
    ca = grid[np.argsort(np.linalg.norm(grid - bulk, axis=1), kind="stable")[:n_residues]]
    types = rng.choice(POCKET_TYPES + SURFACE_TYPES, size=n_residues)
    residues = tuple(Residue(str(t), tuple(p)) for t, p in zip(types, ca))
    atoms = tuple(LigandAtom(str(e), tuple(x)) for e, x in zip(rng.choice(["C", "N", "O"], size=n_atoms), lig))
    bonds = tuple(Bond(k, k + 1, 1) for k in range(n_atoms - 1))
    rot = Rotation.from_rotvec(_random_axis(rng) * rng.uniform(0, np.pi))
    conformer = tuple(tuple(c) for c in rot.apply(lig) + 40.0)
    return ComplexRecord(f"globular{seed:04d}", residues, atoms, bonds, None, conformer)


def pairwise_min(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.min(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1), axis=1)
