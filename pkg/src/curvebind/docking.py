"""Pose initialisation, recycled refinement, and docking losses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from ._jsonio import dumps
from .net import GraphState, StackConfig, Topology, stack_forward
from .pocket import huber_vector

DIVERGENCE_LIMIT = 1e4


class DivergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def init_pose(conformer, center):
    """Translate ``conformer`` so its centroid sits on ``center`` (no rotation)."""
    if isinstance(conformer, torch.Tensor):
        return conformer - conformer.mean(0) + center
    conformer = np.asarray(conformer, dtype=np.float64)
    return conformer - conformer.mean(axis=0) + np.asarray(center, dtype=np.float64)


@dataclass
class DockState:
    iteration: int
    x_l: torch.Tensor
    pocket: np.ndarray
    z: torch.Tensor
    trace: list = field(default_factory=list)


class DistanceHead(nn.Module):
    """Ligand-residue distance read out of the pair embedding."""

    def __init__(self, d_pair: int):
        super().__init__()
        self.fc1 = nn.Linear(d_pair, d_pair)
        self.fc2 = nn.Linear(d_pair, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.fc2(nn.functional.silu(self.fc1(z))).squeeze(-1)


def refine(initial: GraphState, topo: Topology, layers, cfg: StackConfig, n_iterations: int = 8,
           trace: bool = False) -> tuple[GraphState, list]:
    """Run the shared layer stack ``n_iterations`` times, carrying ligand coordinates.

    Each pass restarts from the initial node and pair embeddings; only the
    ligand coordinates (and the contact edges they induce) are recycled.
    """
    state = initial
    snapshots = []
    # with a frozen protein the first layer's protein messaging sees the same inputs every pass
    cache = {} if cfg.freeze_protein else None
    for it in range(n_iterations):
        start = GraphState(initial.h_l, initial.h_p, state.x_l, initial.x_p, initial.z)
        state = stack_forward(start, topo, layers, cfg, cache)
        peak = float(state.x_l.detach().abs().max()) if state.x_l.numel() else 0.0
        if not np.isfinite(peak) or peak > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"ligand coordinates diverged at iteration {it}",
                {"iteration": it, "max_abs_coordinate": peak,
                 "coords": state.x_l.detach().tolist()},
            )
        if trace:
            snapshots.append(state.x_l.detach().clone())
    return state, snapshots


def coord_loss(pred: torch.Tensor, truth: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Mean over atoms of the Huber penalty on each atom's position error."""
    truth = torch.as_tensor(truth, dtype=pred.dtype)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(truth.shape)}")
    return huber_vector(pred - truth, delta).mean()


def distance_maps(pred_l: torch.Tensor, truth_l, pocket_ca, d_hat: torch.Tensor):
    """``(D, D_tilde, D_hat)`` over ligand atoms x pocket residues."""
    truth_l = torch.as_tensor(truth_l, dtype=pred_l.dtype)
    pocket_ca = torch.as_tensor(pocket_ca, dtype=pred_l.dtype)
    D = torch.cdist(truth_l, pocket_ca)
    diff = pred_l[:, None, :] - pocket_ca[None, :, :]
    # sqrt with a floor keeps the gradient finite for coincident points
    D_tilde = torch.sqrt((diff * diff).sum(-1).clamp_min(1e-18))
    return D, D_tilde, d_hat


def distance_map_loss(D, D_tilde, D_hat, gamma_d: float = 1.0) -> torch.Tensor:
    if not (D.shape == D_tilde.shape == D_hat.shape):
        raise ValueError("distance maps differ in shape")
    n = D.numel()
    return (((D - D_tilde) ** 2).sum() + ((D - D_hat) ** 2).sum()
            + gamma_d * ((D_tilde - D_hat) ** 2).sum()) / n


def docking_loss(coord_term, dist_term):
    return coord_term + dist_term


@dataclass
class DockingResult:
    """Final pose of one complex, with optional per-iteration snapshots."""

    id: str
    pose: np.ndarray
    elements: list
    snapshots: list = field(default_factory=list)
    center: np.ndarray | None = None
    runtime: float = 0.0

    def to_dict(self) -> dict:
        out = {"id": self.id, "elements": list(self.elements), "pose": self.pose.tolist()}
        if self.center is not None:
            out["center"] = np.asarray(self.center).tolist()
        if self.snapshots:
            out["snapshots"] = [np.asarray(s).tolist() for s in self.snapshots]
        return out

    def to_json(self) -> str:
        return dumps(self.to_dict(), indent=1) + "\n"

    def to_xyz(self) -> str:
        """XYZ frames: snapshots first (when traced), final pose last."""
        frames = [(f"{self.id} iteration {k}", s) for k, s in enumerate(self.snapshots)]
        frames.append((f"{self.id} final", self.pose))
        lines = []
        for title, coords in frames:
            lines.append(str(len(coords)))
            lines.append(title)
            for el, (x, y, z) in zip(self.elements, np.asarray(coords)):
                lines.append(f"{el} {x:.17g} {y:.17g} {z:.17g}")
        return "\n".join(lines) + "\n"


def load_pose(text: str) -> tuple[str, np.ndarray]:
    """``(id, final pose)`` from a pose JSON document or XYZ block."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        return str(doc["id"]), np.asarray(doc["pose"], dtype=np.float64).reshape(-1, 3)
    lines = text.splitlines()
    frames = []
    k = 0
    while k < len(lines):
        if not lines[k].strip():
            k += 1
            continue
        n = int(lines[k])
        title = lines[k + 1]
        coords = [[float(v) for v in lines[k + 2 + a].split()[1:4]] for a in range(n)]
        frames.append((title, np.array(coords, dtype=np.float64).reshape(-1, 3)))
        k += n + 2
    if not frames:
        raise ValueError("empty XYZ document")
    title, coords = frames[-1]
    return title.split()[0], coords
