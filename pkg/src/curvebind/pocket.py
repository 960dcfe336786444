"""Pocket prediction: residue labels, balanced focal loss, center and radius.

Losses accept torch tensors and stay differentiable; label construction and
pocket selection are discrete and work on numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .molgraph import CROSS_CUTOFF, Graph
from .structio import ComplexRecord, pairwise_distances

PROB_EPS = 1e-7
FIXED_RADIUS = 20.0
FALLBACK_K = 8
RADIUS_GRID = 2.0 ** -32


class DegenerateWeightsError(ValueError):
    pass


@dataclass(frozen=True)
class PocketLabels:
    y: np.ndarray
    true_center: np.ndarray
    true_radius: float
    trainable: bool = True


def ground_truth_labels(record: ComplexRecord, cutoff: float = CROSS_CUTOFF) -> PocketLabels:
    """Residues with a Calpha strictly within ``cutoff`` of any ligand atom are positive."""
    ca = record.ca_coords()
    lig = record.ligand_coords()
    if len(ca) == 0 or len(lig) == 0:
        return PocketLabels(np.zeros(len(ca)), np.zeros(3), 0.0, trainable=False)
    y = (pairwise_distances(ca, lig).min(axis=1) < cutoff).astype(np.float64)
    if not y.any():
        return PocketLabels(y, np.zeros(3), 0.0, trainable=False)
    center = ca[y > 0].mean(axis=0)
    radius = float(np.linalg.norm(lig - center, axis=1).max())
    return PocketLabels(y, center, radius, trainable=radius > 0)


class ResidueClassifier(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.head = nn.Linear(d, 1)

    def forward(self, h_p: torch.Tensor) -> torch.Tensor:
        """Per-residue logits."""
        return self.head(h_p).squeeze(-1)


def classify_residues(h_p: torch.Tensor, classifier: ResidueClassifier) -> torch.Tensor:
    return torch.sigmoid(classifier(h_p))


def focal_loss(probs: torch.Tensor, labels: torch.Tensor, gamma: float = 2.0,
               weight_mode: str = "balanced") -> torch.Tensor:
    """Focal loss of one complex, summed over residues.

    ``weight_mode="balanced"`` multiplies by (residues / pocket residues);
    ``"unit"`` leaves the sum unweighted.  Batch averaging is the caller's job.
    """
    labels = torch.as_tensor(labels, dtype=probs.dtype)
    n_pos = float(labels.sum())
    if weight_mode == "balanced":
        if n_pos <= 0:
            raise ValueError("no pocket residue: complex is untrainable")
        weight = len(labels) / n_pos
    elif weight_mode == "unit":
        weight = 1.0
    else:
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    pos = labels * (1.0 - p) ** gamma * torch.log(p)
    neg = (1.0 - labels) * p ** gamma * torch.log1p(-p)
    return -weight * (pos + neg).sum()


def gumbel_weights(logits: torch.Tensor, temperature: float = 1.0,
                   generator: torch.Generator | None = None, noise: bool = True) -> torch.Tensor:
    """Relaxed categorical weights ``softmax((logits + g) / tau)``.

    Gumbel noise ``g`` is drawn from ``generator`` when ``noise`` is set;
    otherwise this is a plain tempered softmax.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if noise:
        u = torch.rand(logits.shape, generator=generator, dtype=logits.dtype)
        u = u.clamp(1e-20, 1.0 - 1e-16)
        logits = logits - torch.log(-torch.log(u))
    return torch.softmax(logits / temperature, dim=-1)


def pocket_center(weights: torch.Tensor, ca: torch.Tensor) -> torch.Tensor:
    total = weights.sum()
    if not float(total.detach()) > 0:
        raise DegenerateWeightsError("pocket weights sum to zero")
    return (weights[:, None] * ca).sum(0) / total


def huber(err: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Huber penalty of a non-negative error magnitude."""
    return torch.where(err <= delta, 0.5 * err * err, delta * (err - 0.5 * delta))


def huber_vector(diff: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Huber penalty of the Euclidean norm of ``diff`` along the last axis.

    Written on the squared norm so the gradient is finite at zero error.
    """
    sq = (diff * diff).sum(-1)
    safe = torch.where(sq > delta * delta, sq, torch.full_like(sq, delta * delta))
    return torch.where(sq <= delta * delta, 0.5 * sq, delta * (torch.sqrt(safe) - 0.5 * delta))


def center_loss(pred_center: torch.Tensor, true_center: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    return huber_vector(pred_center - torch.as_tensor(true_center, dtype=pred_center.dtype), delta)


def radius_loss(pred_radius: torch.Tensor, true_radius: float, delta: float = 1.0) -> torch.Tensor:
    return huber(torch.abs(pred_radius - true_radius), delta)


class RadiusHead(nn.Module):
    """Raw radius from the summed ligand states."""

    def __init__(self, d: int):
        super().__init__()
        self.fc1 = nn.Linear(d, d)
        self.fc2 = nn.Linear(d, 1)

    def forward(self, h_l: torch.Tensor) -> torch.Tensor:
        return self.fc2(nn.functional.silu(self.fc1(h_l.sum(0)))).squeeze(-1)


def final_radius(raw: float | torch.Tensor, n_atoms: int, fixed: bool = False,
                 fixed_value: float = FIXED_RADIUS):
    if fixed:
        return fixed_value
    return raw + math.sqrt(n_atoms)


def reported_radius(raw, n_atoms: int, fixed: bool = False,
                    fixed_value: float = FIXED_RADIUS) -> tuple[float, float]:
    """``(r_hat, radius_final)`` as plain floats for selection and reports.

    ``r_hat`` is snapped to a 2^-32 A grid.  When sqrt(n) is a whole number
    the sum is then exact and ``radius_final - r_hat`` gives back sqrt(n) bit
    for bit; otherwise the difference is within one ulp of ``radius_final``.
    """
    if isinstance(raw, torch.Tensor):
        raw = raw.detach()
    r_hat = round(float(raw) / RADIUS_GRID) * RADIUS_GRID
    return r_hat, float(final_radius(r_hat, n_atoms, fixed, fixed_value))


def radius_head(h_l: torch.Tensor, n_atoms: int, head: RadiusHead, fixed: bool = False):
    raw = head(h_l)
    return raw, final_radius(raw, n_atoms, fixed)


def pocket_loss(cls_term, cen_term, r_term, alpha1: float = 0.05):
    return cls_term + cen_term + alpha1 * r_term


def select_pocket(center, radius: float, ca: np.ndarray, k_min: int = FALLBACK_K) -> np.ndarray:
    """Residue indices within ``radius`` of ``center`` (inclusive), ascending.

    When fewer than ``min(k_min, n)`` residues qualify, the nearest residues
    are added until that many are selected.
    """
    ca = np.asarray(ca, dtype=np.float64)
    d = np.linalg.norm(ca - np.asarray(center, dtype=np.float64), axis=1)
    chosen = set(np.nonzero(d <= radius)[0].tolist())
    need = min(k_min, len(ca))
    if len(chosen) < need:
        for idx in np.argsort(d, kind="stable"):
            if len(chosen) >= need:
                break
            chosen.add(int(idx))
    return np.array(sorted(chosen), dtype=np.int64)


def pocket_subgraph(protein: Graph, selected: np.ndarray) -> Graph:
    return protein.subgraph(selected)


@dataclass
class PocketPrediction:
    probs: np.ndarray
    center: np.ndarray
    radius_raw: float
    radius_final: float
    selected: np.ndarray
    labels: PocketLabels | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "probabilities": self.probs.tolist(),
            "center": self.center.tolist(),
            "radius_raw": float(self.radius_raw),
            "radius_final": float(self.radius_final),
            "selected": self.selected.tolist(),
        }
        if self.labels is not None:
            pred = self.probs >= 0.5
            truth = self.labels.y > 0
            out["labels"] = {
                "positives": int(truth.sum()),
                "accuracy": float((pred == truth).mean()) if len(truth) else 1.0,
                "true_center": self.labels.true_center.tolist(),
                "true_radius": self.labels.true_radius,
                "trainable": self.labels.trainable,
            }
        out.update(self.extra)
        return out
