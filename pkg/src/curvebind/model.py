"""End-to-end docking model: encoder, pocket stage, docking stage, losses."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import curvature
from .docking import DistanceHead, coord_loss, distance_map_loss, distance_maps, docking_loss, init_pose, refine
from .encoder import (LIGAND_WIDTH, EncoderConfig, OuterProduct, assemble_node_features,
                      ligand_base_features, protein_base_features)
from .molgraph import Graph, build_ligand_graph, build_protein_graph
from .net import CWFLayer, GraphState, StackConfig, Topology, stack_forward
from .pocket import (FALLBACK_K, FIXED_RADIUS, PocketLabels, PocketPrediction, RadiusHead, ResidueClassifier,
                     center_loss, focal_loss, ground_truth_labels, gumbel_weights, pocket_center,
                     pocket_loss, radius_loss, reported_radius, select_pocket)
from .structio import ComplexRecord, EmbeddingTable

LOSS_TERMS = ("cls", "cen", "r", "pocket", "coord", "dist", "docking", "total")


@dataclass(frozen=True)
class ModelConfig:
    d_node: int = 512
    d_pair: int = 128
    d_opm: int = 32
    heads: int = 4
    M1: int = 1
    M2: int = 4
    n_iterations: int = 8
    protein_mode: str = "fallback-25"
    use_lcf: bool = True
    uniform_weights: bool = False
    fixed_radius: bool = False
    fixed_radius_value: float = FIXED_RADIUS
    plain_bce: bool = False
    freeze_protein: bool = True
    gamma: float = 2.0
    gamma_d: float = 1.0
    alpha1: float = 0.05
    huber_delta: float = 1.0
    gumbel_tau: float = 1.0
    pocket_k: int = FALLBACK_K
    gate_init: float = 1e-3

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.d_node, self.d_pair, self.d_opm, self.use_lcf, self.protein_mode)

    @property
    def stack(self) -> StackConfig:
        return StackConfig(self.d_node, self.d_pair, self.d_opm, self.heads, self.M1, self.M2,
                           self.freeze_protein, self.uniform_weights, gate_init=self.gate_init)

    def to_dict(self) -> dict:
        return asdict(self)


# widths small enough for single-core CPU runs; everything else unchanged
DESK = dict(d_node=64, d_pair=32, d_opm=16)


@dataclass
class ComplexInputs:
    """Everything the model needs for one complex, computed once from a record."""

    id: str
    ligand_feats: np.ndarray
    ligand_lcf: np.ndarray
    protein_feats: np.ndarray
    protein_lcf: np.ndarray
    ligand_graph: Graph
    protein_graph: Graph
    conformer: np.ndarray
    ca: np.ndarray
    truth: np.ndarray | None = None
    labels: PocketLabels | None = None

    @property
    def n_atoms(self) -> int:
        return len(self.conformer)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "ComplexInputs":
        """Copy with every coordinate block moved by ``x -> R x + t``."""
        move = lambda x: None if x is None else x @ rotation.T + translation  # noqa: E731
        labels = self.labels
        if labels is not None:
            labels = PocketLabels(labels.y, move(labels.true_center), labels.true_radius, labels.trainable)
        lg = Graph(self.ligand_graph.n, move(self.ligand_graph.coords), self.ligand_graph.edges,
                   self.ligand_graph.degree)
        pg = Graph(self.protein_graph.n, move(self.protein_graph.coords), self.protein_graph.edges,
                   self.protein_graph.degree)
        return ComplexInputs(self.id, self.ligand_feats, self.ligand_lcf, self.protein_feats, self.protein_lcf,
                             lg, pg, move(self.conformer), move(self.ca), move(self.truth), labels)


def prepare_complex(record: ComplexRecord, protein_mode: str = "fallback-25",
                    table: EmbeddingTable | None = None, with_truth: bool = True,
                    atom_features: np.ndarray | None = None) -> ComplexInputs:
    lg = build_ligand_graph(record)
    pg = build_protein_graph(record)
    feats = ligand_base_features(record, lg) if atom_features is None else np.asarray(atom_features)
    if feats.shape != (record.n_atoms, LIGAND_WIDTH):
        raise ValueError(f"ligand features have shape {feats.shape}")
    return ComplexInputs(
        id=record.id,
        ligand_feats=feats,
        ligand_lcf=curvature.graph_lcf(lg),
        protein_feats=protein_base_features(record, table, protein_mode),
        protein_lcf=curvature.graph_lcf(pg),
        ligand_graph=lg,
        protein_graph=pg,
        conformer=record.conformer_coords(),
        ca=record.ca_coords(),
        truth=record.ligand_coords() if with_truth else None,
        labels=ground_truth_labels(record) if with_truth else None,
    )


def _t(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


@dataclass
class Forward:
    """Outputs of one complex's forward pass."""

    pose: torch.Tensor
    probs: torch.Tensor
    logits: torch.Tensor
    center: torch.Tensor
    radius_raw: torch.Tensor
    radius_final: float
    pocket: np.ndarray
    d_hat: torch.Tensor
    h_l: torch.Tensor
    h_p: torch.Tensor
    center_used: np.ndarray
    trace: list = field(default_factory=list)


class CWFBind(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        enc = config.encoder
        stack = config.stack
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.lig_proj = nn.Linear(LIGAND_WIDTH + curvature.LCF_WIDTH, enc.d_node)
            self.prot_proj = nn.Linear(enc.protein_width + curvature.LCF_WIDTH, enc.d_node)
            self.pocket_opm = OuterProduct(enc.d_node, enc.d_opm, enc.d_pair)
            self.pocket_layers = nn.ModuleList([CWFLayer(stack) for _ in range(stack.M1)])
            self.classifier = ResidueClassifier(enc.d_node)
            self.radius = RadiusHead(enc.d_node)
            self.dock_opm = OuterProduct(enc.d_node, enc.d_opm, enc.d_pair)
            self.dock_layers = nn.ModuleList([CWFLayer(stack) for _ in range(stack.M2)])
            self.distance = DistanceHead(enc.d_pair)
        self.double()

    # -- stages ---------------------------------------------------------
    def encode(self, inp: ComplexInputs) -> tuple[torch.Tensor, torch.Tensor]:
        use = self.config.use_lcf
        h_l = assemble_node_features(_t(inp.ligand_feats), _t(inp.ligand_lcf), self.lig_proj, use)
        h_p = assemble_node_features(_t(inp.protein_feats), _t(inp.protein_lcf), self.prot_proj, use)
        return h_l, h_p

    def forward(self, inp: ComplexInputs, *, center_override=None, radius_override: float | None = None,
                generator: torch.Generator | None = None, noise: bool = False, trace: bool = False) -> Forward:
        cfg = self.config
        stack = cfg.stack
        h_l, h_p = self.encode(inp)
        ca = _t(inp.ca)
        conformer = _t(inp.conformer)

        # pocket stage: ligand placed at the protein centroid, all residues visible
        x_l = init_pose(conformer, ca.mean(0))
        topo = Topology.from_graphs(inp.ligand_graph, inp.protein_graph)
        state = GraphState(h_l, h_p, x_l, ca, self.pocket_opm(h_l, h_p))
        state = stack_forward(state, topo, self.pocket_layers, stack)
        logits = self.classifier(state.h_p)
        probs = torch.sigmoid(logits)
        weights = gumbel_weights(logits, cfg.gumbel_tau, generator, noise)
        center = pocket_center(weights, ca)
        raw = self.radius(state.h_l)
        _, radius = reported_radius(raw, inp.n_atoms, cfg.fixed_radius, cfg.fixed_radius_value)
        if radius_override is not None:
            radius = float(radius_override)

        # docking stage
        use = center.detach().numpy() if center_override is None else np.asarray(center_override, dtype=np.float64)
        pocket = select_pocket(use, radius, inp.ca, cfg.pocket_k)
        sub = inp.protein_graph.subgraph(pocket)
        dock_topo = Topology.from_graphs(inp.ligand_graph, sub)
        hp_pocket = state.h_p[torch.as_tensor(pocket)]
        x0 = init_pose(conformer, _t(use))
        init = GraphState(state.h_l, hp_pocket, x0, ca[torch.as_tensor(pocket)],
                          self.dock_opm(state.h_l, hp_pocket))
        final, snaps = refine(init, dock_topo, self.dock_layers, stack, cfg.n_iterations, trace)
        return Forward(final.x_l, probs, logits, center, raw, radius, pocket, self.distance(final.z),
                       state.h_l, state.h_p, use, snaps)

    # -- losses ---------------------------------------------------------
    def losses(self, inp: ComplexInputs, out: Forward) -> dict[str, torch.Tensor]:
        cfg = self.config
        labels = inp.labels
        y = _t(labels.y)
        if cfg.plain_bce:
            l_cls = focal_loss(out.probs, y, 0.0, "unit")
        else:
            l_cls = focal_loss(out.probs, y, cfg.gamma, "balanced")
        l_cen = center_loss(out.center, labels.true_center, cfg.huber_delta)
        l_r = radius_loss(out.radius_raw, labels.true_radius, cfg.huber_delta)
        l_pocket = pocket_loss(l_cls, l_cen, l_r, cfg.alpha1)
        l_coord = coord_loss(out.pose, inp.truth, cfg.huber_delta)
        D, D_tilde, D_hat = distance_maps(out.pose, inp.truth, inp.ca[out.pocket], out.d_hat)
        l_dist = distance_map_loss(D, D_tilde, D_hat, cfg.gamma_d)
        l_dock = docking_loss(l_coord, l_dist)
        return {"cls": l_cls, "cen": l_cen, "r": l_r, "pocket": l_pocket, "coord": l_coord,
                "dist": l_dist, "docking": l_dock, "total": l_pocket + l_dock}

    def predict_pocket(self, inp: ComplexInputs, out: Forward | None = None) -> PocketPrediction:
        out = out or self.forward(inp)
        cfg = self.config
        r_hat, _ = reported_radius(out.radius_raw, inp.n_atoms, cfg.fixed_radius, cfg.fixed_radius_value)
        return PocketPrediction(out.probs.detach().numpy(), out.center.detach().numpy(),
                                r_hat, out.radius_final, out.pocket, inp.labels)
