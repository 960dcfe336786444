"""Curvature-weighted equivariant blind docking.

The pipeline reads protein-ligand complexes, builds ligand bond graphs and
protein Calpha contact graphs, attaches Ollivier-Ricci curvature features,
predicts the binding pocket and then refines the ligand pose with
degree-weighted E(3)-equivariant message passing.
"""

__version__ = "0.1.0"

from .curvature import edge_curvature, edge_curvatures, graph_lcf
from .docking import DivergenceError, DockingResult, load_pose
from .estimator import CurvatureFeaturizer, CWFBindDocker, dock_complex
from .metrics import MetricReport, centroid_distance, lrmsd, percentile, percentile_report
from .model import DESK, CWFBind, ModelConfig, prepare_complex
from .molgraph import Graph, build_complex_graph, build_ligand_graph, build_protein_graph
from .pocket import PocketPrediction
from .structio import (ComplexRecord, EmbeddingTable, FilterPolicy, ParseError, ValidationError,
                       apply_filters, load_complex, parse_complex)
from .trainer import TrainConfig, Trainer, gradcheck, load_checkpoint, save_checkpoint
from .transport import wasserstein1

__all__ = [
    "CWFBind", "CWFBindDocker", "ComplexRecord", "CurvatureFeaturizer", "DESK", "DivergenceError",
    "DockingResult", "EmbeddingTable", "FilterPolicy", "Graph", "MetricReport", "ModelConfig", "ParseError",
    "PocketPrediction", "TrainConfig", "Trainer", "ValidationError", "apply_filters", "build_complex_graph",
    "build_ligand_graph", "build_protein_graph", "centroid_distance", "dock_complex", "edge_curvature",
    "edge_curvatures", "gradcheck", "graph_lcf", "load_checkpoint", "load_complex", "load_pose", "lrmsd",
    "parse_complex", "percentile", "percentile_report", "prepare_complex", "save_checkpoint", "wasserstein1",
]
