"""scikit-learn style front end: a curvature featurizer and the docking estimator."""

from __future__ import annotations

import math
import numbers
import time

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import curvature
from ._validation import check_choice, check_graphs, check_records, check_scalar
from .docking import DockingResult
from .metrics import MetricReport
from .model import DESK, CWFBind, prepare_complex
from .molgraph import build_ligand_graph, build_protein_graph
from .pocket import PocketPrediction, ground_truth_labels
from .structio import EmbeddingTable
from .trainer import SCHEDULES, Trainer, TrainConfig, load_checkpoint, save_checkpoint


class CurvatureFeaturizer(TransformerMixin, BaseEstimator):
    """Local curvature features (min, max, mean, std, median of incident edge curvatures).

    ``transform`` maps each graph to an ``(n, 5)`` array.  A complex record is
    mapped to a ``(ligand, protein)`` pair of such arrays.
    """

    def __init__(self, protein_cutoff: float = 8.0):
        self.protein_cutoff = protein_cutoff

    def fit(self, X, y=None):
        check_scalar(self.protein_cutoff, "protein_cutoff", low=0.0, low_inclusive=False)
        check_graphs(X)
        self.n_features_out_ = curvature.LCF_WIDTH
        return self

    def transform(self, X):
        check_is_fitted(self)
        out = []
        for item in check_graphs(X):
            if hasattr(item, "edges"):
                out.append(curvature.graph_lcf(item))
            else:
                out.append((curvature.graph_lcf(build_ligand_graph(item)),
                            curvature.graph_lcf(build_protein_graph(item, self.protein_cutoff))))
        return out

    def get_feature_names_out(self, input_features=None):
        return np.array(curvature.LCF_NAMES, dtype=object)


class CWFBindDocker(BaseEstimator):
    """Blind docking estimator.

    ``fit`` trains on complexes with known ligand poses, ``predict`` returns
    refined ligand coordinates, ``predict_pocket`` the pocket stage output.
    Widths default to the desk preset; every loss and ablation switch is a
    constructor argument so the estimator works with ``clone`` and grid search.
    """

    def __init__(self, d_node=DESK["d_node"], d_pair=DESK["d_pair"], d_opm=DESK["d_opm"], heads=4, M1=1, M2=4,
                 n_iterations=8, protein_mode="fallback-25", learning_rate=5e-5, batch_size=3, epochs=450,
                 max_steps=None, T_p=None, alpha1=0.05, gamma=2.0, gamma_d=1.0, huber_delta=1.0,
                 weight_decay=0.01, schedule="constant-then-linear", seed=0, no_lcf=False,
                 uniform_weights=False, fixed_radius=False, plain_bce=False, embeddings=None):
        self.d_node = d_node
        self.d_pair = d_pair
        self.d_opm = d_opm
        self.heads = heads
        self.M1 = M1
        self.M2 = M2
        self.n_iterations = n_iterations
        self.protein_mode = protein_mode
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.T_p = T_p
        self.alpha1 = alpha1
        self.gamma = gamma
        self.gamma_d = gamma_d
        self.huber_delta = huber_delta
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.seed = seed
        self.no_lcf = no_lcf
        self.uniform_weights = uniform_weights
        self.fixed_radius = fixed_radius
        self.plain_bce = plain_bce
        self.embeddings = embeddings

    # -- configuration ----------------------------------------------------
    def _validate_params(self):
        for name in ("d_node", "d_pair", "d_opm", "heads", "M1", "M2", "n_iterations", "batch_size"):
            check_scalar(getattr(self, name), name, numbers.Integral, low=1)
        check_scalar(self.epochs, "epochs", numbers.Integral, low=0)
        check_scalar(self.max_steps, "max_steps", numbers.Integral, low=0, allow_none=True)
        check_scalar(self.T_p, "T_p", numbers.Integral, low=0, allow_none=True)
        check_scalar(self.learning_rate, "learning_rate", low=0.0)
        for name in ("alpha1", "gamma", "gamma_d", "weight_decay"):
            check_scalar(getattr(self, name), name, low=0.0)
        check_scalar(self.huber_delta, "huber_delta", low=0.0, low_inclusive=False)
        check_choice(self.schedule, "schedule", SCHEDULES)
        check_choice(self.protein_mode, "protein_mode", ("fallback-25", "precomputed-1280"))
        if self.d_node % self.heads:
            raise ValueError("d_node must be divisible by heads")
        if self.protein_mode == "precomputed-1280" and not isinstance(self.embeddings, EmbeddingTable):
            raise ValueError("protein_mode 'precomputed-1280' needs an EmbeddingTable in `embeddings`")

    def train_config(self) -> TrainConfig:
        self._validate_params()
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
            max_steps=self.max_steps, T_p=self.T_p, alpha1=self.alpha1, gamma=self.gamma, gamma_d=self.gamma_d,
            huber_delta=self.huber_delta, weight_decay=self.weight_decay, schedule=self.schedule, seed=self.seed,
            no_lcf=self.no_lcf, uniform_weights=self.uniform_weights, fixed_radius=self.fixed_radius,
            plain_bce=self.plain_bce,
            model=dict(d_node=self.d_node, d_pair=self.d_pair, d_opm=self.d_opm, heads=self.heads, M1=self.M1,
                       M2=self.M2, n_iterations=self.n_iterations, protein_mode=self.protein_mode),
        )

    def _inputs(self, records, with_truth):
        return [prepare_complex(r, self.protein_mode, self.embeddings, with_truth=with_truth) for r in records]

    # -- training -----------------------------------------------------------
    def fit(self, X, y=None, log_stream=None):
        """Train on complexes whose ligand coordinates are the reference poses.

        ``y`` is unused; labels (pocket residues, centre, radius, pose) come from
        the records themselves.  Complexes without a pocket residue are skipped.
        """
        records = check_records(X, require_truth=True)
        cfg = self.train_config()
        self.model_ = CWFBind(cfg.model_config(), seed=self.seed)
        inputs = [inp for inp in self._inputs(records, True) if inp.labels.trainable]
        if not inputs:
            raise ValueError("no trainable complex (every complex lacks pocket residues)")
        trainer = Trainer(self.model_, cfg)
        self.history_ = trainer.fit(inputs, log_stream=log_stream)
        self.n_steps_ = trainer.step_count
        self.n_complexes_ = len(inputs)
        return self

    # -- inference ------------------------------------------------------------
    def dock(self, X, trace: bool = False) -> list[tuple[DockingResult, PocketPrediction]]:
        check_is_fitted(self, "model_")
        return [dock_complex(self.model_, rec, self.embeddings, trace) for rec in check_records(X)]

    def predict(self, X) -> list[np.ndarray]:
        return [res.pose for res, _ in self.dock(X)]

    def predict_pocket(self, X) -> list[PocketPrediction]:
        return [pocket for _, pocket in self.dock(X)]

    def evaluate(self, X) -> MetricReport:
        records = check_records(X, require_truth=True)
        return MetricReport.from_poses([r.id for r in records], self.predict(records),
                                       [r.ligand_coords() for r in records])

    def score(self, X, y=None) -> float:
        """Negative mean ligand RMSD, so larger is better."""
        return -float(np.mean(self.evaluate(X).lrmsd))

    # -- persistence ------------------------------------------------------------
    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(self.model_, path, extra={"estimator": self._persisted_params()})

    def _persisted_params(self) -> dict:
        return {k: v for k, v in self.get_params().items() if k != "embeddings"}

    @classmethod
    def load(cls, path, embeddings: EmbeddingTable | None = None) -> "CWFBindDocker":
        from .trainer import read_checkpoint

        data = read_checkpoint(path)
        params = dict(data.get("extra", {}).get("estimator", {}))
        est = cls(**params, embeddings=embeddings)
        est.model_ = load_checkpoint(path)
        cfg = est.model_.config
        # the checkpoint's architecture wins over stale estimator parameters
        est.set_params(d_node=cfg.d_node, d_pair=cfg.d_pair, d_opm=cfg.d_opm, heads=cfg.heads, M1=cfg.M1,
                       M2=cfg.M2, n_iterations=cfg.n_iterations, protein_mode=cfg.protein_mode)
        return est


def dock_complex(model: CWFBind, record, embeddings: EmbeddingTable | None = None,
                 trace: bool = False) -> tuple[DockingResult, PocketPrediction]:
    """Dock one record with a trained model (inference mode, no Gumbel noise)."""
    inp = prepare_complex(record, model.config.protein_mode, embeddings, with_truth=False)
    model.eval()
    with torch.no_grad():
        t0 = time.perf_counter()
        fwd = model(inp, trace=trace)
        runtime = time.perf_counter() - t0
        pocket = model.predict_pocket(inp, fwd)
    if record.conformer is not None:
        # reference geometry is present: report label diagnostics alongside
        pocket.labels = ground_truth_labels(record)
    result = DockingResult(record.id, fwd.pose.numpy().copy(), [a.element for a in record.ligand_atoms],
                           [np.asarray(s) for s in fwd.trace], fwd.center_used, runtime)
    return result, pocket


def default_steps(n_complexes: int, epochs: int, batch_size: int) -> int:
    return epochs * math.ceil(n_complexes / batch_size)
