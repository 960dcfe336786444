"""Pose metrics (ligand RMSD, centroid distance) and the percentile report."""

from __future__ import annotations

import math

import numpy as np

from ._jsonio import dumps

REPORT_COLUMNS = ("25%", "50%", "75%", "Mean", "2A", "5A")


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def lrmsd(pred, truth) -> float:
    """RMSD over atoms in the protein frame; no superposition."""
    pred, truth = _pair(pred, truth)
    return float(math.sqrt(np.mean(np.sum((pred - truth) ** 2, axis=1))))


def centroid_distance(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.linalg.norm(pred.mean(axis=0) - truth.mean(axis=0)))


def percentile(values, q: float) -> float:
    """Linear interpolation between closest ranks (numpy's default method)."""
    return float(np.percentile(np.asarray(values, dtype=np.float64), q))


def percentile_report(values) -> dict:
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise ValueError("percentile_report of an empty list")
    return {
        "p25": percentile(vals, 25),
        "p50": percentile(vals, 50),
        "p75": percentile(vals, 75),
        # exactly rounded, so the report does not depend on input order
        "mean": math.fsum(vals.tolist()) / vals.size,
        "frac_below_2": float(np.mean(vals < 2.0)),
        "frac_below_5": float(np.mean(vals < 5.0)),
    }


class MetricReport:
    def __init__(self, ids, lrmsd_values, cd_values):
        self.ids = list(ids)
        self.lrmsd = [float(v) for v in lrmsd_values]
        self.cd = [float(v) for v in cd_values]

    @classmethod
    def from_poses(cls, ids, preds, truths) -> "MetricReport":
        return cls(ids, [lrmsd(p, t) for p, t in zip(preds, truths)],
                   [centroid_distance(p, t) for p, t in zip(preds, truths)])

    @property
    def aggregate(self) -> dict:
        return {"lrmsd": percentile_report(self.lrmsd), "cd": percentile_report(self.cd)}

    def table_tsv(self) -> str:
        """Ligand RMSD then centroid distance blocks, 25/50/75/Mean/%<2A/%<5A each."""
        header = ["metric"] + list(REPORT_COLUMNS)
        rows = ["\t".join(header)]
        for name, agg in (("lrmsd", self.aggregate["lrmsd"]), ("cd", self.aggregate["cd"])):
            vals = [agg["p25"], agg["p50"], agg["p75"], agg["mean"],
                    100.0 * agg["frac_below_2"], 100.0 * agg["frac_below_5"]]
            rows.append("\t".join([name] + [f"{v:.17g}" for v in vals]))
        return "\n".join(rows) + "\n"

    def to_json(self) -> str:
        per = [{"id": i, "lrmsd": l, "cd": c} for i, l, c in zip(self.ids, self.lrmsd, self.cd)]
        return dumps({"per_complex": per, "aggregate": self.aggregate}, indent=1)
