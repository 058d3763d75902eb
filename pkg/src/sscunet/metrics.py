"""Endmember matching, SAD and abundance RMSE."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateInputError, DimensionError
from .hsi import AbundanceField, EndmemberSet


def _signatures(e):
    return e.signatures if isinstance(e, EndmemberSet) else np.asarray(e, dtype=float)


def _fractions(x):
    return x.fractions if isinstance(x, AbundanceField) else np.asarray(x, dtype=float)


def sad_matrix(est, gt):
    """SAD (radians) between every gt row i and est row j, unclamped."""
    E, G = _signatures(est), _signatures(gt)
    ne = np.linalg.norm(E, axis=1)
    ng = np.linalg.norm(G, axis=1)
    if np.any(ne == 0) or np.any(ng == 0):
        raise DegenerateInputError("zero-norm endmember signature")
    cos = (G @ E.T) / np.outer(ng, ne)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def match_endmembers(est, gt):
    """Permutation ``perm`` with est[perm[i]] matched to gt[i], minimizing total SAD."""
    E, G = _signatures(est), _signatures(gt)
    if E.shape != G.shape:
        raise DimensionError(f"cannot match {E.shape} endmembers against {G.shape}")
    cost = sad_matrix(E, G)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm


def sad_metric(est, gt, perm):
    cost = sad_matrix(est, gt)
    per = cost[np.arange(len(perm)), perm]
    return per, float(per.mean())


def rmse_metric(est, gt, perm):
    """Per-endmember RMSE plus the full-vector RMSE over pixels.

    ``est`` channels are reordered by ``perm`` into gt order first.
    """
    X, G = _fractions(est), _fractions(gt)
    if X.shape != G.shape:
        raise DimensionError(f"abundance shapes differ: {X.shape} vs {G.shape}")
    Xm = X[..., perm].reshape(-1, X.shape[-1])
    Gm = G.reshape(-1, G.shape[-1])
    diff = Xm - Gm
    per = np.sqrt(np.mean(diff ** 2, axis=0))
    vector = float(np.sqrt(np.mean(np.sum(diff ** 2, axis=1))))
    return per, vector


@dataclass
class MetricReport:
    permutation: list
    sad_per_endmember: list
    mean_sad: float
    rmse_per_endmember: list = None
    mean_rmse: float = None
    rmse_vector: float = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self, names=None):
        p = len(self.permutation)
        names = names or [f"EM{i + 1}" for i in range(p)]
        width = max(8, max(len(n) for n in names))
        lines = [f"{'':<{width}}  {'SAD':>8}  {'RMSE':>8}"]
        for i in range(p):
            rm = "" if self.rmse_per_endmember is None else f"{self.rmse_per_endmember[i]:8.4f}"
            lines.append(f"{names[i]:<{width}}  {self.sad_per_endmember[i]:8.4f}  {rm:>8}")
        rm = "" if self.mean_rmse is None else f"{self.mean_rmse:8.4f}"
        lines.append(f"{'Mean':<{width}}  {self.mean_sad:8.4f}  {rm:>8}")
        if self.rmse_vector is not None:
            lines.append(f"{'RMSE (vector)':<{width}}  {'':>8}  {self.rmse_vector:8.4f}")
        return "\n".join(lines)


def evaluate(est_endmembers, gt_endmembers, est_abundances=None, gt_abundances=None,
             metadata=None):
    perm = match_endmembers(est_endmembers, gt_endmembers)
    per_sad, mean_sad = sad_metric(est_endmembers, gt_endmembers, perm)
    report = MetricReport(perm.tolist(), per_sad.tolist(), mean_sad, metadata=dict(metadata or {}))
    if est_abundances is not None and gt_abundances is not None:
        per_rmse, vec = rmse_metric(est_abundances, gt_abundances, perm)
        report.rmse_per_endmember = per_rmse.tolist()
        report.mean_rmse = float(per_rmse.mean())
        report.rmse_vector = vec
    return report
