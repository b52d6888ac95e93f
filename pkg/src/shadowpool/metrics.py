"""Attack quality metrics and shadow-model diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .attacks import GaussianModel
from .exceptions import InputError
from .nn import PROB_EPS


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def roc_and_auc(scores, labels) -> tuple[RocCurve, float]:
    """ROC by descending-threshold sweep (ties grouped) and trapezoidal AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise InputError("scores and labels differ in length")
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise InputError("ROC needs both members and non-members")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[last_of_group]
    fps = (last_of_group + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[last_of_group]]
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr, tpr, thresholds), auc


def auc_score(scores, labels) -> float:
    return roc_and_auc(scores, labels)[1]


def tpr_at_fpr(curve: RocCurve, fpr_target: float) -> float:
    """TPR at the largest achieved FPR not exceeding ``fpr_target``."""
    ok = curve.fpr <= fpr_target
    return float(curve.tpr[ok].max())


def bhattacharyya(g1: GaussianModel, g2: GaussianModel) -> float:
    v1, v2 = g1.std ** 2, g2.std ** 2
    dist = 0.25 * (g1.mean - g2.mean) ** 2 / (v1 + v2) + 0.5 * np.log((v1 + v2) / (2.0 * g1.std * g2.std))
    return float(np.exp(-dist))


def mean_entropy(probs) -> float:
    """Mean Shannon entropy (nats) of the rows of ``probs``."""
    p = np.asarray(probs, dtype=np.float64)
    return float(np.mean(-np.sum(p * np.log(np.maximum(p, PROB_EPS)), axis=-1)))


def ensemble_diversity(model_probs) -> float:
    """Entropy of the ensemble-mean prediction, averaged over probe examples."""
    return mean_entropy(np.mean(np.asarray(model_probs, dtype=np.float64), axis=0))


def entropy_diversity(model_probs, sizes=None, base: int = 4) -> dict:
    """Entropy gain ``D(S_k) - D(S_base)`` over nested model prefixes.

    ``model_probs`` has shape ``(n_models, n_probe, n_classes)``. Default
    sizes double from ``base`` up to the number of models.
    """
    model_probs = np.asarray(model_probs, dtype=np.float64)
    k = model_probs.shape[0]
    if k < base:
        raise InputError(f"entropy diversity needs >= {base} models, got {k}")
    if sizes is None:
        sizes = []
        s = base
        while s <= k:
            sizes.append(s)
            s *= 2
    ref = ensemble_diversity(model_probs[:base])
    gains = {}
    for s in sizes:
        if not base <= s <= k:
            raise InputError(f"subset size {s} outside [{base}, {k}]")
        gains[int(s)] = ensemble_diversity(model_probs[:s]) - ref
    return gains


def mean_pairwise_abs_cosine(activations) -> float:
    """Mean over model pairs and examples of |cos| between activation rows.

    A zero activation row contributes cosine 0.
    """
    acts = [np.asarray(a, dtype=np.float64) for a in activations]
    norms = [np.linalg.norm(a, axis=1) for a in acts]
    vals = []
    for i in range(len(acts)):
        for j in range(i + 1, len(acts)):
            denom = norms[i] * norms[j]
            dots = np.sum(acts[i] * acts[j], axis=1)
            cos = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
            vals.append(np.mean(np.abs(cos)))
    if not vals:
        raise InputError("need at least two activation sets")
    return float(np.mean(vals))


def consistency(shadow_scores, target_scores) -> float:
    """Bhattacharyya overlap between Gaussians fitted to two score samples."""
    return bhattacharyya(GaussianModel.fit(shadow_scores), GaussianModel.fit(target_scores))


def format_delta(delta: float, threshold: float = 0.02) -> str:
    """Signed change with two decimals, or ``=`` when smaller than ``threshold``."""
    if abs(delta) < threshold:
        return "="
    return f"{delta:+.2f}"
