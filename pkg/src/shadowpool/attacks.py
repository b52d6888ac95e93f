"""Membership and property inference attacks over shadow-model score tables.

Score tables do not care where their models came from: independent shadow
models and shared models from a pool are interchangeable sources.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Dataset, as_generator
from .exceptions import InputError, InsufficientModelsError, ShapeError, StateError
from .nn import PROB_EPS

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class GaussianModel:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise InputError(f"std must be positive, got {self.std}")

    @classmethod
    def fit(cls, values) -> "GaussianModel":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise InsufficientModelsError("cannot fit a Gaussian to no values")
        return cls(float(values.mean()), max(float(values.std()), STD_FLOOR))

    def logpdf(self, x):
        return norm.logpdf(x, self.mean, self.std)

    def cdf(self, x):
        return norm.cdf(x, self.mean, self.std)


def scaled_logit(p, label) -> float:
    """``ln(p_y / (1 - p_y))`` with ``p_y`` clamped to ``[1e-12, 1 - 1e-12]``."""
    p = np.asarray(p, dtype=np.float64)
    py = np.clip(p[..., label] if p.ndim == 1 else np.take_along_axis(
        p, np.asarray(label)[..., None], axis=-1)[..., 0], PROB_EPS, 1.0 - PROB_EPS)
    out = np.log(py) - np.log1p(-py)
    return float(out) if np.ndim(out) == 0 else out


def scaled_logits_from_logits(logits, labels) -> np.ndarray:
    """Same statistic computed from raw logits, so it never saturates.

    ``z_y - logsumexp(z_{j != y})`` equals ``ln(p_y / (1 - p_y))`` exactly in
    real arithmetic. ``logits`` has shape ``(..., N, C)``, ``labels`` ``(N,)``.
    """
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.broadcast_to(labels[:, None], z.shape[:-1] + (1,))
    zy = np.take_along_axis(z, idx, axis=-1)[..., 0]
    others = z.copy()
    np.put_along_axis(others, idx, -np.inf, axis=-1)
    return zy - logsumexp(others, axis=-1)


def lira_offline(out_scores, target_score) -> float:
    """Probability that an OUT model scores below ``target_score``."""
    out_scores = np.asarray(out_scores, dtype=np.float64)
    if out_scores.size < 2:
        raise InsufficientModelsError(f"need >= 2 OUT scores, got {out_scores.size}")
    return float(GaussianModel.fit(out_scores).cdf(target_score))


def lira_online(in_scores, out_scores, target_score) -> float:
    """Log likelihood ratio of the target score under the IN vs OUT Gaussians."""
    in_scores = np.asarray(in_scores, dtype=np.float64)
    out_scores = np.asarray(out_scores, dtype=np.float64)
    if in_scores.size < 2 or out_scores.size < 2:
        raise InsufficientModelsError(
            f"need >= 2 IN and >= 2 OUT scores, got {in_scores.size} IN and {out_scores.size} OUT")
    g_in, g_out = GaussianModel.fit(in_scores), GaussianModel.fit(out_scores)
    return float(g_in.logpdf(target_score) - g_out.logpdf(target_score))


@dataclass
class ScoreTable:
    """Outputs of several models on the same queries, with membership ground truth.

    ``probs`` and ``logits`` have shape ``(n_models, n_queries, n_classes)``;
    ``membership[k, q]`` says whether model k trained on query q.
    """

    model_ids: list
    query_ids: np.ndarray
    labels: np.ndarray
    probs: np.ndarray
    logits: np.ndarray
    membership: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.query_ids = np.asarray(self.query_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.membership = np.asarray(self.membership, dtype=bool)
        k, q = len(self.model_ids), self.query_ids.size
        for name in ("probs", "logits"):
            arr = getattr(self, name)
            if arr.shape[:2] != (k, q):
                raise ShapeError(f"{name} shape {arr.shape} does not match {k} models x {q} queries")
        if self.membership.shape != (k, q):
            raise ShapeError(f"membership shape {self.membership.shape} != ({k}, {q})")

    @property
    def n_models(self) -> int:
        return len(self.model_ids)

    def scores(self) -> np.ndarray:
        """Scaled true-class logits, shape ``(n_models, n_queries)``."""
        return scaled_logits_from_logits(self.logits, self.labels)

    def concat(self, other: "ScoreTable") -> "ScoreTable":
        if not np.array_equal(self.query_ids, other.query_ids):
            raise InputError("score tables cover different queries")
        return ScoreTable(list(self.model_ids) + list(other.model_ids), self.query_ids, self.labels,
                          np.concatenate([self.probs, other.probs]),
                          np.concatenate([self.logits, other.logits]),
                          np.concatenate([self.membership, other.membership]))

    def to_rows(self):
        s = self.scores()
        for k, mid in enumerate(self.model_ids):
            for q, qid in enumerate(self.query_ids):
                yield (mid, int(qid), int(self.labels[q]), float(s[k, q]), int(self.membership[k, q]))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["model_id", "query_id", "label", "score", "membership"])
            for mid, qid, lab, sc, mem in self.to_rows():
                w.writerow([mid, qid, lab, repr(sc), mem])


@dataclass
class SharedModels:
    """A set of pathways of one pool, used as shadow models."""

    pool: object
    pathways: list
    name: str = "pool"


def _source_outputs(source, X, ids):
    """``(model_ids, probs, logits, membership)`` for one model source."""
    if isinstance(source, SharedModels):
        pool = source.pool
        if getattr(pool, "mapping_", None) is None and getattr(pool, "dq_exposure_", None) is None:
            raise InputError(f"pool source {source.name!r} carries no membership ground truth")
        probs, logits = pool.query_shared_models(source.pathways, X)
        member = pool.membership_matrix(source.pathways, ids)
        return [f"{source.name}/w{w}" for w in source.pathways], probs, logits, member
    if hasattr(source, "membership") and hasattr(source, "decision_function"):
        logits = source.decision_function(X)
        probs = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        name = getattr(source, "name_", None) or f"model{id(source) % 10**6}"
        return [name], probs[None], logits[None], source.membership(ids)[None]
    raise InputError(f"source {type(source).__name__} has no membership ground truth")


def build_attack_dataset(sources, queries: Dataset) -> ScoreTable:
    """Query every source model on ``queries`` and label each cell with membership."""
    if not sources:
        raise InputError("no shadow sources given")
    model_ids, probs, logits, member = [], [], [], []
    for src in sources:
        mids, p, z, m = _source_outputs(src, queries.features, queries.ids)
        model_ids += mids
        probs.append(p)
        logits.append(z)
        member.append(m)
    return ScoreTable(model_ids, queries.ids, queries.labels, np.concatenate(probs),
                      np.concatenate(logits), np.concatenate(member))


def _group_moments(scores, mask):
    counts = mask.sum(axis=0)
    means = np.where(mask, scores, 0.0).sum(axis=0) / np.maximum(counts, 1)
    var = np.where(mask, (scores - means) ** 2, 0.0).sum(axis=0) / np.maximum(counts, 1)
    return counts, means, var


def _pooled_std(scores, *masks):
    """Root mean within-group variance over every (query, mask) group with >= 2 values."""
    pooled = []
    for mask in masks:
        counts, _, var = _group_moments(scores, mask)
        pooled.append(var[counts >= 2])
    pooled = np.concatenate(pooled)
    if pooled.size == 0:
        return STD_FLOOR
    return max(float(np.sqrt(pooled.mean())), STD_FLOOR)


class LiRA(BaseEstimator):
    """Likelihood-ratio membership inference over a shadow :class:`ScoreTable`.

    ``online=True`` compares per-query IN and OUT Gaussians (log likelihood
    ratio); offline uses only the OUT Gaussian (CDF). ``fix_variance`` swaps
    per-query standard deviations for one global value pooled over every
    IN and OUT group, so a single IN model per query suffices for its mean.
    Without it, online mode needs two IN and two OUT models per query.
    """

    def __init__(self, online=True, fix_variance=False):
        self.online = online
        self.fix_variance = fix_variance

    def fit(self, table: ScoreTable, y=None):
        s = table.scores()
        m = table.membership
        n_in, n_out = m.sum(axis=0), (~m).sum(axis=0)
        min_in = 1 if self.fix_variance else 2
        if (n_out < 2).any():
            raise InsufficientModelsError(f"{int((n_out < 2).sum())} queries have < 2 OUT models")
        if self.online and (n_in < min_in).any():
            raise InsufficientModelsError(
                f"{int((n_in < min_in).sum())} queries have < {min_in} IN models")
        self.query_ids_ = table.query_ids.copy()
        _, self.mean_out_, var_out = _group_moments(s, ~m)
        if self.online:
            _, self.mean_in_, var_in = _group_moments(s, m)
        if self.fix_variance:
            std = _pooled_std(s, ~m, m) if self.online else _pooled_std(s, ~m)
            self.std_out_ = np.full(self.mean_out_.shape, std)
            if self.online:
                self.std_in_ = self.std_out_.copy()
        else:
            self.std_out_ = np.maximum(np.sqrt(var_out), STD_FLOOR)
            if self.online:
                self.std_in_ = np.maximum(np.sqrt(var_in), STD_FLOOR)
        return self

    def decision_function(self, target_scores) -> np.ndarray:
        check_is_fitted(self, "mean_out_")
        t = np.asarray(target_scores, dtype=np.float64)
        if t.shape != self.mean_out_.shape:
            raise ShapeError(f"{t.shape} target scores for {self.mean_out_.shape} queries")
        if self.online:
            return (norm.logpdf(t, self.mean_in_, self.std_in_)
                    - norm.logpdf(t, self.mean_out_, self.std_out_))
        return norm.cdf(t, self.mean_out_, self.std_out_)


def rmia_ratio(p_target, p_ref_mean):
    return np.maximum(p_target, PROB_EPS) / np.maximum(p_ref_mean, PROB_EPS)


def offline_reference(p_out_mean, a):
    """Linear estimate of the all-model mean from OUT models only."""
    return 0.5 * ((1.0 + a) * p_out_mean + (1.0 - a))


def rmia_scores(target_q, ref_q, ref_q_member, target_z, ref_z, mode="online", gamma=1.0, a=0.3):
    """Pairwise likelihood-ratio scores against a population.

    ``target_q``/``target_z``: target true-class probabilities for queries and
    population, shape ``(Q,)``/``(Z,)``. ``ref_q``/``ref_z``: reference-model
    true-class probabilities, shape ``(K, Q)``/``(K, Z)``. Returns, for each
    query x, the fraction of population points z with
    ``(P_t(x)/Pbar(x)) / (P_t(z)/Pbar(z)) >= gamma``.
    """
    ref_q = np.asarray(ref_q, dtype=np.float64)
    ref_z = np.asarray(ref_z, dtype=np.float64)
    target_z = np.asarray(target_z, dtype=np.float64)
    if target_z.size == 0:
        raise InputError("population is empty")
    if ref_q.shape[0] < 2:
        raise InsufficientModelsError(f"need >= 2 reference models, got {ref_q.shape[0]}")
    if mode == "online":
        pbar_q = ref_q.mean(axis=0)
        pbar_z = ref_z.mean(axis=0)
    elif mode == "offline":
        out = ~np.asarray(ref_q_member, dtype=bool)
        n_out = out.sum(axis=0)
        if (n_out == 0).any():
            raise InsufficientModelsError("offline RMIA needs an OUT reference model for every query")
        pbar_q = offline_reference(np.where(out, ref_q, 0.0).sum(axis=0) / n_out, a)
        pbar_z = offline_reference(ref_z.mean(axis=0), a)
    else:
        raise InputError(f"unknown RMIA mode {mode!r}")
    ratio_q = rmia_ratio(np.asarray(target_q, dtype=np.float64), pbar_q)
    ratio_z = np.sort(rmia_ratio(target_z, pbar_z))
    # LR(x, z) >= gamma  <=>  ratio_z <= ratio_x / gamma
    return np.searchsorted(ratio_z, ratio_q / gamma, side="right") / ratio_z.size


def rmia_score(target_q: float, ref_q, target_z, ref_z, mode="online", gamma=1.0, a=0.3,
               ref_q_member=None) -> float:
    """Single-query form of :func:`rmia_scores`; ``ref_q`` has one value per reference model."""
    ref_q = np.asarray(ref_q, dtype=np.float64)[:, None]
    member = None if ref_q_member is None else np.asarray(ref_q_member, dtype=bool)[:, None]
    if member is None:
        member = np.zeros_like(ref_q, dtype=bool)
    return float(rmia_scores(np.array([target_q]), ref_q, member, target_z, ref_z, mode, gamma, a)[0])


class RMIA(BaseEstimator):
    """Relative membership inference against a population of known non-members."""

    def __init__(self, mode="online", gamma=1.0, a=0.3):
        self.mode = mode
        self.gamma = gamma
        self.a = a

    def fit(self, query_table: ScoreTable, population_table: ScoreTable):
        overlap = np.intersect1d(query_table.query_ids, population_table.query_ids)
        if overlap.size:
            raise InputError(f"population shares {overlap.size} ids with the queries")
        if len(population_table.query_ids) == 0:
            raise InputError("population is empty")
        self.ref_q_ = _true_class_probs(query_table.probs, query_table.labels)
        self.ref_q_member_ = query_table.membership
        self.ref_z_ = _true_class_probs(population_table.probs, population_table.labels)
        return self

    def decision_function(self, target_q_probs, target_z_probs):
        check_is_fitted(self, "ref_q_")
        return rmia_scores(target_q_probs, self.ref_q_, self.ref_q_member_, target_z_probs,
                           self.ref_z_, self.mode, self.gamma, self.a)


def _true_class_probs(probs, labels):
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.broadcast_to(labels[:, None], probs.shape[:-1] + (1,))
    return np.take_along_axis(probs, idx, axis=-1)[..., 0]


def true_class_probs(probs, labels) -> np.ndarray:
    return _true_class_probs(probs, labels)


# property inference ------------------------------------------------------


def collect_confidences(pools, attack_X, n_pathways, rng) -> np.ndarray:
    """Flattened probability vectors on ``attack_X`` from random pathways of each pool."""
    rows = []
    gen = as_generator(rng)
    for pool in pools:
        if not getattr(pool, "property_trained_", False) and getattr(pool, "mapping_", None) is None:
            raise StateError("pool has not been trained")
        k = min(n_pathways, pool.n_pathways_)
        for w in gen.choice(pool.n_pathways_, size=k, replace=False):
            rows.append(pool.predict_proba(attack_X, pathway=int(w)).reshape(-1))
    return np.asarray(rows)


def gaussian_loglik(confidences, c) -> float:
    """Summed per-coordinate Gaussian log-likelihood of ``c``."""
    confidences = np.asarray(confidences, dtype=np.float64)
    mean = confidences.mean(axis=0)
    std = np.maximum(confidences.std(axis=0), STD_FLOOR)
    return float(norm.logpdf(np.asarray(c, dtype=np.float64), mean, std).sum())


def pia_decide(conf0, conf1, target_conf) -> tuple[int, float, float]:
    """Index of the more likely property value (ties go to 0) and both log-likelihoods."""
    l0 = gaussian_loglik(conf0, target_conf)
    l1 = gaussian_loglik(conf1, target_conf)
    return (0 if l0 >= l1 else 1), l0, l1


def pia_infer(t0, t1, pools0, pools1, attack_X, target_model, n_pathways=8, rng=0):
    """Infer whether ``target_model`` was trained on data with property ratio t0 or t1."""
    gen = as_generator(rng)
    c0 = collect_confidences(pools0, attack_X, n_pathways, gen)
    c1 = collect_confidences(pools1, attack_X, n_pathways, gen)
    c = target_model.predict_proba(attack_X).reshape(-1)
    choice, _, _ = pia_decide(c0, c1, c)
    return t0 if choice == 0 else t1
