"""Shadow pool: an L x M expert grid whose pathways act as shadow models.

Each training example is routed, for the whole life of the pool, through
the single pathway the mapping assigns it. Training pairs that pathway with
a random reference pathway and adds two diversity penalties; only the
assigned pathway (plus the shared stem and head) receives gradient. After
training, a few pathways are fine-tuned on a small reused subset so they
behave like independently trained models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .cost import CostLedger
from .data import (
    Dataset, MappingMatrix, RandomSource, build_mapping, pathway_digits, sample_dq,
    sample_with_property,
)
from .exceptions import InputError, ResourceError, ShapeError, StateError
from .nn import (
    IDENTITY, PROB_EPS, GradCheckReport, SgdState, backward_stack, ce_logit_grad, cross_entropy,
    forward_stack, grad_check, init_layer, kl_rows, minibatches, sgd_step, softmax, softmax_backward,
)
from .validation import as_dataset, check_features

MAX_PATHWAYS = 65536


@dataclass(frozen=True)
class PoolArchitecture:
    """Stem -> L expert layers (M interchangeable experts each) -> linear head."""

    input_dim: int
    n_classes: int
    n_layers: int = 3
    n_experts: int = 3
    stem_widths: tuple = (32,)
    expert_width: int = 32

    def __post_init__(self):
        if self.n_layers < 1:
            raise InputError("need at least one expert layer")
        if self.n_experts < 1:
            raise InputError("need at least one expert per layer")
        if self.n_classes < 2:
            raise InputError("need at least two classes")

    @property
    def n_pathways(self) -> int:
        return self.n_experts ** self.n_layers

    @property
    def n_stack_layers(self) -> int:
        return len(self.stem_widths) + self.n_layers + 1

    def expert_input(self, layer: int) -> int:
        if layer > 0:
            return self.expert_width
        return self.stem_widths[-1] if self.stem_widths else self.input_dim

    def init_stem(self, rng):
        widths = (self.input_dim,) + tuple(self.stem_widths)
        return [init_layer(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    def init_expert(self, layer: int, rng):
        return init_layer(self.expert_input(layer), self.expert_width, rng)

    def init_head(self, rng):
        return [init_layer(self.expert_width, self.n_classes, rng, IDENTITY)]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "n_classes": self.n_classes,
                "n_layers": self.n_layers, "n_experts": self.n_experts,
                "stem_widths": list(self.stem_widths), "expert_width": self.expert_width}

    @classmethod
    def from_dict(cls, d: dict) -> "PoolArchitecture":
        d = dict(d)
        d["stem_widths"] = tuple(d["stem_widths"])
        return cls(**d)


def enumerate_pathways(n_experts: int, n_layers: int, cap: int = MAX_PATHWAYS) -> list:
    """All ``M**L`` pathways in lexicographic order; list index = pathway id."""
    total = n_experts ** n_layers
    if total > cap:
        raise ResourceError(f"{total} pathways exceed the enumeration cap {cap}")
    return [tuple(int(v) for v in row) for row in pathway_digits(np.arange(total), n_experts, n_layers)]


def pathway_index(pathway, n_experts: int) -> int:
    w = 0
    for e in pathway:
        w = w * n_experts + int(e)
    return w


def similarity_regularizer(p1, p2) -> float:
    """Negated symmetric KL between two probability batches, averaged over rows (<= 0)."""
    p1 = np.atleast_2d(p1)
    p2 = np.atleast_2d(p2)
    if p1.shape != p2.shape:
        raise ShapeError(f"probability shapes differ: {p1.shape} vs {p2.shape}")
    return float(np.mean(-0.5 * (kl_rows(p1, p2) + kl_rows(p2, p1))))


def similarity_regularizer_grad(p1, p2) -> np.ndarray:
    """d(batch-mean similarity regularizer)/d p1 with p2 held constant."""
    active = p1 > PROB_EPS
    safe = np.where(active, p1, 1.0)
    g = np.log(np.maximum(p1, PROB_EPS)) - np.log(np.maximum(p2, PROB_EPS))
    g = g + np.where(active, (p1 - p2) / safe, 0.0)
    return -0.5 * g / p1.shape[0]


def orthogonal_regularizer(H1, H2) -> float:
    """Sum over layers of |<h1, h2>| per example, averaged over the batch."""
    if len(H1) != len(H2):
        raise ShapeError(f"{len(H1)} vs {len(H2)} activation layers")
    total = None
    for l, (a, b) in enumerate(zip(H1, H2)):
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        if a.shape != b.shape:
            raise ShapeError(f"layer {l} activation shapes differ: {a.shape} vs {b.shape}")
        term = np.abs(np.sum(a * b, axis=1))
        total = term if total is None else total + term
    return float(np.mean(total)) if total is not None else 0.0


def pair_objective(stem, experts, head, path1, path2, x, y, alpha, beta, path2_out=None):
    """Loss and gradients of CE + alpha*SR + beta*OR for one batch.

    Gradients flow only along ``path1``; the reference pathway's outputs are
    constants. ``path2_out`` may carry a precomputed ``(probs, H)`` for the
    reference. Returns ``(loss, parts, grads, n_forward_layers)`` with grads
    keyed like :meth:`ShadowPool.parameters`.
    """
    n_stem, n_layers = len(stem), len(path1)
    stack = list(stem) + [experts[l][e] for l, e in enumerate(path1)] + list(head)
    logits, tape = forward_stack(stack, x)
    p1 = softmax(logits)
    parts = {"ce": cross_entropy(p1, y), "sr": 0.0, "or": 0.0}
    g_logits = ce_logit_grad(p1, y)
    extra = {}
    n_forward = len(stack)
    if alpha or beta:
        if path2_out is None:
            stack2 = list(stem) + [experts[l][e] for l, e in enumerate(path2)] + list(head)
            logits2, tape2 = forward_stack(stack2, x)
            p2 = softmax(logits2)
            H2 = tape2.outputs[n_stem:n_stem + n_layers]
            n_forward += len(stack2)
        else:
            p2, H2 = path2_out
        H1 = tape.outputs[n_stem:n_stem + n_layers]
        if alpha:
            parts["sr"] = similarity_regularizer(p1, p2)
            g_logits = g_logits + softmax_backward(p1, alpha * similarity_regularizer_grad(p1, p2))
        if beta:
            parts["or"] = orthogonal_regularizer(H1, H2)
            for l in range(n_layers):
                sign = np.sign(np.sum(H1[l] * H2[l], axis=1))
                extra[n_stem + l] = beta * sign[:, None] * H2[l] / x.shape[0]
    loss = parts["ce"] + alpha * parts["sr"] + beta * parts["or"]
    param_grads, _ = backward_stack(stack, tape, g_logits, extra)
    grads = {}
    for i, (dw, db) in enumerate(param_grads):
        if i < n_stem:
            key = f"stem.{i}"
        elif i < n_stem + n_layers:
            l = i - n_stem
            key = f"expert.{l}.{path1[l]}"
        else:
            key = f"head.{i - n_stem - n_layers}"
        grads[f"{key}.weight"] = dw
        grads[f"{key}.bias"] = db
    return loss, parts, grads, n_forward


def toy_pool_gradcheck(rng, alpha: float, beta: float, tolerance: float = 1e-4,
                       arch: PoolArchitecture = None, batch: int = 6) -> GradCheckReport:
    """Gradient check of :func:`pair_objective` on a freshly initialized small pool.

    The reference pathway's outputs are computed once and frozen, matching
    the stop-gradient the training loop applies.
    """
    arch = arch or PoolArchitecture(4, 3, n_layers=2, n_experts=2, stem_widths=(5,), expert_width=4)
    stem = arch.init_stem(rng)
    experts = [[arch.init_expert(l, rng) for _ in range(arch.n_experts)] for l in range(arch.n_layers)]
    head = arch.init_head(rng)
    x = rng.standard_normal((batch, arch.input_dim))
    y = rng.integers(0, arch.n_classes, batch)
    path1 = tuple(int(v) for v in rng.integers(0, arch.n_experts, arch.n_layers))
    path2 = tuple((e + 1) % arch.n_experts for e in path1)
    logits2, tape2 = forward_stack(stem + [experts[l][e] for l, e in enumerate(path2)] + head, x)
    frozen = (softmax(logits2), [h.copy() for h in tape2.outputs[len(stem):len(stem) + arch.n_layers]])
    params = {}
    for prefix, layers in [("stem", stem), ("head", head)] + [
            (f"expert.{l}.{e}", [experts[l][e]]) for l, e in enumerate(path1)]:
        for i, layer in enumerate(layers):
            key = f"{prefix}.{i}" if prefix in ("stem", "head") else prefix
            params[f"{key}.weight"] = layer.weight
            params[f"{key}.bias"] = layer.bias

    def objective(_params):
        loss, _, grads, _ = pair_objective(stem, experts, head, path1, path2, x, y, alpha, beta,
                                           path2_out=frozen)
        return loss, grads

    return grad_check(params, objective, tolerance=tolerance)


class ShadowPool(ClassifierMixin, BaseEstimator):
    """Mixture-of-experts shadow pool.

    ``fit`` builds the data-to-pathway mapping, trains with pathway
    regularization and, when ``n_shared > 0``, aligns ``n_shared`` random
    pathways on a ``dq_fraction`` subsample of the training data. Each
    aligned pathway can then stand in for one shadow model.

    Parameters
    ----------
    n_experts, n_layers : int
        Grid size M and L; the pool has ``M**L`` pathways.
    alpha, beta : float
        Weights of the similarity and orthogonal regularizers.
    n_shared : int
        Number of pathways to align (0 skips alignment in ``fit``).
    ft_epochs : int
        Fine-tuning epochs per aligned pathway.
    """

    def __init__(self, n_experts=3, n_layers=3, stem_widths=(32,), expert_width=32,
                 alpha=0.05, beta=0.01, epochs=30, batch_size=64, lr=0.1, momentum=0.9,
                 weight_decay=5e-4, n_shared=8, dq_fraction=0.1, ft_epochs=10, ft_lr=None,
                 n_classes=None, random_state=0):
        self.n_experts = n_experts
        self.n_layers = n_layers
        self.stem_widths = stem_widths
        self.expert_width = expert_width
        self.alpha = alpha
        self.beta = beta
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.n_shared = n_shared
        self.dq_fraction = dq_fraction
        self.ft_epochs = ft_epochs
        self.ft_lr = ft_lr
        self.n_classes = n_classes
        self.random_state = random_state

    # construction -------------------------------------------------------

    def _rng(self, purpose):
        return RandomSource(self.random_state).stream(purpose)

    def initialize(self, input_dim: int, n_classes: int) -> "ShadowPool":
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InputError(f"{name} must be finite and >= 0, got {v}")
        self.architecture_ = PoolArchitecture(input_dim, n_classes, self.n_layers, self.n_experts,
                                              tuple(self.stem_widths), self.expert_width)
        if self.architecture_.n_pathways > MAX_PATHWAYS:
            raise ResourceError(f"{self.architecture_.n_pathways} pathways exceed cap {MAX_PATHWAYS}")
        rng = self._rng("init")
        arch = self.architecture_
        self.stem_ = arch.init_stem(rng)
        self.experts_ = [[arch.init_expert(l, rng) for _ in range(arch.n_experts)]
                         for l in range(arch.n_layers)]
        self.head_ = arch.init_head(rng)
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = input_dim
        self.mapping_ = None
        self.aligned_set_ = None
        self.dq_ids_ = None
        self.dq_exposure_ = None
        self.train_log_ = []
        self.property_trained_ = False
        self.ledger_ = CostLedger()
        return self

    @property
    def n_pathways_(self) -> int:
        return self.architecture_.n_pathways

    def parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.stem_):
            out[f"stem.{i}.weight"] = layer.weight
            out[f"stem.{i}.bias"] = layer.bias
        for l, row in enumerate(self.experts_):
            for m, layer in enumerate(row):
                out[f"expert.{l}.{m}.weight"] = layer.weight
                out[f"expert.{l}.{m}.bias"] = layer.bias
        for i, layer in enumerate(self.head_):
            out[f"head.{i}.weight"] = layer.weight
            out[f"head.{i}.bias"] = layer.bias
        return out

    def pathway(self, w: int) -> tuple:
        if not 0 <= int(w) < self.n_pathways_:
            raise InputError(f"pathway id {w} outside [0, {self.n_pathways_})")
        return tuple(int(v) for v in pathway_digits(int(w), self.n_experts, self.n_layers))

    def _as_path(self, pathway) -> tuple:
        if np.isscalar(pathway):
            return self.pathway(pathway)
        path = tuple(int(v) for v in pathway)
        if len(path) != self.n_layers or any(not 0 <= e < self.n_experts for e in path):
            raise InputError(f"invalid pathway {pathway!r} for M={self.n_experts}, L={self.n_layers}")
        return path

    def stack(self, pathway) -> list:
        path = self._as_path(pathway)
        return list(self.stem_) + [self.experts_[l][e] for l, e in enumerate(path)] + list(self.head_)

    # routing + training ---------------------------------------------------

    def fit(self, X, y=None, ids=None):
        data = as_dataset(X, y, ids, self.n_classes)
        self.initialize(data.dim, data.n_classes)
        self.route(data)
        self.train(data)
        if self.n_shared:
            self.align(self.sample_dq(data), self.n_shared, self.ft_epochs)
        return self

    def sample_dq(self, data: Dataset) -> Dataset:
        """The reused fine-tuning subset ``fit`` draws from ``data``."""
        return sample_dq(data, self.dq_fraction, self._rng("dq"))

    def route(self, data: Dataset) -> MappingMatrix:
        self.mapping_ = build_mapping(data, self.n_experts, self.n_layers, self._rng("mapping"))
        self.train_ids_ = np.sort(data.ids)
        return self.mapping_

    def _pathway_batches(self, data: Dataset, rng):
        positions = data.positions_of(self.mapping_.ids)
        batches = []
        for w in range(self.n_pathways_):
            pos = positions[self.mapping_.assignment == w]
            for chunk in minibatches(pos.size, self.batch_size, rng):
                batches.append((w, pos[chunk]))
        order = rng.permutation(len(batches))
        return [batches[i] for i in order]

    def train(self, data: Dataset, run_id="pool-train") -> "ShadowPool":
        """Pathway-regularized training over the routed data."""
        check_is_fitted(self, "architecture_")
        if self.mapping_ is None:
            raise StateError("route() must build the mapping before training")
        unmapped = np.setdiff1d(data.ids, self.mapping_.ids)
        if unmapped.size:
            raise StateError(f"{unmapped.size} training ids have no assigned pathway")
        rng = self._rng("train")
        n_batches = sum(-(-int(s) // self.batch_size) for s in self.mapping_.subset_sizes())
        state = SgdState(self.lr, self.momentum, self.weight_decay, max(1, self.epochs * n_batches))
        params = self.parameters()
        step = 0
        with self.ledger_.timed(run_id):
            for epoch in range(self.epochs):
                sums = {"loss": 0.0, "ce": 0.0, "sr": 0.0, "or": 0.0}
                for w, pos in self._pathway_batches(data, rng):
                    ref = int(rng.integers(self.n_pathways_ - 1)) if self.n_pathways_ > 1 else w
                    if ref >= w and self.n_pathways_ > 1:
                        ref += 1
                    x, y = data.features[pos], data.labels[pos]
                    loss, parts, grads, n_fwd = pair_objective(
                        self.stem_, self.experts_, self.head_, self.pathway(w), self.pathway(ref),
                        x, y, self.alpha, self.beta)
                    sgd_step(params, grads, state, step)
                    step += 1
                    self.ledger_.record(run_id, forward=n_fwd * len(pos),
                                        backward=self.architecture_.n_stack_layers * len(pos),
                                        updates=1)
                    sums["loss"] += loss * len(pos)
                    for k in ("ce", "sr", "or"):
                        sums[k] += parts[k] * len(pos)
                self.train_log_.append({"phase": "train", "epoch": epoch,
                                        **{k: v / len(data) for k, v in sums.items()}})
        return self

    def train_property(self, shadow_data: Dataset, ratio: float, iterations: int, subset_size: int,
                       run_id="pool-property"):
        """Pathway-pair training on subsets whose property ratio is fixed at ``ratio``.

        Each iteration draws two subsets at ``ratio`` and two distinct random
        pathways, then runs one pass over both, alternating batches. Each
        pathway uses the other, frozen, as its regularization reference.
        Call :meth:`initialize` first.
        """
        check_is_fitted(self, "architecture_")
        if self.n_pathways_ < 2:
            raise InputError("property training needs at least two pathways")
        self.route(shadow_data)
        rng = self._rng("property")
        n_batches = 2 * (-(-subset_size // self.batch_size))
        state = SgdState(self.lr, self.momentum, self.weight_decay, max(1, iterations * n_batches))
        params = self.parameters()
        step = 0
        with self.ledger_.timed(run_id):
            for it in range(iterations):
                subsets = [sample_with_property(shadow_data, subset_size, ratio, rng) for _ in range(2)]
                w1, w2 = (int(v) for v in rng.choice(self.n_pathways_, size=2, replace=False))
                paths = (self.pathway(w1), self.pathway(w2))
                orders = [minibatches(len(d), self.batch_size, rng) for d in subsets]
                total = 0.0
                for k in range(max(len(o) for o in orders)):
                    for side in (0, 1):
                        if k >= len(orders[side]):
                            continue
                        idx = orders[side][k]
                        x, y = subsets[side].features[idx], subsets[side].labels[idx]
                        mine, other = paths[side], paths[1 - side]
                        ref = None
                        if self.alpha or self.beta:
                            p2, _, H2 = self._frozen_forward(other, x)
                            ref = (p2, H2)
                        loss, _, grads, n_fwd = pair_objective(
                            self.stem_, self.experts_, self.head_, mine, other, x, y,
                            self.alpha, self.beta, path2_out=ref)
                        if ref is not None:
                            n_fwd += self.architecture_.n_stack_layers
                        sgd_step(params, grads, state, step)
                        step += 1
                        self.ledger_.record(run_id, forward=n_fwd * idx.size,
                                            backward=self.architecture_.n_stack_layers * idx.size,
                                            updates=1)
                        total += loss * idx.size
                self.train_log_.append({"phase": "property", "iteration": it, "pathways": [w1, w2],
                                        "loss": total / (2 * subset_size)})
        self.property_ratio_ = float(ratio)
        self.property_trained_ = True
        return self

    def _frozen_forward(self, path, x):
        logits, tape = forward_stack(self.stack(path), x)
        n_stem = len(self.stem_)
        return softmax(logits), logits, tape.outputs[n_stem:n_stem + self.n_layers]

    def align(self, dq: Dataset, n: int, ft_epochs: int, exposure=None, run_id="pool-align"):
        """Fine-tune ``n`` random distinct pathways in sequence on ``dq`` with CE.

        ``exposure`` optionally restricts each selected pathway to a subset of
        ``dq``: a boolean array of shape ``(n, len(dq))``. By default every
        aligned pathway sees all of ``dq``.
        """
        check_is_fitted(self, "architecture_")
        if n > self.n_pathways_:
            raise InputError(f"cannot align {n} pathways out of {self.n_pathways_}")
        if self.mapping_ is not None:
            stray = np.setdiff1d(dq.ids, self.train_ids_)
            if stray.size:
                raise InputError(f"{stray.size} fine-tuning ids are not training ids")
        if exposure is None:
            exposure = np.ones((n, len(dq)), dtype=bool)
        exposure = np.asarray(exposure, dtype=bool)
        if exposure.shape != (n, len(dq)):
            raise ShapeError(f"exposure shape {exposure.shape} != ({n}, {len(dq)})")
        rng = self._rng("align")
        selected = self.select_pathways(n)
        lr = self.lr if self.ft_lr is None else self.ft_lr
        with self.ledger_.timed(run_id):
            for k, w in enumerate(selected):
                sub = dq.take(np.flatnonzero(exposure[k]))
                if ft_epochs > 0 and len(sub):
                    self._finetune(w, sub, ft_epochs, lr, rng, run_id)
        self.aligned_set_ = selected
        self.dq_ids_ = np.sort(dq.ids)
        self.dq_exposure_ = {w: np.sort(dq.ids[exposure[k]]) for k, w in enumerate(selected)}
        return self

    def select_pathways(self, n: int) -> list:
        """The ``n`` distinct pathways :meth:`align` will fine-tune; depends only on the seed."""
        if not 0 <= n <= self.n_pathways_:
            raise InputError(f"cannot align {n} pathways out of {self.n_pathways_}")
        gen = self._rng("align-select")
        return [int(w) for w in gen.choice(self.n_pathways_, size=n, replace=False)]

    def _finetune(self, w, data, epochs, lr, rng, run_id):
        path = self.pathway(w)
        n_batches = -(-len(data) // self.batch_size)
        state = SgdState(lr, self.momentum, self.weight_decay, epochs * n_batches)
        params = self.parameters()
        step = 0
        for epoch in range(epochs):
            total = 0.0
            for idx in minibatches(len(data), self.batch_size, rng):
                loss, _, grads, n_fwd = pair_objective(
                    self.stem_, self.experts_, self.head_, path, None,
                    data.features[idx], data.labels[idx], 0.0, 0.0)
                sgd_step(params, grads, state, step)
                step += 1
                self.ledger_.record(run_id, forward=n_fwd * idx.size,
                                    backward=self.architecture_.n_stack_layers * idx.size, updates=1)
                total += loss * idx.size
            self.train_log_.append({"phase": "align", "pathway": w, "epoch": epoch,
                                    "loss": total / len(data)})

    # queries ------------------------------------------------------------

    def pathway_forward(self, pathway, X):
        """``(probabilities, logits, H)`` where ``H[l]`` is the active expert output at layer l."""
        check_is_fitted(self, "architecture_")
        X = check_features(X, self.n_features_in_)
        logits, tape = forward_stack(self.stack(pathway), X)
        n_stem = len(self.stem_)
        return softmax(logits), logits, tape.outputs[n_stem:n_stem + self.n_layers]

    @property
    def default_pathway_(self) -> int:
        return self.aligned_set_[0] if self.aligned_set_ else 0

    def predict_proba(self, X, pathway=None):
        pw = self.default_pathway_ if pathway is None else pathway
        return self.pathway_forward(pw, X)[0]

    def decision_function(self, X, pathway=None):
        pw = self.default_pathway_ if pathway is None else pathway
        return self.pathway_forward(pw, X)[1]

    def predict(self, X, pathway=None):
        return np.argmax(self.predict_proba(X, pathway), axis=1)

    def query_shared_models(self, pathways, X):
        """``(probs, logits)`` arrays of shape ``(len(pathways), len(X), C)``."""
        probs, logits = [], []
        for w in pathways:
            p, z, _ = self.pathway_forward(w, X)
            probs.append(p)
            logits.append(z)
        return np.stack(probs), np.stack(logits)

    def member_of(self, example_id, pathway: int) -> bool:
        """Whether ``example_id`` was trained on by pathway ``pathway``.

        True if the mapping routes it there, or if it was in the fine-tuning
        data that pathway saw during alignment.
        """
        check_is_fitted(self, "architecture_")
        if self.mapping_ is None:
            raise StateError("pool has no mapping")
        w = pathway if np.isscalar(pathway) else pathway_index(self._as_path(pathway), self.n_experts)
        self.pathway(w)
        if isinstance(example_id, (bool, float)) or int(example_id) != example_id:
            raise InputError(f"example id must be an integer, got {example_id!r}")
        eid = int(example_id)
        if eid in self.mapping_ and self.mapping_.pathway_of(eid) == w:
            return True
        if self.dq_exposure_ and w in self.dq_exposure_:
            exposed = self.dq_exposure_[w]
            pos = np.searchsorted(exposed, eid)
            return bool(pos < exposed.size and exposed[pos] == eid)
        return False

    def membership_matrix(self, pathways, ids) -> np.ndarray:
        """Boolean ``(len(pathways), len(ids))`` grid of :meth:`member_of`."""
        ids = np.asarray(ids, dtype=np.int64)
        in_map = np.isin(ids, self.mapping_.ids)
        assigned = np.full(ids.size, -1, dtype=np.int64)
        if in_map.any():
            assigned[in_map] = [self.mapping_.pathway_of(i) for i in ids[in_map]]
        out = np.zeros((len(pathways), ids.size), dtype=bool)
        for k, w in enumerate(pathways):
            out[k] = assigned == w
            if self.dq_exposure_ and w in self.dq_exposure_:
                out[k] |= np.isin(ids, self.dq_exposure_[w])
        return out

    def as_shadow_model(self, pathway):
        """Standalone :class:`~shadowpool.shadow.ShadowModel` with this pathway's weights."""
        from .shadow import ShadowModel

        return ShadowModel.from_layers([layer.copy() for layer in self.stack(pathway)],
                                       n_classes=self.architecture_.n_classes,
                                       n_layers=self.n_layers, stem_widths=tuple(self.stem_widths),
                                       expert_width=self.expert_width)

    def expert_similarity(self, X) -> float:
        """Mean pairwise |cos| between same-layer expert activations on ``X``.

        Every expert of layer l is fed the same input: the layer-(l-1) output
        along the all-zeros reference prefix.
        """
        from .metrics import mean_pairwise_abs_cosine

        X = check_features(X, self.n_features_in_)
        h = X
        for layer in self.stem_:
            h = layer(h)
        scores = []
        for row in self.experts_:
            acts = [expert(h) for expert in row]
            scores.append(mean_pairwise_abs_cosine(acts))
            h = acts[0]
        return float(np.mean(scores))


def train_pool(pool: ShadowPool, D_tr: Dataset) -> ShadowPool:
    """Route ``D_tr`` and run pathway-regularized training (no alignment)."""
    pool.initialize(D_tr.dim, D_tr.n_classes)
    pool.route(D_tr)
    return pool.train(D_tr)


def align_pathways(pool: ShadowPool, D_q: Dataset, n: int, ft_epochs: int) -> ShadowPool:
    return pool.align(D_q, n, ft_epochs)
