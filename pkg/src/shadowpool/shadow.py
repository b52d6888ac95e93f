"""Baseline shadow models: independent training and neural-masking augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .cost import CostLedger
from .data import Dataset, RandomSource, as_generator
from .exceptions import InputError
from .nn import (
    SgdState, backward_stack, ce_logit_grad, cross_entropy, forward_stack, minibatches,
    named_grads, layer_params, sgd_step, softmax,
)
from .pool import PoolArchitecture
from .validation import as_dataset, check_features

FC = "fc"
CONV = "conv"


class ShadowModel(ClassifierMixin, BaseEstimator):
    """Stem, ``n_layers`` expert-shaped ReLU layers and a linear head.

    Same end-to-end shape as one pathway of a :class:`~shadowpool.pool.ShadowPool`
    built with matching widths, so weights transplant in either direction.
    """

    def __init__(self, stem_widths=(32,), expert_width=32, n_layers=3, epochs=30, batch_size=64,
                 lr=0.1, momentum=0.9, weight_decay=5e-4, n_classes=None, random_state=0):
        self.stem_widths = stem_widths
        self.expert_width = expert_width
        self.n_layers = n_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.n_classes = n_classes
        self.random_state = random_state

    @classmethod
    def from_layers(cls, layers, n_classes=None, **params) -> "ShadowModel":
        model = cls(n_layers=params.pop("n_layers", max(0, len(layers) - 2)), **params)
        model.layers_ = list(layers)
        model.n_classes_ = n_classes or layers[-1].n_out
        model.classes_ = np.arange(model.n_classes_)
        model.n_features_in_ = layers[0].n_in
        model.train_ids_ = np.empty(0, dtype=np.int64)
        model.ledger_ = CostLedger()
        return model

    def architecture(self, input_dim, n_classes) -> PoolArchitecture:
        return PoolArchitecture(input_dim, n_classes, self.n_layers, 1,
                                tuple(self.stem_widths), self.expert_width)

    def initialize(self, input_dim: int, n_classes: int) -> "ShadowModel":
        arch = self.architecture(input_dim, n_classes)
        rng = RandomSource(self.random_state).stream("init")
        self.layers_ = (arch.init_stem(rng) + [arch.init_expert(l, rng) for l in range(arch.n_layers)]
                        + arch.init_head(rng))
        self.n_classes_ = n_classes
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = input_dim
        self.train_ids_ = np.empty(0, dtype=np.int64)
        self.ledger_ = CostLedger()
        return self

    def fit(self, X, y=None, ids=None, run_id="train"):
        data = as_dataset(X, y, ids, self.n_classes)
        self.initialize(data.dim, data.n_classes)
        rng = RandomSource(self.random_state).stream("train")
        n_batches = -(-len(data) // self.batch_size)
        state = SgdState(self.lr, self.momentum, self.weight_decay, max(1, self.epochs * n_batches))
        params = self.parameters()
        n_layers = len(self.layers_)
        step = 0
        with self.ledger_.timed(run_id):
            for _ in range(self.epochs):
                for idx in minibatches(len(data), self.batch_size, rng):
                    logits, tape = forward_stack(self.layers_, data.features[idx])
                    g = ce_logit_grad(softmax(logits), data.labels[idx])
                    grads, _ = backward_stack(self.layers_, tape, g)
                    sgd_step(params, named_grads(grads, "layer"), state, step)
                    step += 1
                    self.ledger_.record(run_id, forward=n_layers * idx.size,
                                        backward=n_layers * idx.size, updates=1)
        self.train_ids_ = np.sort(data.ids)
        return self

    def parameters(self) -> dict:
        return layer_params(self.layers_, "layer")

    def decision_function(self, X):
        check_is_fitted(self, "layers_")
        X = check_features(X, self.n_features_in_)
        return forward_stack(self.layers_, X)[0]

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def loss(self, X, y) -> float:
        return cross_entropy(self.predict_proba(X), np.asarray(y))

    def member_of(self, example_id) -> bool:
        check_is_fitted(self, "layers_")
        pos = np.searchsorted(self.train_ids_, int(example_id))
        return bool(pos < self.train_ids_.size and self.train_ids_[pos] == int(example_id))

    def membership(self, ids) -> np.ndarray:
        return np.isin(np.asarray(ids, dtype=np.int64), self.train_ids_)

    def clone_fitted(self) -> "ShadowModel":
        twin = ShadowModel.from_layers([layer.copy() for layer in self.layers_], self.n_classes_,
                                       **{k: v for k, v in self.get_params().items()
                                          if k != "n_classes"})
        twin.train_ids_ = self.train_ids_.copy()
        return twin

    def same_weights(self, other: "ShadowModel") -> bool:
        if len(self.layers_) != len(other.layers_):
            return False
        return all(a.weight.tobytes() == b.weight.tobytes() and a.bias.tobytes() == b.bias.tobytes()
                   for a, b in zip(self.layers_, other.layers_))


def train_independent(dataset: Dataset, arch: PoolArchitecture, seed=0, ledger: CostLedger = None,
                      run_id="shadow", **train_params) -> ShadowModel:
    """Train one conventional shadow model with the given architecture."""
    model = ShadowModel(stem_widths=arch.stem_widths, expert_width=arch.expert_width,
                        n_layers=arch.n_layers, n_classes=arch.n_classes, random_state=seed,
                        **train_params)
    model.fit(dataset, run_id=run_id)
    if ledger is not None:
        ledger.merge(model.ledger_, prefix=f"{run_id}/" if run_id != "train" else "")
    return model


@dataclass(frozen=True)
class MaskSpec:
    """Which weights to prune (``fc`` head or ``conv`` middle layers) and how often."""

    scope: str
    p: float
    seed: int = 0

    def __post_init__(self):
        if self.scope not in (FC, CONV):
            raise InputError(f"mask scope must be 'fc' or 'conv', got {self.scope!r}")
        if not 0.0 <= self.p <= 1.0:
            raise InputError(f"prune probability must lie in [0, 1], got {self.p}")

    @property
    def label(self) -> str:
        return f"{self.scope.upper()}-{self.p:g}"


def mask_scope(model: ShadowModel, scope: str) -> list:
    """Layer indices covered by a mask scope."""
    n = len(model.layers_)
    if scope == FC:
        return [n - 1]
    n_stem = n - model.n_layers - 1
    return list(range(n_stem, n_stem + model.n_layers))


def augment_model(base: ShadowModel, spec: MaskSpec, rng=None) -> ShadowModel:
    """Copy of ``base`` with each in-scope weight zeroed independently with prob ``p``.

    Biases and out-of-scope layers are untouched; ``base`` is not modified.
    """
    check_is_fitted(base, "layers_")
    gen = as_generator(RandomSource(spec.seed).stream("mask") if rng is None else rng)
    aug = base.clone_fitted()
    for i in mask_scope(aug, spec.scope):
        layer = aug.layers_[i]
        keep = gen.random(layer.weight.shape) >= spec.p
        layer.weight *= keep
    return aug


def accuracy(model, X, y) -> float:
    return float(np.mean(model.predict(X) == np.asarray(y)))


def augment_with_guardrail(base: ShadowModel, spec: MaskSpec, X_test, y_test, rng=None,
                           max_drop: float = 0.10) -> ShadowModel:
    """:func:`augment_model`, rejecting specs that cost more than ``max_drop`` test accuracy."""
    aug = augment_model(base, spec, rng)
    drop = accuracy(base, X_test, y_test) - accuracy(aug, X_test, y_test)
    if drop > max_drop:
        raise InputError(f"{spec.label} drops test accuracy by {drop:.3f} (limit {max_drop:.2f})")
    return aug
