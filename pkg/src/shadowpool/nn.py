"""Small deterministic dense-network engine.

Everything here works on float64 numpy arrays. Layers are plain value
objects; a model is just a list of layers, and parameters are exposed as
``{name: array}`` dicts so the optimizer can do sparse updates (parameters
absent from the gradient dict are left untouched, including their momentum
buffers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, NumericError, ShapeError, StateError

PROB_EPS = 1e-12

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)


@dataclass
class LinearLayer:
    """Affine map ``x @ weight.T + bias`` followed by an element-wise activation."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = RELU

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ShapeError(f"weight must be 2-d, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weight rows {self.weight.shape[0]}"
            )
        if self.activation not in _ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "LinearLayer":
        return LinearLayer(self.weight.copy(), self.bias.copy(), self.activation)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.weight.T + self.bias
        if self.activation == RELU:
            return np.maximum(z, 0.0)
        return z


def init_layer(n_in: int, n_out: int, rng: np.random.Generator, activation: str = RELU) -> LinearLayer:
    """Uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for weight and bias."""
    bound = 1.0 / math.sqrt(n_in)
    weight = rng.uniform(-bound, bound, size=(n_out, n_in))
    bias = rng.uniform(-bound, bound, size=n_out)
    return LinearLayer(weight, bias, activation)


@dataclass
class GradientTape:
    """Inputs and outputs cached by :func:`forward_stack` for one backward pass."""

    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    consumed: bool = False

    def __len__(self):
        return len(self.inputs)


def forward_stack(layers, x) -> tuple[np.ndarray, GradientTape]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"input must be a non-empty 2-d batch, got shape {x.shape}")
    tape = GradientTape()
    h = x
    for i, layer in enumerate(layers):
        if h.shape[1] != layer.n_in:
            raise ShapeError(
                f"layer {i} expects input width {layer.n_in}, got {h.shape[1]}"
            )
        tape.inputs.append(h)
        h = layer(h)
        tape.outputs.append(h)
    return h, tape


def backward_stack(layers, tape: GradientTape, upstream_grad, output_grads=None):
    """Backpropagate through a stack recorded on ``tape``.

    ``output_grads`` optionally maps a layer index to an extra gradient on
    that layer's (post-activation) output; this is how losses defined on
    hidden activations are injected.

    Returns ``(param_grads, input_grad)`` where ``param_grads[i]`` is
    ``(d_weight, d_bias)`` for ``layers[i]``.
    """
    if tape.consumed:
        raise StateError("gradient tape already consumed by a previous backward pass")
    if len(tape) != len(layers):
        raise StateError(f"tape holds {len(tape)} layers but stack has {len(layers)}")
    output_grads = output_grads or {}
    grad = np.asarray(upstream_grad, dtype=np.float64)
    if grad.shape != tape.outputs[-1].shape:
        raise ShapeError(
            f"upstream gradient shape {grad.shape} != output shape {tape.outputs[-1].shape}"
        )
    param_grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        if i in output_grads:
            grad = grad + output_grads[i]
        if layer.activation == RELU:
            grad = grad * (tape.outputs[i] > 0.0)
        param_grads[i] = (grad.T @ tape.inputs[i], grad.sum(axis=0))
        grad = grad @ layer.weight
    tape.consumed = True
    return param_grads, grad


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p, labels) -> float:
    """Mean of ``-ln p[label]`` over the batch (probabilities clamped at 1e-12)."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    labels = np.asarray(labels)
    if labels.shape != (p.shape[0],):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 1} labels for {p.shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= p.shape[1]):
        raise InputError(f"labels must lie in [0, {p.shape[1]})")
    picked = p[np.arange(p.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_EPS))))


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    return float(np.sum(kl_rows(p, q)))


def kl_rows(p, q) -> np.ndarray:
    """Row-wise KL(p || q) with both arguments clamped at 1e-12 inside the log."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return np.sum(p * (np.log(np.maximum(p, PROB_EPS)) - np.log(np.maximum(q, PROB_EPS))), axis=-1)


def cosine_lr(base: float, step: int, total: int) -> float:
    if total < 1:
        raise InputError("total steps must be >= 1")
    if step < 0 or step > total:
        raise InputError(f"step {step} outside [0, {total}]")
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total))


@dataclass
class SgdState:
    """SGD with heavy-ball momentum, L2 weight decay and a cosine schedule.

    Bias parameters (names ending in ``bias``) are not decayed.
    """

    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    total_steps: int = 1
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("momentum", "weight_decay"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise InputError(f"{name} must lie in [0, 1), got {v}")
        if self.total_steps < 1:
            raise InputError("total_steps must be >= 1")


def sgd_step(params: dict, grads: dict, state: SgdState, step_index: int) -> dict:
    """Update ``params`` in place for every name present in ``grads``."""
    if step_index >= state.total_steps:
        raise InputError(f"step {step_index} beyond schedule length {state.total_steps}")
    lr = cosine_lr(state.lr, step_index, state.total_steps)
    for name, g in grads.items():
        w = params[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {w.shape}")
        if state.weight_decay and not name.endswith("bias"):
            g = g + state.weight_decay * w
        v = state.buffers.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = state.momentum * v + g
        state.buffers[name] = v
        w -= lr * v
    return params


def layer_params(layers, prefix: str) -> dict:
    """Named views onto the weights and biases of ``layers``."""
    out = {}
    for i, layer in enumerate(layers):
        out[f"{prefix}.{i}.weight"] = layer.weight
        out[f"{prefix}.{i}.bias"] = layer.bias
    return out


def named_grads(param_grads, prefix: str) -> dict:
    out = {}
    for i, (dw, db) in enumerate(param_grads):
        out[f"{prefix}.{i}.weight"] = dw
        out[f"{prefix}.{i}.bias"] = db
    return out


def ce_logit_grad(p: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the batch-mean cross-entropy with respect to the logits."""
    g = p.copy()
    g[np.arange(p.shape[0]), labels] -= 1.0
    return g / p.shape[0]


def softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    return p * (grad_p - np.sum(grad_p * p, axis=-1, keepdims=True))


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(params: dict, loss_and_grad, tolerance: float = 1e-4, step: float = 1e-5,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``loss_and_grad(params)`` must return ``(loss, grads)`` and read the
    arrays in ``params`` (which are perturbed in place and restored).
    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    loss, grads = loss_and_grad(params)
    if not np.isfinite(loss):
        raise NumericError(f"loss is not finite: {loss}")
    worst, worst_name, count = 0.0, "", 0
    for name, w in params.items():
        analytic = np.asarray(grads.get(name, np.zeros_like(w)), dtype=np.float64)
        flat = w.reshape(-1)
        a_flat = analytic.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_and_grad(params)[0]
            flat[j] = orig - step
            down = loss_and_grad(params)[0]
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {name}[{j}]")
            numeric = (up - down) / (2.0 * step)
            err = abs(a_flat[j] - numeric) / max(abs(a_flat[j]), abs(numeric), floor)
            count += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{j}]"
    return GradCheckReport(worst, worst_name, count, tolerance)


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index chunks covering ``range(n)`` once."""
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]
