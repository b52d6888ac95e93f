import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shadowpool.exceptions import InputError, NumericError, ShapeError, StateError
from shadowpool.nn import (
    IDENTITY, LinearLayer, SgdState, backward_stack, ce_logit_grad, cosine_lr, cross_entropy,
    forward_stack, grad_check, init_layer, kl_divergence, layer_params, minibatches, named_grads,
    sgd_step, softmax,
)


def simplex(n):
    return arrays(np.float64, n, elements=st.floats(0.01, 1.0)).map(lambda v: v / v.sum())


def test_cross_entropy_uniform_two_class():
    assert cross_entropy(np.array([[0.5, 0.5]]), np.array([0])) == pytest.approx(math.log(2), abs=1e-12)


def test_cross_entropy_clamps_zero_probability():
    assert cross_entropy(np.array([[0.0, 1.0]]), np.array([0])) == pytest.approx(-math.log(1e-12))


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(InputError):
        cross_entropy(np.array([[0.5, 0.5]]), np.array([2]))


def test_kl_known_value():
    # KL((0.5,0.5) || (0.9,0.1)) = 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1)
    expected = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(5.0)
    assert kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(simplex(4), simplex(4))
def test_kl_non_negative(p, q):
    assert kl_divergence(p, q) >= -1e-12


@given(simplex(5))
def test_kl_self_is_zero(p):
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)


def test_softmax_rows_sum_to_one_and_shift_invariant(rng):
    z = rng.standard_normal((7, 5)) * 50
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_allclose(softmax(z + 1000.0), p)


def test_cosine_schedule_endpoints():
    assert cosine_lr(0.1, 0, 10) == pytest.approx(0.1)
    assert cosine_lr(0.1, 5, 10) == pytest.approx(0.05)
    assert cosine_lr(0.1, 10, 10) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(InputError):
        cosine_lr(0.1, 11, 10)


def test_sgd_step_momentum_and_decay_by_hand():
    w = np.array([[1.0, -2.0]])
    b = np.array([0.5])
    params = {"l.weight": w, "l.bias": b}
    state = SgdState(lr=0.1, momentum=0.9, weight_decay=0.01, total_steps=1000)
    g = {"l.weight": np.array([[0.2, 0.4]]), "l.bias": np.array([1.0])}
    sgd_step(params, g, state, 0)
    # lr at step 0 is the base rate; bias has no decay
    np.testing.assert_allclose(w, [[1.0 - 0.1 * (0.2 + 0.01), -2.0 - 0.1 * (0.4 - 0.02)]])
    np.testing.assert_allclose(b, [0.5 - 0.1])
    v_w = np.array([[0.21, 0.38]])
    w_before = w.copy()
    sgd_step(params, g, state, 1)
    lr1 = cosine_lr(0.1, 1, 1000)
    v_w = 0.9 * v_w + np.array([[0.2, 0.4]]) + 0.01 * w_before
    np.testing.assert_allclose(w, w_before - lr1 * v_w)


def test_sgd_skips_params_without_gradient():
    params = {"a": np.ones(3), "b": np.ones(3)}
    state = SgdState(0.1, 0.9, 0.0, 10)
    sgd_step(params, {"a": np.ones(3)}, state, 0)
    np.testing.assert_array_equal(params["b"], np.ones(3))
    assert "b" not in state.buffers


def test_forward_shape_error_names_layer(rng):
    layers = [init_layer(3, 4, rng), init_layer(5, 2, rng)]
    with pytest.raises(ShapeError, match="layer 1"):
        forward_stack(layers, rng.standard_normal((2, 3)))


def test_tape_is_single_use(rng):
    layers = [init_layer(3, 2, rng, IDENTITY)]
    out, tape = forward_stack(layers, rng.standard_normal((4, 3)))
    backward_stack(layers, tape, np.ones_like(out))
    with pytest.raises(StateError):
        backward_stack(layers, tape, np.ones_like(out))


def test_backprop_matches_finite_differences(rng):
    layers = [init_layer(4, 6, rng), init_layer(6, 5, rng), init_layer(5, 3, rng, IDENTITY)]
    x = rng.standard_normal((8, 4))
    y = rng.integers(0, 3, 8)
    params = layer_params(layers, "layer")

    def objective(_):
        logits, tape = forward_stack(layers, x)
        p = softmax(logits)
        grads, _ = backward_stack(layers, tape, ce_logit_grad(p, y))
        return cross_entropy(p, y), named_grads(grads, "layer")

    report = grad_check(params, objective)
    assert report.passed, report


def test_grad_check_flags_wrong_gradient():
    w = np.array([1.0, 2.0])
    report = grad_check({"w": w}, lambda p: (float(np.sum(p["w"] ** 2)), {"w": p["w"]}))
    assert not report.passed
    assert report.max_rel_error == pytest.approx(0.5, rel=1e-6)


def test_grad_check_rejects_non_finite_loss():
    with pytest.raises(NumericError):
        grad_check({"w": np.ones(1)}, lambda p: (float("nan"), {"w": np.zeros(1)}))


def test_minibatches_cover_every_index_once(rng):
    chunks = minibatches(103, 10, rng)
    allidx = np.concatenate(chunks)
    assert sorted(allidx.tolist()) == list(range(103))
    assert [c.size for c in chunks][-1] == 3


def test_linear_layer_validates_shapes():
    with pytest.raises(ShapeError):
        LinearLayer(np.ones((2, 3)), np.ones(3))
    with pytest.raises(InputError):
        LinearLayer(np.ones((2, 3)), np.ones(2), "tanh")
