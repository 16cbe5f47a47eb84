"""
test_nn_core.py

Unit tests for the neural network engine: forward/backward, loss, optimizers
and the finite-difference checker.
"""
import math

import numpy as np
import pytest

from errors import ConfigurationError, NumericalError, UsageError
from nn_core import (GradientSet, LayerParams, LayerSpec, Network, OptimizerState, backward, build_network,
                     cross_entropy_loss_and_grad, finite_difference_check, forward, optimizer_step,
                     relu_margin)


def single_dense(weights, bias):
    weights = np.asarray(weights, dtype=np.float64)
    return Network([LayerSpec("dense", weights.shape[0], weights.shape[1])],
                   [LayerParams(weights=weights, bias=np.asarray(bias, dtype=np.float64))])


def single_layer(kind, width, power_mode="batch_average"):
    return Network([LayerSpec(kind, width, width, power_mode=power_mode)], [LayerParams()])


# ---- forward ----

def test_identity_dense_returns_input():
    x = np.array([[1.0, -2.0, 3.5], [0.25, 0.0, -1.0]])
    out, _ = forward(single_dense(np.eye(3), np.zeros(3)), x)
    assert np.array_equal(out, x)


def test_relu_clips_negatives():
    out, _ = forward(single_layer("relu", 3), [[-1.0, 0.0, 2.0]])
    assert out.tolist() == [[0.0, 0.0, 2.0]]


def test_softmax_of_zero_logits_is_uniform():
    out, _ = forward(single_layer("softmax", 16), np.zeros((2, 16)))
    assert np.allclose(out, 1.0 / 16)


def test_input_width_mismatch_is_configuration_error():
    with pytest.raises(ConfigurationError):
        forward(single_dense(np.eye(3), np.zeros(3)), np.zeros((2, 4)))


def test_non_finite_activation_carries_layer_index():
    net = Network([LayerSpec("relu", 1, 1), LayerSpec("dense", 1, 1)],
                  [LayerParams(), LayerParams(weights=np.array([[1e308]]), bias=np.zeros(1))])
    with np.errstate(over="ignore"):
        with pytest.raises(NumericalError) as excinfo:
            forward(net, [[1e308]])
    assert excinfo.value.layer_index == 1


def test_non_dense_layer_must_keep_width():
    with pytest.raises(ConfigurationError):
        LayerSpec("relu", 3, 4)


def test_batch_power_norm_needs_two_rows_in_train_mode():
    with pytest.raises(UsageError):
        forward(single_layer("batch_power_norm", 4), np.ones((1, 4)), mode="train")


def test_per_codeword_norm_accepts_single_row():
    out, _ = forward(single_layer("batch_power_norm", 4, "per_codeword"), [[3.0, 0.0, 4.0, 0.0]], mode="train")
    assert np.sum(out * out) == pytest.approx(4.0, abs=1e-12)


def test_batch_power_norm_train_statistics_and_running_scale():
    net = single_layer("batch_power_norm", 4)
    x = np.random.default_rng(1).standard_normal((10, 4)) * 3.0
    out, _ = forward(net, x, mode="train")
    assert np.mean(np.sum(out * out, axis=1)) == pytest.approx(4.0, rel=1e-12)
    scale = math.sqrt(np.mean(np.sum(x * x, axis=1)) / 4)
    assert net.params[0].norm_running_scale == pytest.approx(0.99 * 1.0 + 0.01 * scale)


def test_batch_power_norm_without_tracking_leaves_running_scale():
    net = single_layer("batch_power_norm", 4)
    forward(net, np.ones((3, 4)) * 2.0, mode="train", track_running=False)
    assert net.params[0].norm_running_scale == 1.0


def test_infer_mode_uses_running_scale():
    net = single_layer("batch_power_norm", 2)
    net.params[0].norm_running_scale = 2.0
    out, _ = forward(net, [[4.0, -2.0]], mode="infer")
    assert out.tolist() == [[2.0, -1.0]]
    assert net.params[0].norm_running_scale == 2.0


# ---- backward ----

def test_zero_output_gradient_gives_zero_gradients():
    net = build_network([("dense", 5), ("relu", 0), ("dense", 3)], 4, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((6, 4))
    _, cache = forward(net, x, mode="train")
    grads, input_grad = backward(net, cache, np.zeros((6, 3)))
    assert grads.max_abs() == 0.0
    assert np.array_equal(input_grad, np.zeros((6, 4)))


def test_scalar_dense_chain_rule():
    net = single_dense([[1.5]], [0.0])
    _, cache = forward(net, [[3.0]], mode="train")
    grads, input_grad = backward(net, cache, [[2.0]])
    assert grads["0.weights"].tolist() == [[6.0]]
    assert grads["0.bias"].tolist() == [2.0]
    assert input_grad.tolist() == [[3.0]]


def test_backward_without_cache_is_usage_error():
    net = single_dense(np.eye(2), np.zeros(2))
    with pytest.raises(UsageError):
        backward(net, None, np.zeros((1, 2)))


def test_gradient_shapes_mirror_parameters():
    net = build_network([("dense", 5), ("relu", 0), ("dense", 3), ("softmax", 0)], 4, np.random.default_rng(0))
    x = np.random.default_rng(2).standard_normal((7, 4))
    out, cache = forward(net, x, mode="train")
    loss = cross_entropy_loss_and_grad(out, np.arange(7) % 3)
    grads, input_grad = backward(net, cache, loss.logit_gradient, from_logits=True)
    assert set(grads.keys()) == set(net.parameters())
    for key, value in net.parameters().items():
        assert grads[key].shape == value.shape
    assert input_grad.shape == x.shape


# ---- loss ----

def test_uniform_posterior_loss_is_log_width():
    result = cross_entropy_loss_and_grad(np.full((3, 16), 1.0 / 16), [0, 5, 15])
    assert result.loss == pytest.approx(2.772589, abs=1e-6)


def test_one_hot_correct_posterior_has_zero_loss_and_gradient():
    result = cross_entropy_loss_and_grad(np.eye(4), [0, 1, 2, 3])
    assert result.loss == 0.0
    assert np.all(result.logit_gradient == 0.0)


def test_two_class_loss():
    result = cross_entropy_loss_and_grad([[0.75, 0.25]], [0])
    assert result.loss == pytest.approx(0.287682, abs=1e-6)
    assert result.logit_gradient.tolist() == [[-0.25, 0.25]]


def test_zero_target_probability_is_clamped_and_counted():
    result = cross_entropy_loss_and_grad([[1.0, 0.0], [0.5, 0.5]], [1, 0])
    assert math.isfinite(result.loss)
    assert result.saturated == 1
    assert result.loss == pytest.approx((-math.log(1e-12) - math.log(0.5)) / 2)


def test_posterior_off_simplex_is_rejected():
    with pytest.raises(UsageError):
        cross_entropy_loss_and_grad([[0.5, 0.6]], [0])


def test_target_out_of_range_is_rejected():
    with pytest.raises(UsageError):
        cross_entropy_loss_and_grad([[0.5, 0.5]], [2])


# ---- optimizers ----

def scalar_grads(w, b=0.0):
    return GradientSet({"0.weights": np.array([[w]]), "0.bias": np.array([b])})


def test_gradient_set_sum_and_norms():
    total = scalar_grads(0.5, -2.0) + scalar_grads(0.25, 1.0)
    assert total["0.weights"].tolist() == [[0.75]]
    assert total.max_abs() == 1.0
    assert total.is_finite() and not scalar_grads(float("inf")).is_finite()
    assert not hasattr(GradientSet, "scaled")
    with pytest.raises(UsageError):
        total + GradientSet({"0.weights": np.zeros((1, 1))})


def test_sgd_step():
    net = single_dense([[1.0]], [0.0])
    state = OptimizerState(kind="sgd", learning_rate=0.1)
    optimizer_step(net, scalar_grads(0.5), state)
    assert net.params[0].weights[0, 0] == pytest.approx(0.95)
    assert state.step_count == 1


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_leaves_parameters(kind):
    net = single_dense([[1.0]], [0.25])
    optimizer_step(net, scalar_grads(0.0), OptimizerState(kind=kind))
    assert net.params[0].weights[0, 0] == 1.0
    assert net.params[0].bias[0] == 0.25


def test_adam_first_step_moves_by_learning_rate():
    net = single_dense([[1.0]], [0.0])
    optimizer_step(net, scalar_grads(1.0), OptimizerState(kind="adam"))
    assert 1.0 - net.params[0].weights[0, 0] == pytest.approx(0.001, rel=1e-6)


def test_non_finite_gradient_leaves_parameters_untouched():
    net = single_dense([[1.0]], [0.0])
    state = OptimizerState(kind="adam")
    with pytest.raises(NumericalError):
        optimizer_step(net, scalar_grads(float("nan")), state)
    assert net.params[0].weights[0, 0] == 1.0
    assert state.step_count == 0


def test_mismatched_gradient_shape_is_rejected():
    net = single_dense([[1.0]], [0.0])
    bad = GradientSet({"0.weights": np.zeros((2, 1)), "0.bias": np.zeros(1)})
    with pytest.raises(UsageError):
        optimizer_step(net, bad, OptimizerState(kind="sgd"))


@pytest.mark.parametrize("settings", [{"learning_rate": 0.0}, {"beta1": 1.0}, {"beta2": 0.0},
                                      {"epsilon": 0.0}, {"kind": "rmsprop"}])
def test_invalid_optimizer_settings(settings):
    with pytest.raises(ConfigurationError):
        OptimizerState(**settings)


# ---- finite differences ----

def test_linear_network_gradient_is_exact():
    net = build_network([("dense", 3), ("linear", 0)], 4, np.random.default_rng(3))
    x = np.random.default_rng(4).standard_normal((4, 4))
    assert finite_difference_check(net, x, [0, 1, 2, 0]) < 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_two_layer_network_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    while True:
        net = build_network([("dense", 5), ("relu", 0), ("dense", 4), ("softmax", 0)], 3, rng)
        x = rng.standard_normal((6, 3))
        # central differences are only valid away from the ReLU kink
        if relu_margin(net, x) >= 1e-3:
            break
    assert finite_difference_check(net, x, rng.integers(0, 4, size=6)) < 1e-4


@pytest.mark.parametrize("power_mode", ["batch_average", "per_codeword"])
def test_power_norm_network_matches_finite_differences(power_mode):
    rng = np.random.default_rng(11)
    net = build_network([("dense", 6), ("relu", 0), ("dense", 4), ("linear", 0), ("batch_power_norm", 0)],
                        8, rng, power_mode=power_mode)
    x = np.eye(8)[rng.integers(0, 8, size=6)]
    before = net.params[-1].norm_running_scale
    assert finite_difference_check(net, x, rng.integers(0, 4, size=6)) < 1e-4
    assert net.params[-1].norm_running_scale == before


def test_finite_difference_needs_positive_perturbation():
    net = single_dense(np.eye(2), np.zeros(2))
    with pytest.raises(UsageError):
        finite_difference_check(net, np.ones((2, 2)), [0, 1], perturbation=0.0)


def test_relu_margin_is_smallest_pre_activation():
    net = Network([LayerSpec("dense", 2, 2), LayerSpec("relu", 2, 2)],
                  [LayerParams(weights=np.eye(2), bias=np.array([0.0, -0.5])), LayerParams()])
    assert relu_margin(net, [[0.25, 0.4], [-2.0, 3.0]]) == pytest.approx(0.1)
    assert relu_margin(single_dense(np.eye(2), np.zeros(2)), [[0.0, 0.0]]) == float("inf")
