"""Finite-difference verification of the analytic backward pass."""

import numpy as np
import pytest

from abet.errors import ContractError
from abet.model import ModelConfig, backward, forward, init_params, input_gradient
from oracles import fd_array_grad, fd_input_grad, fd_scalar_grad, rel_error

TOL = 1e-5


def random_case(rng):
    """Random model + batch sitting at a margin from every kink.

    The model is piecewise smooth: ReLU corners, the zero-norm cosine guard,
    and the temperature floor are subgradient conventions. Central
    differences are only meaningful away from them, so draws whose
    preactivations or feature norms fall inside the margin are resampled.
    """
    while True:
        cfg = ModelConfig(
            input_dim=int(rng.integers(2, 8)),
            hidden_sizes=tuple(int(rng.integers(2, 9)) for _ in range(rng.integers(0, 3))),
            penultimate_dim=int(rng.integers(2, 8)),
            num_classes=int(rng.integers(2, 6)),
            head_kind="cosine" if rng.random() < 0.5 else "inner_product",
            seed=int(rng.integers(0, 2**31)),
        )
        params = init_params(cfg)
        # move the biases and BN affine off their zero init so those paths
        # carry signal and layers do not die at exactly zero
        for b in params.biases:
            b += 0.3 * rng.standard_normal(b.shape)
        params.bn_gamma = float(1.0 + 0.5 * rng.standard_normal())
        params.bn_beta = float(0.5 * rng.standard_normal())
        params.temp_bias = float(0.5 * rng.standard_normal())
        n = int(rng.integers(2, 7))
        x = rng.standard_normal((n, cfg.input_dim))
        y = rng.integers(0, cfg.num_classes, size=n)
        trace = forward(params, x, mode="train", update_running=False)
        margin_ok = (
            min(np.abs(z).min() for z in trace.pre_activations) > 1e-4
            and trace.feature_norms.min() > 1e-3
            and trace.temp_sigmoid.min() > 2e-6
        )
        if margin_ok:
            return params, x, y


def max_param_grad_error(params, x, y) -> float:
    trace = forward(params, x, mode="train", update_running=False)
    grads = backward(params, trace, x, y)
    worst = 0.0
    for k in range(len(params.weights)):
        fd = fd_array_grad(params, x, y, lambda p, k=k: p.weights[k])
        worst = max(worst, rel_error(grads.weights[k], fd))
        fd = fd_array_grad(params, x, y, lambda p, k=k: p.biases[k])
        worst = max(worst, rel_error(grads.biases[k], fd))
    fd = fd_array_grad(params, x, y, lambda p: p.head_weight)
    worst = max(worst, rel_error(grads.head_weight, fd))
    if params.head_bias is not None:
        fd = fd_array_grad(params, x, y, lambda p: p.head_bias)
        worst = max(worst, rel_error(grads.head_bias, fd))
    fd = fd_array_grad(params, x, y, lambda p: p.temp_weight)
    worst = max(worst, rel_error(grads.temp_weight, fd))
    for name in ("temp_bias", "bn_gamma", "bn_beta"):
        fd = fd_scalar_grad(params, x, y, name)
        worst = max(worst, rel_error(getattr(grads, name.replace("bn_", "bn_")), fd))
    return worst


def test_reference_model_gradcheck():
    # the documented desk-scale case: D=6, hidden (8,), p=5, C=4, batch 3
    rng = np.random.default_rng(0)
    cfg = ModelConfig(6, (8,), 5, 4, seed=1)
    params = init_params(cfg)
    params.bn_gamma, params.bn_beta, params.temp_bias = 1.3, -0.2, 0.1
    x = rng.standard_normal((3, 6))
    y = rng.integers(0, 4, size=3)
    assert max_param_grad_error(params, x, y) < TOL


@pytest.mark.parametrize("seed", range(12))
def test_random_models_gradcheck(seed):
    rng = np.random.default_rng(1000 + seed)
    params, x, y = random_case(rng)
    assert max_param_grad_error(params, x, y) < TOL


def test_input_gradient_matches_fd():
    rng = np.random.default_rng(5)
    for _ in range(10):
        params, x, _ = random_case(rng)
        row = x[0]
        trace = forward(params, row.reshape(1, -1), mode="eval")
        target = int(np.argmax(trace.probs[0]))
        analytic = input_gradient(params, row)
        numeric = fd_input_grad(params, row, target)
        assert rel_error(analytic, numeric) < TOL
        assert analytic.shape == row.shape


def test_input_gradient_zero_in_dead_region():
    cfg = ModelConfig(3, (4,), 2, 2, seed=0)
    params = init_params(cfg)
    # all first-layer preactivations forced negative: every ReLU is dead
    params.weights[0][:] = 0.0
    params.biases[0][:] = -1.0
    grad = input_gradient(params, np.array([0.3, -0.2, 0.5]))
    assert np.array_equal(grad, np.zeros(3))


def test_gradient_invariant_under_row_duplication():
    rng = np.random.default_rng(9)
    params, x, y = random_case(rng)
    trace = backward_input = forward(params, x, mode="train", update_running=False)
    g1 = backward(params, trace, x, y)
    x2 = np.vstack([x, x])
    y2 = np.concatenate([y, y])
    trace2 = forward(params, x2, mode="train", update_running=False)
    g2 = backward(params, trace2, x2, y2)
    assert rel_error(g1.head_weight, g2.head_weight) < 1e-9
    assert rel_error(g1.temp_weight, g2.temp_weight) < 1e-9
    for a, b in zip(g1.weights, g2.weights):
        assert rel_error(a, b) < 1e-9


def test_inner_product_constant_temperature_closed_form():
    # with gamma = 0 the temperature is the constant sigmoid(beta); the head
    # gradient must equal the classical softmax cross-entropy form divided by
    # that constant: (probs - onehot)^T f / (n T)
    rng = np.random.default_rng(11)
    cfg = ModelConfig(5, (6,), 4, 3, head_kind="inner_product", seed=2)
    params = init_params(cfg)
    params.bn_gamma = 0.0
    params.bn_beta = 0.4
    x = rng.standard_normal((8, 5))
    y = rng.integers(0, 3, size=8)
    trace = forward(params, x, mode="train", update_running=False)
    grads = backward(params, trace, x, y)
    t_const = 1.0 / (1.0 + np.exp(-0.4))
    onehot = np.zeros_like(trace.probs)
    onehot[np.arange(8), y] = 1.0
    closed = (trace.probs - onehot).T @ trace.penultimate / (8 * t_const)
    assert np.max(np.abs(grads.head_weight - closed)) < 1e-12
    # temperature branch receives no gradient through gamma = 0
    assert np.max(np.abs(grads.temp_weight)) == 0.0


def test_stale_trace_rejected():
    rng = np.random.default_rng(13)
    params, x, y = random_case(rng)
    trace = forward(params, x, mode="train", update_running=False)
    other = x + 1.0
    with pytest.raises(ContractError):
        backward(params, trace, other, y)
    eval_trace = forward(params, x, mode="eval")
    with pytest.raises(ContractError):
        backward(params, eval_trace, x, y)
