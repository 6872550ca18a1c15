# tests/learn/test_mlp.py
import numpy as np
import pytest

from pani_lab.learn.mlp import (
    Mlp,
    activation_pattern,
    adam_init,
    adam_step,
    expected_param_count,
    gradient_check,
    init_mlp,
    mlp_backward,
    mlp_forward,
)


def with_params(net, params):
    return Mlp(layer_dims=net.layer_dims, layer_norm=net.layer_norm, params=params)


@pytest.mark.parametrize("layer_norm", [True, False])
def test_parameter_count(rng, layer_norm):
    net = init_mlp([3, 8, 8, 2], rng, layer_norm)
    assert net.n_params() == expected_param_count([3, 8, 8, 2], layer_norm)
    assert mlp_forward(net, rng.normal(size=(5, 3))).shape == (5, 2)


def test_wrong_input_shape(rng):
    net = init_mlp([3, 4, 1], rng)
    with pytest.raises(ValueError, match="expected input"):
        mlp_forward(net, np.zeros((2, 4)))


@pytest.mark.parametrize("layer_norm", [True, False])
def test_backward_matches_finite_differences(rng, layer_norm):
    net = init_mlp([3, 6, 5, 2], rng, layer_norm)
    x = rng.normal(size=(7, 3))
    upstream = rng.normal(size=(7, 2))
    grads, _ = mlp_backward(net, x, upstream)
    error = gradient_check(
        lambda p: float(np.sum(upstream * mlp_forward(with_params(net, p), x))),
        net.params,
        grads,
        pattern_fn=lambda p: activation_pattern(with_params(net, p), x),
    )
    assert error < 1e-6


def test_input_gradient(rng):
    net = init_mlp([2, 6, 1], rng)
    x = rng.normal(size=(1, 2))
    _, dx = mlp_backward(net, x, np.ones((1, 1)))
    h = 1e-6
    for i in range(2):
        step = np.zeros_like(x)
        step[0, i] = h
        if not np.array_equal(activation_pattern(net, x + step), activation_pattern(net, x - step)):
            continue
        numeric = (mlp_forward(net, x + step) - mlp_forward(net, x - step))[0, 0] / (2 * h)
        assert dx[0, i] == pytest.approx(numeric, rel=1e-5, abs=1e-8)


def test_first_adam_step_moves_by_learning_rate(rng):
    params = {"w": rng.normal(size=4)}
    grads = {"w": np.array([0.5, -2.0, 1e-3, -1e-3])}
    state = adam_init(params)
    updated = adam_step(state, params, grads, lr=0.01)
    np.testing.assert_allclose(updated["w"] - params["w"], -0.01 * np.sign(grads["w"]), rtol=1e-4)
    assert state.t == 1


def test_clone_is_independent(rng):
    net = init_mlp([2, 3, 1], rng)
    copy = net.clone()
    copy.params["W0"][0, 0] += 1.0
    assert net.params["W0"][0, 0] != copy.params["W0"][0, 0]
