# pani_lab/learn/mlp.py
"""
Dense networks with exact backward passes, Adam, and a finite-difference checker.

Hidden layers are Linear -> LayerNorm (optional, with gain and bias) -> ReLU;
the output layer is linear. Parameters live in a flat dict keyed
``W{l}``, ``b{l}``, ``g{l}``, ``be{l}``.
"""
from collections.abc import Callable, Sequence
import copy

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

LN_EPS = 1e-5

Params = dict[str, np.ndarray]


class Mlp(BaseModel):
    layer_dims: list[int]
    layer_norm: bool = True
    params: dict[str, np.ndarray]

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def clone(self) -> "Mlp":
        return Mlp(layer_dims=list(self.layer_dims), layer_norm=self.layer_norm, params=copy_params(self.params))


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


def expected_param_count(layer_dims: Sequence[int], layer_norm: bool) -> int:
    total = sum(i * o + o for i, o in zip(layer_dims[:-1], layer_dims[1:], strict=True))
    if layer_norm:
        total += 2 * sum(layer_dims[1:-1])
    return total


def init_mlp(layer_dims: Sequence[int], rng: np.random.Generator, layer_norm: bool = True) -> Mlp:
    """Fan-in uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases, unit gains."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer dims {dims}")
    params: Params = {}
    n_layers = len(dims) - 1
    for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:], strict=True)):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"W{l}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{l}"] = np.zeros(fan_out)
        if layer_norm and l < n_layers - 1:
            params[f"g{l}"] = np.ones(fan_out)
            params[f"be{l}"] = np.zeros(fan_out)
    return Mlp(layer_dims=dims, layer_norm=layer_norm, params=params)


def layer_norm(z: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Per-row standardisation; returns (normalised, std)."""
    mu = z.mean(axis=1, keepdims=True)
    std = np.sqrt(z.var(axis=1, keepdims=True) + LN_EPS)
    return (z - mu) / std, std


def _check_input(net: Mlp, x: NDArray[np.float64]) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"expected input of shape (batch, {net.in_dim}), got {x.shape}")
    return x


def _forward(net: Mlp, x: NDArray[np.float64]) -> tuple[NDArray[np.float64], list[dict[str, np.ndarray]]]:
    p = net.params
    cache = []
    h = x
    for l in range(net.n_layers - 1):
        z = h @ p[f"W{l}"] + p[f"b{l}"]
        entry = {"h": h}
        if net.layer_norm:
            xhat, std = layer_norm(z)
            u = p[f"g{l}"] * xhat + p[f"be{l}"]
            entry.update(xhat=xhat, std=std)
        else:
            u = z
        entry["mask"] = u > 0.0
        cache.append(entry)
        h = np.maximum(u, 0.0)
    last = net.n_layers - 1
    cache.append({"h": h})
    return h @ p[f"W{last}"] + p[f"b{last}"], cache


def mlp_forward(net: Mlp, x: NDArray[np.float64]) -> NDArray[np.float64]:
    return _forward(net, _check_input(net, x))[0]


def mlp_backward(
    net: Mlp, x: NDArray[np.float64], upstream: NDArray[np.float64]
) -> tuple[Params, NDArray[np.float64]]:
    """Gradients of sum(upstream * net(x)) w.r.t. parameters and the input."""
    x = _check_input(net, x)
    y, cache = _forward(net, x)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != y.shape:
        raise ValueError(f"upstream gradient has shape {upstream.shape}, output is {y.shape}")
    p = net.params
    grads: Params = {}
    last = net.n_layers - 1
    grads[f"W{last}"] = cache[-1]["h"].T @ upstream
    grads[f"b{last}"] = upstream.sum(axis=0)
    dh = upstream @ p[f"W{last}"].T
    for l in reversed(range(net.n_layers - 1)):
        entry = cache[l]
        du = dh * entry["mask"]
        if net.layer_norm:
            xhat = entry["xhat"]
            grads[f"g{l}"] = np.sum(du * xhat, axis=0)
            grads[f"be{l}"] = du.sum(axis=0)
            dxhat = du * p[f"g{l}"]
            dz = (dxhat - dxhat.mean(axis=1, keepdims=True)
                  - xhat * np.mean(dxhat * xhat, axis=1, keepdims=True)) / entry["std"]
        else:
            dz = du
        grads[f"W{l}"] = entry["h"].T @ dz
        grads[f"b{l}"] = dz.sum(axis=0)
        dh = dz @ p[f"W{l}"].T
    return grads, dh


def activation_pattern(net: Mlp, x: NDArray[np.float64]) -> NDArray[np.bool_]:
    """Concatenated ReLU on/off masks; a change marks a kink crossing."""
    _, cache = _forward(net, _check_input(net, x))
    masks = [entry["mask"].ravel() for entry in cache[:-1]]
    return np.concatenate(masks) if masks else np.zeros(0, dtype=bool)


# --- Adam ---


class AdamState(BaseModel):
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)

    model_config = ConfigDict(arbitrary_types_allowed=True)


def adam_init(params: Params, **kwargs) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        **kwargs,
    )


def adam_step(state: AdamState, params: Params, grads: Params, lr: float) -> Params:
    """One bias-corrected Adam update; advances ``state`` and returns new parameters."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**state.t, 1.0 - b2**state.t
    updated: Params = {}
    for k, value in params.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        updated[k] = value - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated


# --- Gradient checking ---


def gradient_check(
    loss_fn: Callable[[Params], float],
    params: Params,
    analytic: Params,
    h: float = 1e-5,
    pattern_fn: Callable[[Params], np.ndarray] | None = None,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """
    Norm-based relative error between ``analytic`` and central differences of ``loss_fn``.

    Coordinates whose +/-h perturbation changes ``pattern_fn`` (a rectifier or
    clip crossing) are skipped. ``max_coords`` subsamples coordinates per tensor.
    """
    rng = rng or np.random.default_rng(0)
    base_pattern = pattern_fn(params) if pattern_fn is not None else None
    a_vals, n_vals = [], []
    for key, value in params.items():
        flat_idx = np.arange(value.size)
        if max_coords is not None and value.size > max_coords:
            flat_idx = rng.choice(value.size, size=max_coords, replace=False)
        for i in flat_idx:
            idx = np.unravel_index(i, value.shape)
            plus, minus = copy.copy(params), copy.copy(params)
            plus[key] = value.copy()
            plus[key][idx] += h
            minus[key] = value.copy()
            minus[key][idx] -= h
            if base_pattern is not None and (
                not np.array_equal(pattern_fn(plus), base_pattern)
                or not np.array_equal(pattern_fn(minus), base_pattern)
            ):
                continue
            n_vals.append((loss_fn(plus) - loss_fn(minus)) / (2.0 * h))
            a_vals.append(analytic[key][idx])
    if not a_vals:
        return 0.0
    a_arr, n_arr = np.asarray(a_vals), np.asarray(n_vals)
    denom = max(np.linalg.norm(a_arr) + np.linalg.norm(n_arr), 1e-12)
    return float(np.linalg.norm(a_arr - n_arr) / denom)
