# pani_lab/learn/agents.py
"""
TD3-AN and IQL-AN updates.

Critics are trained at noised actions a' ~ q_sigma(.|a) against targets
penalized by penalty_coef * |a - a'|^2. Actor objectives read the target
critics. Every update has a pure ``*_loss_and_grads`` core so gradients can
be checked independently of the optimizer.
"""
from enum import StrEnum
import math

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.dataset import TransitionDataset
from ..core.noise import ActionBox, NoiseSpec, sample_noise
from .mlp import AdamState, Mlp, Params, adam_init, adam_step, init_mlp, mlp_backward, mlp_forward

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
ATANH_CLIP = 1e-6
LOG_2PI = math.log(2.0 * math.pi)


class Algorithm(StrEnum):
    TD3AN = "td3an"
    IQLAN = "iqlan"


class TrainConfig(BaseModel):
    algorithm: Algorithm = Algorithm.TD3AN
    gamma: float = Field(default=0.99, gt=0.0, lt=1.0)
    polyak: float = Field(default=5e-3, gt=0.0, le=1.0)
    lr: float = Field(default=1e-3, gt=0.0)
    batch: int = Field(default=256, ge=1)
    steps: int = Field(default=1_000_000, ge=1)
    noise: NoiseSpec | None = None
    penalty_coef: float = Field(default=1.0, ge=0.0)
    expectile_tau: float = Field(default=0.7, gt=0.0, lt=1.0)
    bc_alpha: float = Field(default=0.0, ge=0.0)
    policy_noise: float = Field(default=0.2, ge=0.0)
    noise_clip: float = Field(default=0.5, ge=0.0)
    policy_delay: int = Field(default=2, ge=1)
    stochastic_actor: bool = False
    actor_entropy_alpha: float = Field(default=0.0, ge=0.0)
    actor_nll_weight: float = Field(default=0.0, ge=0.0)
    hidden_dim: int = Field(default=256, ge=1)
    hidden_layers: int = Field(default=3, ge=1)
    layer_norm: bool = True
    log_interval: int = Field(default=1000, ge=1)
    eval_episodes: int = Field(default=10, ge=1)
    ood_samples: int = Field(default=1000, ge=0)
    seed: int = 0

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_actor(self) -> "TrainConfig":
        if self.stochastic_actor and self.algorithm is not Algorithm.IQLAN:
            raise ValueError("the tanh-Gaussian actor is only available with iqlan")
        return self


class Batch(BaseModel):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @classmethod
    def from_dataset(cls, dataset: TransitionDataset, idx: NDArray[np.int64]) -> "Batch":
        return cls(
            states=dataset.states[idx],
            actions=dataset.actions[idx],
            rewards=dataset.rewards[idx],
            next_states=dataset.next_states[idx],
            dones=dataset.dones[idx].astype(float),
        )

    def __len__(self) -> int:
        return int(self.states.shape[0])


class Agent(BaseModel):
    config: TrainConfig
    state_dim: int
    box: ActionBox
    actor: Mlp
    actor_target: Mlp | None = None
    q1: Mlp
    q2: Mlp
    q1_target: Mlp
    q2_target: Mlp
    value: Mlp | None = None
    optimizers: dict[str, AdamState]
    step: int = 0

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def action_dim(self) -> int:
        return self.box.dim

    @property
    def stochastic(self) -> bool:
        return self.config.stochastic_actor

    def networks(self) -> dict[str, Mlp]:
        nets = {
            "actor": self.actor,
            "q1": self.q1,
            "q2": self.q2,
            "q1_target": self.q1_target,
            "q2_target": self.q2_target,
        }
        if self.actor_target is not None:
            nets["actor_target"] = self.actor_target
        if self.value is not None:
            nets["value"] = self.value
        return nets


def init_agent(config: TrainConfig, state_dim: int, box: ActionBox, rng: np.random.Generator) -> Agent:
    """Fresh networks; every target starts as an exact copy of its online network."""
    hidden = [config.hidden_dim] * config.hidden_layers
    d = box.dim
    actor_out = 2 * d if config.stochastic_actor else d
    actor = init_mlp([state_dim, *hidden, actor_out], rng, config.layer_norm)
    q1 = init_mlp([state_dim + d, *hidden, 1], rng, config.layer_norm)
    q2 = init_mlp([state_dim + d, *hidden, 1], rng, config.layer_norm)
    value = None
    actor_target = None
    if config.algorithm is Algorithm.IQLAN:
        value = init_mlp([state_dim, *hidden, 1], rng, config.layer_norm)
    else:
        actor_target = actor.clone()
    optimizers = {"actor": adam_init(actor.params), "q1": adam_init(q1.params), "q2": adam_init(q2.params)}
    if value is not None:
        optimizers["value"] = adam_init(value.params)
    return Agent(
        config=config,
        state_dim=state_dim,
        box=box,
        actor=actor,
        actor_target=actor_target,
        q1=q1,
        q2=q2,
        q1_target=q1.clone(),
        q2_target=q2.clone(),
        value=value,
        optimizers=optimizers,
    )


# --- Helpers ---


def squash(box: ActionBox, u: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """a = center + half_width * tanh(u), with da/du."""
    t = np.tanh(u)
    half = np.asarray(box.half_width)
    return np.asarray(box.center) + half * t, half * (1.0 - t * t)


def _log1m_tanh2(u: NDArray[np.float64]) -> NDArray[np.float64]:
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def _actor_heads(agent: Agent, states: NDArray[np.float64], net: Mlp | None = None):
    out = mlp_forward(net or agent.actor, states)
    if not agent.stochastic:
        return out, None, None
    d = agent.action_dim
    raw = out[:, d:]
    return out[:, :d], np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), raw


def act(
    agent: Agent,
    states: NDArray[np.float64],
    rng: np.random.Generator | None = None,
    deterministic: bool = True,
    target: bool = False,
) -> NDArray[np.float64]:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    net = agent.actor_target if target else agent.actor
    mean, log_std, _ = _actor_heads(agent, states, net)
    if deterministic or log_std is None:
        return squash(agent.box, mean)[0]
    if rng is None:
        raise ValueError("sampling a stochastic action needs an rng")
    return squash(agent.box, mean + np.exp(log_std) * rng.standard_normal(mean.shape))[0]


def tanh_gaussian_log_prob(
    mean: NDArray[np.float64], log_std: NDArray[np.float64], actions: NDArray[np.float64], box: ActionBox
) -> NDArray[np.float64]:
    """log density of a = center + half * tanh(u), u ~ N(mean, exp(log_std)^2), per row."""
    half = np.asarray(box.half_width)
    y = np.clip((actions - np.asarray(box.center)) / half, -1.0 + ATANH_CLIP, 1.0 - ATANH_CLIP)
    u = np.arctanh(y)
    z = (u - mean) / np.exp(log_std)
    per_dim = -0.5 * z * z - log_std - 0.5 * LOG_2PI - np.log(half) - np.log1p(-y * y)
    return per_dim.sum(axis=1)


def critic_inputs(states: NDArray[np.float64], actions: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.concatenate([states, actions], axis=1)


def min_q(q_a: Mlp, q_b: Mlp, states: NDArray[np.float64], actions: NDArray[np.float64]) -> NDArray[np.float64]:
    x = critic_inputs(states, actions)
    return np.minimum(mlp_forward(q_a, x)[:, 0], mlp_forward(q_b, x)[:, 0])


def _min_q_with_action_grad(
    q_a: Mlp, q_b: Mlp, states: NDArray[np.float64], actions: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    x = critic_inputs(states, actions)
    va, vb = mlp_forward(q_a, x)[:, 0], mlp_forward(q_b, x)[:, 0]
    ones = np.ones((x.shape[0], 1))
    _, dxa = mlp_backward(q_a, x, ones)
    _, dxb = mlp_backward(q_b, x, ones)
    pick_a = (va <= vb)[:, None]
    d_state = states.shape[1]
    return np.minimum(va, vb), np.where(pick_a, dxa, dxb)[:, d_state:]


def polyak_update(target: Mlp, online: Mlp, eta: float) -> None:
    """target <- (1 - eta) * target + eta * online."""
    target.params = {k: (1.0 - eta) * target.params[k] + eta * online.params[k] for k in target.params}


def noised_actions(
    actions: NDArray[np.float64], config: TrainConfig, rng: np.random.Generator
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """a' and its penalty penalty_coef * |a - a'|^2; no noise means a' = a, zero penalty."""
    if config.noise is None:
        return actions, np.zeros(actions.shape[0])
    a_prime = sample_noise(actions, config.noise, rng)
    diff = a_prime - actions
    return a_prime, config.penalty_coef * np.sum(diff * diff, axis=1)


def _apply(agent: Agent, name: str, grads: Params) -> None:
    net = getattr(agent, name)
    net.params = adam_step(agent.optimizers[name], net.params, grads, agent.config.lr)


# --- Critic ---


def critic_loss_and_grads(
    q: Mlp, states: NDArray[np.float64], actions: NDArray[np.float64], targets: NDArray[np.float64]
) -> tuple[float, Params]:
    x = critic_inputs(states, actions)
    diff = mlp_forward(q, x)[:, 0] - targets
    grads, _ = mlp_backward(q, x, (2.0 * diff / diff.shape[0])[:, None])
    return float(np.mean(diff * diff)), grads


def td3an_targets(
    agent: Agent, batch: Batch, config: TrainConfig, rng: np.random.Generator
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """(targets, a', penalty). Target-policy noise is drawn before the action noise."""
    half = np.asarray(agent.box.half_width)
    smoothing = np.clip(config.policy_noise * rng.standard_normal(batch.actions.shape),
                        -config.noise_clip, config.noise_clip) * half
    a_tilde = agent.box.clip(act(agent, batch.next_states, target=True) + smoothing)
    a_prime, penalty = noised_actions(batch.actions, config, rng)
    bootstrap = min_q(agent.q1_target, agent.q2_target, batch.next_states, a_tilde)
    targets = batch.rewards - penalty + config.gamma * (1.0 - batch.dones) * bootstrap
    return targets, a_prime, penalty


def _critic_step(agent: Agent, batch: Batch, a_prime: NDArray[np.float64], targets: NDArray[np.float64]) -> float:
    total = 0.0
    for name in ("q1", "q2"):
        loss, grads = critic_loss_and_grads(getattr(agent, name), batch.states, a_prime, targets)
        _apply(agent, name, grads)
        total += loss
    return total


def td3an_critic_update(agent: Agent, batch: Batch, config: TrainConfig, rng: np.random.Generator) -> float:
    targets, a_prime, _ = td3an_targets(agent, batch, config, rng)
    return _critic_step(agent, batch, a_prime, targets)


def iqlan_targets(
    agent: Agent, batch: Batch, config: TrainConfig, rng: np.random.Generator
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    a_prime, penalty = noised_actions(batch.actions, config, rng)
    v_next = mlp_forward(agent.value, batch.next_states)[:, 0]
    targets = batch.rewards - penalty + config.gamma * (1.0 - batch.dones) * v_next
    return targets, a_prime, penalty


def iqlan_critic_update(agent: Agent, batch: Batch, config: TrainConfig, rng: np.random.Generator) -> float:
    targets, a_prime, _ = iqlan_targets(agent, batch, config, rng)
    return _critic_step(agent, batch, a_prime, targets)


# --- Value ---


def expectile_loss(x: float | NDArray[np.float64], tau: float) -> float | NDArray[np.float64]:
    """|tau - 1[x < 0]| * x^2."""
    x = np.asarray(x, dtype=float)
    out = np.abs(tau - (x < 0.0)) * x * x
    return float(out) if out.ndim == 0 else out


def value_loss_and_grads(agent: Agent, batch: Batch, tau: float) -> tuple[float, Params]:
    """Expectile regression of V(s) toward min target-Q at dataset actions."""
    q_target = min_q(agent.q1_target, agent.q2_target, batch.states, batch.actions)
    x = q_target - mlp_forward(agent.value, batch.states)[:, 0]
    weight = np.abs(tau - (x < 0.0))
    grads, _ = mlp_backward(agent.value, batch.states, (-2.0 * weight * x / x.shape[0])[:, None])
    return float(np.mean(weight * x * x)), grads


def iqlan_value_update(agent: Agent, batch: Batch, config: TrainConfig) -> float:
    loss, grads = value_loss_and_grads(agent, batch, config.expectile_tau)
    _apply(agent, "value", grads)
    return loss


# --- Actors ---


def deterministic_actor_loss_and_grads(agent: Agent, batch: Batch, alpha: float) -> tuple[float, Params]:
    """mean(-min Q'(s, pi(s)) + alpha * |a - pi(s)|^2)."""
    s = batch.states
    u = mlp_forward(agent.actor, s)
    pi, dpi_du = squash(agent.box, u)
    q, dq = _min_q_with_action_grad(agent.q1_target, agent.q2_target, s, pi)
    diff = batch.actions - pi
    n = s.shape[0]
    loss = float(np.mean(-q + alpha * np.sum(diff * diff, axis=1)))
    d_pi = (-dq - 2.0 * alpha * diff) / n
    grads, _ = mlp_backward(agent.actor, s, d_pi * dpi_du)
    return loss, grads


def stochastic_actor_loss_and_grads(
    agent: Agent, batch: Batch, config: TrainConfig, eps: NDArray[np.float64]
) -> tuple[float, Params]:
    """
    Reparameterised tanh-Gaussian objective mean(alpha * log pi(a~) - min Q'(s, a~))
    with a~ = squash(mean + std * eps), plus an optional behaviour NLL at dataset actions.
    """
    s = batch.states
    n, d = s.shape[0], agent.action_dim
    alpha = config.actor_entropy_alpha
    mean, log_std, raw = _actor_heads(agent, s)
    std = np.exp(log_std)
    u = mean + std * eps
    a, da_du = squash(agent.box, u)
    half = np.asarray(agent.box.half_width)
    log_pi = np.sum(-0.5 * eps * eps - log_std - 0.5 * LOG_2PI - np.log(half) - _log1m_tanh2(u), axis=1)
    q, dq = _min_q_with_action_grad(agent.q1_target, agent.q2_target, s, a)
    loss = float(np.mean(alpha * log_pi - q))
    g_u = (-dq * da_du + 2.0 * alpha * np.tanh(u)) / n
    g_mean = g_u
    g_log_std = g_u * std * eps - alpha / n
    if config.actor_nll_weight > 0.0:
        w = config.actor_nll_weight
        y = np.clip((batch.actions - np.asarray(agent.box.center)) / half, -1.0 + ATANH_CLIP, 1.0 - ATANH_CLIP)
        z = (np.arctanh(y) - mean) / std
        loss += w * float(np.mean(-tanh_gaussian_log_prob(mean, log_std, batch.actions, agent.box)))
        g_mean = g_mean + w * (-z / std) / n
        g_log_std = g_log_std + w * (1.0 - z * z) / n
    g_log_std = g_log_std * ((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX))
    grads, _ = mlp_backward(agent.actor, s, np.concatenate([g_mean, g_log_std], axis=1))
    return loss, grads


def td3an_actor_update(agent: Agent, batch: Batch, config: TrainConfig) -> float:
    loss, grads = deterministic_actor_loss_and_grads(agent, batch, config.bc_alpha)
    _apply(agent, "actor", grads)
    return loss


def iqlan_actor_update(
    agent: Agent, batch: Batch, config: TrainConfig, rng: np.random.Generator | None = None
) -> float:
    if agent.stochastic:
        if rng is None:
            raise ValueError("the stochastic actor update needs an rng")
        eps = rng.standard_normal((len(batch), agent.action_dim))
        loss, grads = stochastic_actor_loss_and_grads(agent, batch, config, eps)
    else:
        loss, grads = deterministic_actor_loss_and_grads(agent, batch, config.bc_alpha)
    _apply(agent, "actor", grads)
    return loss


def update_targets(agent: Agent, eta: float) -> None:
    polyak_update(agent.q1_target, agent.q1, eta)
    polyak_update(agent.q2_target, agent.q2, eta)
    if agent.actor_target is not None:
        polyak_update(agent.actor_target, agent.actor, eta)
