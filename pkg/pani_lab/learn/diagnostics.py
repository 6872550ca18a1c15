# pani_lab/learn/diagnostics.py
from collections.abc import Callable

from loguru import logger
import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field

from ..core.dataset import ChainSimulator, StateKey, StateKeyTuple, TransitionDataset
from ..core.namdp import ActionGrid, NamdpModel, QGrid
from ..core.noise import ActionBox
from .agents import Agent, act, min_q

QFunction = Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]
Policy = Callable[[NDArray[np.float64], np.random.Generator | None], NDArray[np.float64]]

OOD_CHUNK = 50_000
Z_95 = 1.96


class GridQFunction(BaseModel):
    """Tabular Q read at the grid point nearest each query action."""

    state_keys: list[StateKeyTuple]
    grid: ActionGrid
    q: QGrid
    state_key: StateKey = Field(default_factory=StateKey)

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @classmethod
    def from_model(cls, model: NamdpModel, q: QGrid, state_key: StateKey | None = None) -> "GridQFunction":
        return cls(state_keys=model.state_keys, grid=model.grid, q=q, state_key=state_key or StateKey())

    def __call__(self, states: NDArray[np.float64], actions: NDArray[np.float64]) -> NDArray[np.float64]:
        index = {key: i for i, key in enumerate(self.state_keys)}
        try:
            rows = np.array([index[self.state_key.key(s)] for s in states])
        except KeyError as e:
            raise ValueError(f"state {e.args[0]} is not in the Q table") from e
        diff = actions[:, None, :] - self.grid.points[None, :, :]
        cols = np.argmin(np.sum(diff * diff, axis=-1), axis=1)
        return self.q.values[rows, cols]


class OodEstimate(BaseModel):
    probability: float
    half_width: float
    n_samples: int


class EvalResult(BaseModel):
    mean_discounted: float
    mean_undiscounted: float
    episodes: int
    returns: list[float]


def agent_q_function(agent: Agent) -> QFunction:
    return lambda states, actions: min_q(agent.q1, agent.q2, states, actions)


def _as_q_function(source: Agent | QFunction) -> QFunction:
    return agent_q_function(source) if isinstance(source, Agent) else source


def ood_overestimation_probability(
    source: Agent | GridQFunction | QFunction,
    dataset: TransitionDataset,
    n_samples: int,
    rng: np.random.Generator,
) -> OodEstimate:
    """
    Monte Carlo estimate of P(Q(s, a') > Q(s, a)) with (s, a) uniform over the
    dataset and a' uniform over the box, with a 95% normal half-width.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    q_fn = _as_q_function(source)
    box = dataset.box
    hits = 0
    remaining = n_samples
    while remaining > 0:
        size = min(remaining, OOD_CHUNK)
        idx = rng.integers(0, len(dataset), size=size)
        a_rand = rng.uniform(box.lower, box.upper, size=(size, box.dim))
        states = dataset.states[idx]
        hits += int(np.sum(q_fn(states, a_rand) > q_fn(states, dataset.actions[idx])))
        remaining -= size
    p = hits / n_samples
    half = Z_95 * float(np.sqrt(p * (1.0 - p) / n_samples))
    logger.info(f"OOD overestimation probability {p:.4f} +/- {half:.4f} ({n_samples} samples)")
    return OodEstimate(probability=p, half_width=half, n_samples=n_samples)


def q_landscape(agent: Agent, state: NDArray[np.float64], grid: ActionGrid) -> QGrid:
    """min(Q1, Q2) at one state over every grid point, as a single-row QGrid."""
    states = np.tile(np.asarray(state, dtype=float).reshape(1, -1), (grid.size, 1))
    return QGrid(values=min_q(agent.q1, agent.q2, states, grid.points)[None, :])


def agent_policy(agent: Agent) -> Policy:
    return lambda state, rng: act(agent, state[None, :])[0]


def band_policy(simulator: ChainSimulator) -> Policy:
    return lambda state, rng: np.array([simulator.band_center])


def random_policy(box: ActionBox) -> Policy:
    def _draw(state, rng):
        if rng is None:
            raise ValueError("the random policy needs an rng")
        return rng.uniform(box.lower, box.upper)

    return _draw


def evaluate_policy(
    simulator: ChainSimulator,
    policy: Policy,
    episodes: int,
    rng: np.random.Generator | None = None,
) -> EvalResult:
    """Rolls ``policy`` out for ``episodes`` episodes capped at the simulator's step cap."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    discounted, undiscounted = [], []
    for _ in range(episodes):
        state = simulator.reset()
        disc, total = 0.0, 0.0
        for t in range(simulator.step_cap):
            state, reward, done = simulator.step(state, policy(state, rng))
            disc += simulator.gamma**t * reward
            total += reward
            if done:
                break
        discounted.append(disc)
        undiscounted.append(total)
    return EvalResult(
        mean_discounted=float(np.mean(discounted)),
        mean_undiscounted=float(np.mean(undiscounted)),
        episodes=episodes,
        returns=discounted,
    )
