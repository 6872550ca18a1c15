# pani_lab/core/dataset.py
"""
Transition datasets, toy generators and JSONL serialisation.

Toy datasets are built so that states repeat exactly; the empirical behaviour
distribution p_D(a|s) is then uniform over the entries sharing a state key, with
duplicates counted by multiplicity.
"""
from collections.abc import Iterator, Sequence
import json
import math
from pathlib import Path
from typing import Annotated, Any, Literal

from loguru import logger
import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from .exceptions import DatasetFormatError
from .noise import ACTION_BOX_TOL, ActionBox

DATASET_FORMAT = "pani-lab-transitions"
DATASET_FORMAT_VERSION = 1

FiniteFloat = Annotated[float, Field(allow_inf_nan=False)]
StateKeyTuple = tuple[float, ...]


def _frozen_array(value: Any, dtype=float, ndim: int | None = None) -> NDArray:
    arr = np.array(value, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class StateKey(BaseModel):
    """How states are bucketed when estimating p_D(a|s)."""

    mode: Literal["exact", "rounded"] = "exact"
    decimals: int | None = Field(default=None, ge=0)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_decimals(self) -> "StateKey":
        if (self.mode == "rounded") != (self.decimals is not None):
            raise ValueError("decimals is required for rounded keys and forbidden for exact keys")
        return self

    @classmethod
    def exact(cls) -> "StateKey":
        return cls()

    @classmethod
    def rounded(cls, decimals: int) -> "StateKey":
        return cls(mode="rounded", decimals=decimals)

    def key(self, state: ArrayLike) -> StateKeyTuple:
        values = np.asarray(state, dtype=float).ravel()
        if self.mode == "rounded":
            values = np.round(values, self.decimals)
        # + 0.0 folds -0.0 into 0.0
        return tuple(float(v) + 0.0 for v in values)


class Transition(BaseModel):
    s: list[FiniteFloat]
    a: list[FiniteFloat]
    r: FiniteFloat
    s2: list[FiniteFloat]
    done: bool

    model_config = ConfigDict(frozen=True, extra="forbid")


class DatasetHeader(BaseModel):
    format: Literal["pani-lab-transitions"] = DATASET_FORMAT
    version: int = DATASET_FORMAT_VERSION
    state_dim: int = Field(gt=0)
    action_dim: int = Field(gt=0)
    n_transitions: int = Field(ge=1)
    box: ActionBox
    state_key: StateKey = Field(default_factory=StateKey)

    model_config = ConfigDict(extra="forbid")


class TransitionDataset(BaseModel):
    """Immutable column store of transitions (s, a, r, s2, done)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    box: ActionBox
    state_key: StateKey = Field(default_factory=StateKey)

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    @field_validator("states", "actions", "next_states", mode="before")
    @classmethod
    def _matrix(cls, value: Any) -> NDArray[np.float64]:
        return _frozen_array(value, ndim=2)

    @field_validator("rewards", mode="before")
    @classmethod
    def _vector(cls, value: Any) -> NDArray[np.float64]:
        return _frozen_array(value, ndim=1)

    @field_validator("dones", mode="before")
    @classmethod
    def _flags(cls, value: Any) -> NDArray[np.bool_]:
        return _frozen_array(value, dtype=bool, ndim=1)

    @model_validator(mode="after")
    def _check_consistency(self) -> "TransitionDataset":
        n = self.states.shape[0]
        if n == 0:
            raise ValueError("dataset must contain at least one transition")
        if not (self.actions.shape[0] == self.rewards.shape[0] == self.next_states.shape[0]
                == self.dones.shape[0] == n):
            raise ValueError("all columns must have one entry per transition")
        if self.next_states.shape[1] != self.states.shape[1]:
            raise ValueError("state and next-state dimensions differ")
        if self.actions.shape[1] != self.box.dim:
            raise ValueError(f"actions have dimension {self.actions.shape[1]}, box has {self.box.dim}")
        for name in ("states", "actions", "rewards", "next_states"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        if not self.box.contains(self.actions, tol=ACTION_BOX_TOL):
            raise ValueError("dataset actions must lie inside the action box")
        return self

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransitionDataset):
            return NotImplemented
        return (
            self.box == other.box
            and self.state_key == other.state_key
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("states", "actions", "rewards", "next_states", "dones")
            )
        )

    __hash__ = None  # type: ignore[assignment]

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def state_dim(self) -> int:
        return int(self.states.shape[1])

    @property
    def action_dim(self) -> int:
        return int(self.actions.shape[1])

    def transitions(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield Transition(
                s=self.states[i].tolist(),
                a=self.actions[i].tolist(),
                r=float(self.rewards[i]),
                s2=self.next_states[i].tolist(),
                done=bool(self.dones[i]),
            )

    @classmethod
    def from_transitions(
        cls,
        transitions: Sequence[Transition],
        box: ActionBox,
        state_key: StateKey | None = None,
    ) -> "TransitionDataset":
        if not transitions:
            raise ValueError("dataset must contain at least one transition")
        return cls(
            states=[t.s for t in transitions],
            actions=[t.a for t in transitions],
            rewards=[t.r for t in transitions],
            next_states=[t.s2 for t in transitions],
            dones=[t.done for t in transitions],
            box=box,
            state_key=state_key or StateKey(),
        )

    def header(self) -> DatasetHeader:
        return DatasetHeader(
            state_dim=self.state_dim,
            action_dim=self.action_dim,
            n_transitions=len(self),
            box=self.box,
            state_key=self.state_key,
        )


class StateGroup(BaseModel):
    """One state's dataset entries, in dataset order."""

    key: StateKeyTuple
    indices: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_keys: list[StateKeyTuple]
    dones: np.ndarray

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def entries(self) -> list[tuple[NDArray[np.float64], float, StateKeyTuple, bool]]:
        return [
            (self.actions[i], float(self.rewards[i]), self.next_keys[i], bool(self.dones[i]))
            for i in range(len(self))
        ]


def group_by_state(dataset: TransitionDataset) -> dict[StateKeyTuple, StateGroup]:
    """Partitions transitions by state key; groups are ordered by key."""
    keyer = dataset.state_key
    buckets: dict[StateKeyTuple, list[int]] = {}
    for i, state in enumerate(dataset.states):
        buckets.setdefault(keyer.key(state), []).append(i)
    groups: dict[StateKeyTuple, StateGroup] = {}
    for key in sorted(buckets):
        idx = np.asarray(buckets[key], dtype=np.int64)
        groups[key] = StateGroup(
            key=key,
            indices=idx,
            actions=dataset.actions[idx],
            rewards=dataset.rewards[idx],
            next_keys=[keyer.key(s2) for s2 in dataset.next_states[idx]],
            dones=dataset.dones[idx],
        )
    logger.debug(f"Grouped {len(dataset)} transitions into {len(groups)} state keys")
    return groups


# --- Tabular MDPs ---


class FiniteMdp(BaseModel):
    """Explicit tabular MDP (S, A, R, P, gamma) for return-gap experiments."""

    rewards: np.ndarray
    transitions: np.ndarray
    gamma: float = Field(gt=0.0, lt=1.0)

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @field_validator("rewards", mode="before")
    @classmethod
    def _rewards(cls, value: Any) -> NDArray[np.float64]:
        return _frozen_array(value, ndim=2)

    @field_validator("transitions", mode="before")
    @classmethod
    def _transitions(cls, value: Any) -> NDArray[np.float64]:
        return _frozen_array(value, ndim=3)

    @model_validator(mode="after")
    def _check_tables(self) -> "FiniteMdp":
        n_s, n_a = self.rewards.shape
        if self.transitions.shape != (n_s, n_a, n_s):
            raise ValueError(f"transitions must have shape {(n_s, n_a, n_s)}, got {self.transitions.shape}")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")
        if np.any(self.transitions < 0.0) or not np.allclose(self.transitions.sum(axis=-1), 1.0, rtol=0.0, atol=1e-12):
            raise ValueError("each P[s][a] must be a probability vector")
        return self

    @property
    def n_states(self) -> int:
        return int(self.rewards.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.rewards.shape[1])


def random_finite_mdp(n_states: int, n_actions: int, gamma: float = 0.9, seed: int = 0) -> FiniteMdp:
    rng = np.random.default_rng(seed)
    rewards = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    probs = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    probs = probs / probs.sum(axis=-1, keepdims=True)
    return FiniteMdp(rewards=rewards, transitions=probs, gamma=gamma)


def finite_mdp_action_values(n_actions: int) -> NDArray[np.float64]:
    """1-D action coordinates standing for the tabular actions 0..n_actions-1."""
    if n_actions == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, n_actions)


def finite_mdp_dataset(mdp: FiniteMdp, samples_per_pair: int = 1, seed: int = 0) -> TransitionDataset:
    """Covers every (s, a) pair; state i is encoded as [i], action j as its 1-D coordinate."""
    rng = np.random.default_rng(seed)
    values = finite_mdp_action_values(mdp.n_actions)
    rows: list[Transition] = []
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            for _ in range(samples_per_pair):
                s2 = int(rng.choice(mdp.n_states, p=mdp.transitions[s, a]))
                rows.append(
                    Transition(s=[float(s)], a=[float(values[a])], r=float(mdp.rewards[s, a]),
                               s2=[float(s2)], done=False)
                )
    return TransitionDataset.from_transitions(rows, box=ActionBox.symmetric(1.0))


# --- Toy generators ---


def _single_state(actions: NDArray[np.float64], rewards: NDArray[np.float64], box: ActionBox) -> TransitionDataset:
    n = actions.shape[0]
    zeros = np.zeros((n, 1))
    return TransitionDataset(
        states=zeros,
        actions=actions,
        rewards=rewards,
        next_states=zeros,
        dones=np.ones(n, dtype=bool),
        box=box,
    )


def gen_bandit1d() -> TransitionDataset:
    """Two-armed bandit: a=-1 pays 0, a=+1 pays 1; box [-1.5, 1.5]."""
    return _single_state(
        actions=np.array([[-1.0], [1.0]]),
        rewards=np.array([0.0, 1.0]),
        box=ActionBox.symmetric(1.5),
    )


def gen_rings(
    n_rings: int = 3,
    points_per_ring: int = 128,
    radii: Sequence[float] = (0.3, 0.6, 0.9),
    ring_rewards: Sequence[float] = (1.0, 0.5, 0.0),
    jitter: float = 0.02,
    seed: int = 0,
) -> TransitionDataset:
    """Concentric rings of 2-D actions in [-1, 1]^2, one reward per ring."""
    if len(radii) != n_rings or len(ring_rewards) != n_rings:
        raise ValueError(f"radii and ring_rewards need {n_rings} entries each")
    box = ActionBox.symmetric(1.0, dim=2)
    if any(r <= 0.0 or r > 1.0 for r in radii):
        raise ValueError(f"ring radii must lie in (0, 1], got {tuple(radii)}")
    if jitter < 0.0:
        raise ValueError("jitter must be nonnegative")
    rng = np.random.default_rng(seed)
    actions, rewards = [], []
    for radius, reward in zip(radii, ring_rewards, strict=True):
        angles = rng.uniform(0.0, 2.0 * math.pi, size=points_per_ring)
        radial = radius + jitter * rng.standard_normal(points_per_ring)
        actions.append(np.column_stack([radial * np.cos(angles), radial * np.sin(angles)]))
        rewards.append(np.full(points_per_ring, float(reward)))
    return _single_state(box.clip(np.vstack(actions)), np.concatenate(rewards), box)


def gen_pinwheel(
    n_arms: int = 5,
    points_per_arm: int = 128,
    seed: int = 0,
    radial_std: float = 0.3,
    tangential_std: float = 0.05,
    rate: float = 0.25,
    scale: float = 0.4,
) -> TransitionDataset:
    """Swirled Gaussian arms in [-1, 1]^2; arm k pays k / (n_arms - 1)."""
    if n_arms < 2:
        raise ValueError("pinwheel needs at least two arms")
    box = ActionBox.symmetric(1.0, dim=2)
    rng = np.random.default_rng(seed)
    arm_angles = np.linspace(0.0, 2.0 * math.pi, n_arms, endpoint=False)
    features = rng.standard_normal((n_arms * points_per_arm, 2)) * np.array([radial_std, tangential_std])
    features[:, 0] += 1.0
    labels = np.repeat(np.arange(n_arms), points_per_arm)
    angles = arm_angles[labels] + rate * np.exp(features[:, 0])
    rotations = np.stack([np.cos(angles), -np.sin(angles), np.sin(angles), np.cos(angles)], axis=1)
    points = scale * np.einsum("ti,tij->tj", features, rotations.reshape(-1, 2, 2))
    return _single_state(box.clip(points), labels / (n_arms - 1.0), box)


class ChainSimulator(BaseModel):
    """
    Continuous-action chain: from state k an action within ``band_width`` of
    ``band_center`` moves to k+1, anything else stays. Entering the last state
    pays ``goal_reward`` and terminates.
    """

    n_states: int = Field(ge=3)
    band_center: float
    band_width: float = Field(gt=0.0)
    goal_reward: float = 1.0
    gamma: float = Field(default=0.99, gt=0.0, lt=1.0)
    max_steps: int | None = None

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_band(self) -> "ChainSimulator":
        if self.band_center - self.band_width < -1.0 or self.band_center + self.band_width > 1.0:
            raise ValueError("the band must lie within [-1, 1]")
        return self

    @property
    def box(self) -> ActionBox:
        return ActionBox.symmetric(1.0)

    @property
    def step_cap(self) -> int:
        return self.max_steps or 4 * self.n_states

    def in_band(self, action: ArrayLike) -> bool:
        return bool(abs(float(np.asarray(action, dtype=float).ravel()[0]) - self.band_center) <= self.band_width)

    def reset(self) -> NDArray[np.float64]:
        return np.zeros(1)

    def step(self, state: ArrayLike, action: ArrayLike) -> tuple[NDArray[np.float64], float, bool]:
        k = int(round(float(np.asarray(state, dtype=float).ravel()[0])))
        nxt = k + 1 if self.in_band(action) else k
        done = nxt == self.n_states - 1
        reward = self.goal_reward if done else 0.0
        return np.array([float(nxt)]), reward, done

    def optimal_return(self) -> float:
        return self.gamma ** (self.n_states - 2) * self.goal_reward


def gen_chain_env(
    n_states: int = 5,
    band_center: float = 0.5,
    band_width: float = 0.2,
    goal_reward: float = 1.0,
    gamma: float = 0.99,
    samples_per_state: int = 20,
    uniform_fraction: float = 0.5,
    seed: int = 0,
    state_key: StateKey | None = None,
) -> tuple[ChainSimulator, TransitionDataset]:
    """
    Chain simulator plus a behaviour dataset: per non-terminal state, a mix of
    noisy band actions and uniform actions. The first sample at each state is
    forced into the band so every state has a successful move on record.
    """
    simulator = ChainSimulator(
        n_states=n_states, band_center=band_center, band_width=band_width,
        goal_reward=goal_reward, gamma=gamma,
    )
    if samples_per_state < 1:
        raise ValueError("samples_per_state must be positive")
    rng = np.random.default_rng(seed)
    box = simulator.box
    rows: list[Transition] = []
    for k in range(n_states - 1):
        state = np.array([float(k)])
        for i in range(samples_per_state):
            band_draw = band_center + 0.5 * band_width * rng.standard_normal()
            uniform_draw = rng.uniform(-1.0, 1.0)
            if i == 0:
                action = np.clip(band_draw, band_center - band_width, band_center + band_width)
            elif rng.random() < uniform_fraction:
                action = uniform_draw
            else:
                action = band_draw
            action = box.clip(np.array([action]))
            s2, reward, done = simulator.step(state, action)
            rows.append(Transition(s=state.tolist(), a=action.tolist(), r=reward, s2=s2.tolist(), done=done))
    dataset = TransitionDataset.from_transitions(rows, box=box, state_key=state_key)
    logger.debug(f"Generated chain dataset: {n_states} states, {len(dataset)} transitions")
    return simulator, dataset


# --- JSONL ---


def save_jsonl(dataset: TransitionDataset, path: Path) -> Path:
    """One header line, then one JSON object per transition (shortest round-trip floats)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dataset.header().model_dump_json() + "\n")
        for t in dataset.transitions():
            f.write(json.dumps(t.model_dump(), separators=(",", ":")) + "\n")
    logger.info(f"Saved {len(dataset)} transitions to {path}")
    return path


def _validation_message(err: ValidationError) -> tuple[str, str | None]:
    first = err.errors()[0]
    key = ".".join(str(p) for p in first.get("loc", ())) or None
    if first.get("type") == "missing":
        return f"missing key '{key}'", key
    if first.get("type") == "json_invalid":
        return f"invalid JSON ({first.get('msg')})", None
    return f"{key}: {first.get('msg')}", key


def load_jsonl(path: Path) -> TransitionDataset:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        lines = [(i, line) for i, line in enumerate(f, start=1) if line.strip()]
    if not lines:
        raise DatasetFormatError("empty dataset file", line=1)
    try:
        header = DatasetHeader.model_validate_json(lines[0][1])
    except ValidationError as e:
        message, key = _validation_message(e)
        raise DatasetFormatError(f"bad header: {message}", line=lines[0][0], key=key) from e
    rows: list[Transition] = []
    for line_no, line in lines[1:]:
        try:
            t = Transition.model_validate_json(line)
        except ValidationError as e:
            message, key = _validation_message(e)
            raise DatasetFormatError(message, line=line_no, key=key) from e
        for name, value, expected in (("s", t.s, header.state_dim), ("a", t.a, header.action_dim),
                                      ("s2", t.s2, header.state_dim)):
            if len(value) != expected:
                raise DatasetFormatError(
                    f"'{name}' has {len(value)} entries, header declares {expected}", line=line_no, key=name
                )
        rows.append(t)
    if len(rows) != header.n_transitions:
        raise DatasetFormatError(
            f"header declares {header.n_transitions} transitions, file holds {len(rows)}", line=lines[0][0]
        )
    try:
        dataset = TransitionDataset.from_transitions(rows, box=header.box, state_key=header.state_key)
    except ValueError as e:
        raise DatasetFormatError(f"inconsistent dataset: {e}") from e
    logger.info(f"Loaded {len(dataset)} transitions from {path}")
    return dataset
