# pani_lab/core/namdp.py
"""
Exact noisy-action MDPs built from finite datasets.

For a state s with dataset entries (a_i, r_i, s2_i, done_i) and a grid action a',
the posterior weight of entry i is proportional to q_sigma(a'|a_i). The model
reward is the weighted mean of the penalized rewards r_i - |a_i - a'|^2 and the
transition row routes each entry's weight to its next-state key, or to an
absorbing zero-reward terminal column when done.
"""
from collections.abc import Callable, Mapping, Sequence
import math
from pathlib import Path

from loguru import logger
import numpy as np
from numpy.typing import ArrayLike, NDArray
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg
from scipy.special import logsumexp

from ..common.utils import write_csv_with_echo
from .dataset import FiniteMdp, StateGroup, StateKeyTuple, TransitionDataset, group_by_state
from .exceptions import (
    BoundViolationError,
    ConvergenceError,
    InvalidActionError,
    ModelConstructionError,
)
from .noise import ActionBox, NoiseFamily, NoiseSpec, log_kernel_matrix

TIE_TOL = 1e-9
ROW_SUM_TOL = 1e-10
BOUND_SLACK = 1e-12
DEFAULT_GRID_POINTS = {1: 301, 2: 61}


class ActionGrid(BaseModel):
    """Discrete carrier for a'; ``shape`` is set for regular lattices."""

    points: np.ndarray
    spacing: tuple[float, ...]
    box: ActionBox
    shape: tuple[int, ...] | None = None

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @field_validator("points", mode="before")
    @classmethod
    def _points(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check(self) -> "ActionGrid":
        if self.points.ndim != 2 or self.points.shape[0] == 0 or self.points.shape[1] != self.box.dim:
            raise ValueError(f"grid points must be a nonempty (m, {self.box.dim}) array")
        if len(self.spacing) != self.box.dim or any(h <= 0.0 for h in self.spacing):
            raise ValueError("grid spacing must be positive in every dimension")
        return self

    @classmethod
    def regular(cls, box: ActionBox, points_per_dim: int | Sequence[int] | None = None) -> "ActionGrid":
        if points_per_dim is None:
            points_per_dim = DEFAULT_GRID_POINTS.get(box.dim, 21)
        counts = [points_per_dim] * box.dim if isinstance(points_per_dim, int) else list(points_per_dim)
        if len(counts) != box.dim or any(c < 2 for c in counts):
            raise ValueError(f"need at least two points in each of {box.dim} dimensions, got {counts}")
        axes = [np.linspace(lo, hi, c) for lo, hi, c in zip(box.low, box.high, counts, strict=True)]
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=1)
        spacing = tuple((hi - lo) / (c - 1) for lo, hi, c in zip(box.low, box.high, counts, strict=True))
        return cls(points=points, spacing=spacing, box=box, shape=tuple(counts))

    @classmethod
    def from_points(cls, points: ArrayLike, box: ActionBox) -> "ActionGrid":
        arr = np.array(points, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        spacing = []
        for d in range(box.dim):
            coords = np.unique(arr[:, d])
            gaps = np.diff(coords)
            spacing.append(float(gaps.max()) if gaps.size else box.high[d] - box.low[d])
        return cls(points=arr, spacing=tuple(spacing), box=box)

    def refined(self, factor: int = 10) -> "ActionGrid":
        if self.shape is None:
            raise ValueError("only regular grids can be refined")
        return ActionGrid.regular(self.box, [(c - 1) * factor + 1 for c in self.shape])

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @property
    def max_spacing(self) -> float:
        return max(self.spacing)

    def nearest_index(self, action: ArrayLike) -> int:
        d2 = np.sum((self.points - np.asarray(action, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d2))


class NamdpModel(BaseModel):
    state_keys: list[StateKeyTuple]
    grid: ActionGrid
    weights: list[np.ndarray]
    entry_indices: list[np.ndarray]
    r_sigma: np.ndarray
    p_sigma: np.ndarray
    gamma: float = Field(ge=0.0, lt=1.0)
    sigma: float = Field(ge=0.0)
    family: NoiseFamily | None = None

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @model_validator(mode="after")
    def _check_rows(self) -> "NamdpModel":
        n_s, m = len(self.state_keys), self.grid.size
        if self.r_sigma.shape != (n_s, m) or self.p_sigma.shape != (n_s, m, n_s + 1):
            raise ValueError("reward/transition tables do not match states x grid")
        for w in self.weights:
            if np.any(w < 0.0) or np.max(np.abs(w.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
                raise ValueError("posterior weight rows must be probability vectors")
        if np.any(self.p_sigma < 0.0) or np.max(np.abs(self.p_sigma.sum(axis=-1) - 1.0)) > ROW_SUM_TOL:
            raise ValueError("transition rows must be probability vectors")
        return self

    @property
    def n_states(self) -> int:
        return len(self.state_keys)

    @property
    def terminal_index(self) -> int:
        return len(self.state_keys)

    @property
    def is_limit(self) -> bool:
        return self.sigma == 0.0


class QGrid(BaseModel):
    """Q[state][grid point]; ``residuals`` holds the solver's sup-norm sweep history."""

    values: np.ndarray
    residuals: tuple[float, ...] = ()

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=float)
        if arr.ndim != 2 or not np.all(np.isfinite(arr)):
            raise ValueError("Q values must be a finite 2-D table")
        arr.setflags(write=False)
        return arr


class Visitation(BaseModel):
    """Normalised discounted occupancy; ``terminal`` is the absorbing sink's mass."""

    state_action: np.ndarray
    terminal: float = 0.0

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    @property
    def total(self) -> float:
        return float(self.state_action.sum() + self.terminal)


class ErrorBoundReport(BaseModel):
    """
    Return-gap bound between a true MDP and its NAMDP under one policy.

    ``eta_true`` / ``eta_namdp`` are normalised returns sum(d * R); the plain
    discounted returns are ``return_true`` / ``return_namdp``.
    """

    eta_true: float
    eta_namdp: float
    return_true: float
    return_namdp: float
    lhs: float
    eps_r: float
    eps_m: float
    r_bar_max: float
    expected_tv: float
    holds: bool
    visitation: np.ndarray

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    def summary(self) -> dict[str, float | bool]:
        return self.model_dump(exclude={"visitation"})


class NoOodResult(BaseModel):
    passed: bool
    worst_distance: float
    slack: float
    distances: dict[str, float]


# --- Posterior weights ---


def _group_actions(group: StateGroup | ArrayLike) -> NDArray[np.float64]:
    actions = group.actions if isinstance(group, StateGroup) else np.asarray(group, dtype=float)
    if actions.ndim == 1:
        actions = actions[:, None]
    if actions.shape[0] == 0:
        raise ValueError("group must hold at least one dataset entry")
    return actions


def _sq_distances(points: NDArray[np.float64], actions: NDArray[np.float64]) -> NDArray[np.float64]:
    diff = points[:, None, :] - actions[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _nearest_weights(d2: NDArray[np.float64], tie_tol: float) -> NDArray[np.float64]:
    mask = d2 <= d2.min(axis=1, keepdims=True) + tie_tol
    return mask / mask.sum(axis=1, keepdims=True)


def nearest_set(group: StateGroup | ArrayLike, a_prime: ArrayLike, tie_tol: float = TIE_TOL) -> NDArray[np.int64]:
    """Positions in ``group`` minimising |a' - a_i|^2 within an additive ``tie_tol``."""
    actions = _group_actions(group)
    point = np.asarray(a_prime, dtype=float).reshape(1, -1)
    d2 = _sq_distances(point, actions)[0]
    return np.flatnonzero(d2 <= d2.min() + tie_tol)


def posterior_weights(group: StateGroup | ArrayLike, a_prime: ArrayLike, spec: NoiseSpec) -> NDArray[np.float64]:
    """
    Posterior over a state's dataset entries given a noised action a'.

    ``a_prime`` may be one action or an ``(m, dim)`` block; rows whose kernel values
    all underflow fall back to uniform weight on the nearest entries.
    """
    actions = _group_actions(group)
    points = np.asarray(a_prime, dtype=float)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    if not np.all(np.isfinite(points)):
        raise InvalidActionError("a_prime contains non-finite entries")
    log_q = log_kernel_matrix(spec, points, actions)
    peak = np.max(log_q, axis=1, keepdims=True)
    ok = np.isfinite(peak[:, 0])
    weights = np.zeros_like(log_q)
    # peak-shifted; tied rows come out exactly uniform
    shifted = np.exp(log_q[ok] - peak[ok])
    weights[ok] = shifted / shifted.sum(axis=1, keepdims=True)
    if not np.all(ok):
        logger.debug(f"Kernel underflow at {int(np.sum(~ok))} grid points; using nearest-set weights")
        weights[~ok] = _nearest_weights(_sq_distances(points[~ok], actions), TIE_TOL)
    return weights[0] if single else weights


# --- Model assembly ---


def _assemble(
    dataset: TransitionDataset,
    grid: ActionGrid,
    gamma: float,
    weight_fn: Callable[[StateGroup], NDArray[np.float64]],
    sigma: float,
    family: NoiseFamily | None,
) -> NamdpModel:
    if not grid.box.covers(dataset.box):
        raise ModelConstructionError("grid box must contain the dataset box")
    if grid.dim != dataset.action_dim:
        raise ModelConstructionError(f"grid has dimension {grid.dim}, actions have {dataset.action_dim}")
    groups = group_by_state(dataset)
    keys = list(groups)
    index = {key: i for i, key in enumerate(keys)}
    n_s, m = len(keys), grid.size
    r_sigma = np.empty((n_s, m))
    p_sigma = np.zeros((n_s, m, n_s + 1))
    weights, entry_indices = [], []
    for s, key in enumerate(keys):
        group = groups[key]
        columns = []
        for next_key, done in zip(group.next_keys, group.dones, strict=True):
            if done:
                columns.append(n_s)
            elif next_key in index:
                columns.append(index[next_key])
            else:
                raise ModelConstructionError(
                    f"next state {next_key} reached from {key} has no dataset entries of its own"
                )
        routing = np.zeros((len(group), n_s + 1))
        routing[np.arange(len(group)), columns] = 1.0
        w = weight_fn(group)
        penalty = _sq_distances(grid.points, group.actions)
        r_sigma[s] = np.sum(w * (group.rewards[None, :] - penalty), axis=1)
        p_sigma[s] = w @ routing
        weights.append(w)
        entry_indices.append(group.indices)
    return NamdpModel(
        state_keys=keys,
        grid=grid,
        weights=weights,
        entry_indices=entry_indices,
        r_sigma=r_sigma,
        p_sigma=p_sigma,
        gamma=gamma,
        sigma=sigma,
        family=family,
    )


def build_namdp(dataset: TransitionDataset, spec: NoiseSpec, grid: ActionGrid, gamma: float) -> NamdpModel:
    model = _assemble(
        dataset,
        grid,
        gamma,
        weight_fn=lambda group: posterior_weights(group, grid.points, spec),
        sigma=spec.sigma,
        family=spec.family,
    )
    logger.debug(
        f"Built NAMDP ({spec.family}, sigma={spec.sigma:.3g}): {model.n_states} states x {grid.size} grid points"
    )
    return model


def build_limit_namdp(
    dataset: TransitionDataset, grid: ActionGrid, gamma: float, tie_tol: float = TIE_TOL
) -> NamdpModel:
    """The sigma -> 0 model: uniform weight over each grid point's nearest dataset entries."""
    return _assemble(
        dataset,
        grid,
        gamma,
        weight_fn=lambda group: _nearest_weights(_sq_distances(grid.points, group.actions), tie_tol),
        sigma=0.0,
        family=None,
    )


# --- Solvers ---


def _continuation(model: NamdpModel, v: NDArray[np.float64]) -> NDArray[np.float64]:
    return model.p_sigma @ np.append(v, 0.0)


def bellman_optimality(model: NamdpModel, q: NDArray[np.float64]) -> NDArray[np.float64]:
    return model.r_sigma + model.gamma * _continuation(model, q.max(axis=1))


def bellman_expectation(model: NamdpModel, q: NDArray[np.float64], policy: NDArray[np.float64]) -> NDArray[np.float64]:
    return model.r_sigma + model.gamma * _continuation(model, np.sum(policy * q, axis=1))


def _sweep(operator: Callable[[NDArray], NDArray], shape, tol: float, max_iter: int, label: str) -> QGrid:
    q = np.zeros(shape)
    residuals: list[float] = []
    for _ in range(max_iter):
        q_new = operator(q)
        residual = float(np.max(np.abs(q_new - q)))
        residuals.append(residual)
        q = q_new
        if residual <= tol:
            logger.debug(f"{label} converged after {len(residuals)} sweeps (residual {residual:.2e})")
            return QGrid(values=q, residuals=tuple(residuals))
    raise ConvergenceError(f"{label} did not converge in {max_iter} sweeps", residual=residuals[-1])


def value_iteration(
    model: NamdpModel, tol: float = 1e-10, max_iter: int = 10_000
) -> tuple[QGrid, NDArray[np.int64]]:
    """Optimal Q on the grid and the greedy grid index per state (lowest index wins ties)."""
    if not model.gamma < 1.0:
        raise ValueError("value iteration needs gamma < 1")
    q = _sweep(lambda v: bellman_optimality(model, v), model.r_sigma.shape, tol, max_iter, "Value iteration")
    return q, np.argmax(q.values, axis=1)


def _check_policy(policy: ArrayLike, shape: tuple[int, int]) -> NDArray[np.float64]:
    pi = np.asarray(policy, dtype=float)
    if pi.shape != shape:
        raise ValueError(f"policy must have shape {shape}, got {pi.shape}")
    if np.any(pi < 0.0) or not np.allclose(pi.sum(axis=1), 1.0, rtol=0.0, atol=1e-10):
        raise ValueError("policy rows must be probability vectors")
    return pi


def policy_evaluation(
    model: NamdpModel, policy: ArrayLike, tol: float = 1e-10, max_iter: int = 100_000
) -> QGrid:
    pi = _check_policy(policy, model.r_sigma.shape)
    return _sweep(lambda v: bellman_expectation(model, v, pi), model.r_sigma.shape, tol, max_iter, "Policy evaluation")


def uniform_policy(model: NamdpModel) -> NDArray[np.float64]:
    return np.full(model.r_sigma.shape, 1.0 / model.grid.size)


def greedy_policy(greedy: ArrayLike, n_grid: int) -> NDArray[np.float64]:
    idx = np.asarray(greedy, dtype=np.int64)
    pi = np.zeros((idx.shape[0], n_grid))
    pi[np.arange(idx.shape[0]), idx] = 1.0
    return pi


def state_values(model: NamdpModel, q: QGrid, policy: ArrayLike) -> dict[StateKeyTuple, float]:
    pi = _check_policy(policy, model.r_sigma.shape)
    v = np.sum(pi * q.values, axis=1)
    return {key: float(v[s]) for s, key in enumerate(model.state_keys)}


def pani_exact_regression(
    dataset: TransitionDataset,
    spec: NoiseSpec,
    grid: ActionGrid,
    policy: ArrayLike,
    v_next: Mapping[StateKeyTuple, float] | QGrid,
    gamma: float,
) -> QGrid:
    """
    Closed-form minimiser of the weighted least-squares penalized objective:
    per grid point, the posterior-weighted mean of r_i - |a_i - a'|^2 + gamma * v_next(s2_i).

    ``v_next`` is either a state-value mapping or a Q table that is averaged
    under ``policy``. Terminal entries bootstrap nothing.
    """
    groups = group_by_state(dataset)
    keys = list(groups)
    if isinstance(v_next, QGrid):
        pi = _check_policy(policy, v_next.values.shape)
        values = {key: float(v) for key, v in zip(keys, np.sum(pi * v_next.values, axis=1), strict=True)}
    else:
        _check_policy(policy, (len(keys), grid.size))
        values = dict(v_next)
    out = np.empty((len(keys), grid.size))
    for s, key in enumerate(keys):
        group = groups[key]
        cont = np.zeros(len(group))
        for i, (next_key, done) in enumerate(zip(group.next_keys, group.dones, strict=True)):
            if done:
                continue
            if next_key not in values:
                raise ModelConstructionError(f"v_next has no value for next state {next_key}")
            cont[i] = values[next_key]
        w = posterior_weights(group, grid.points, spec)
        targets = group.rewards[None, :] - _sq_distances(grid.points, group.actions) + gamma * cont[None, :]
        out[s] = np.sum(w * targets, axis=1)
    return QGrid(values=out)


# --- Returns and bounds ---


def _tabular(mdp: FiniteMdp | NamdpModel) -> tuple[NDArray, NDArray, float]:
    if isinstance(mdp, FiniteMdp):
        return mdp.rewards, mdp.transitions, mdp.gamma
    return mdp.r_sigma, mdp.p_sigma, mdp.gamma


def expected_return(
    mdp: FiniteMdp | NamdpModel, policy: ArrayLike, start: ArrayLike | None = None
) -> tuple[float, Visitation]:
    """
    Discounted return and normalised visitation d = (1 - gamma) mu^T (I - gamma P_pi)^-1,
    by one direct linear solve. A NAMDP's terminal column is an absorbing sink.
    """
    rewards, transitions, gamma = _tabular(mdp)
    n_s, n_a = rewards.shape
    pi = _check_policy(policy, (n_s, n_a))
    mu = np.full(n_s, 1.0 / n_s) if start is None else np.asarray(start, dtype=float)
    if mu.shape != (n_s,) or np.any(mu < 0.0) or not math.isclose(mu.sum(), 1.0, abs_tol=1e-12):
        raise ValueError("start distribution must be a probability vector over the states")
    n_all = transitions.shape[2]
    p_pi = np.zeros((n_all, n_all))
    p_pi[:n_s] = np.einsum("sa,sak->sk", pi, transitions)
    if n_all > n_s:
        p_pi[n_s:, n_s:] = np.eye(n_all - n_s)
    mu_all = np.zeros(n_all)
    mu_all[:n_s] = mu
    try:
        d_state = linalg.solve((np.eye(n_all) - gamma * p_pi).T, (1.0 - gamma) * mu_all)
    except linalg.LinAlgError as e:
        raise ModelConstructionError(f"visitation system is singular: {e}") from e
    d_sa = d_state[:n_s, None] * pi
    visitation = Visitation(state_action=d_sa, terminal=float(d_state[n_s:].sum()))
    eta = float(np.sum(d_sa * rewards) / (1.0 - gamma))
    return eta, visitation


def model_mismatch_bound(r_bar_max: float, expected_tv: float, gamma: float) -> float:
    return 2.0 * r_bar_max * gamma * expected_tv / (1.0 - gamma) ** 2


def error_bound_report(
    true_mdp: FiniteMdp,
    namdp: NamdpModel,
    policy: ArrayLike,
    start: ArrayLike | None = None,
    strict: bool = True,
) -> ErrorBoundReport:
    """
    Compares the normalised returns of the true MDP and an aligned NAMDP
    (state i keyed as (i,), grid point j standing for action j) and checks
    |eta - eta_bar| <= eps_r + eps_m.
    """
    n_s, n_a = true_mdp.n_states, true_mdp.n_actions
    if namdp.r_sigma.shape != (n_s, n_a) or namdp.state_keys != [(float(i),) for i in range(n_s)]:
        raise ModelConstructionError("NAMDP is not aligned with the true MDP's states and actions")
    if not math.isclose(namdp.gamma, true_mdp.gamma):
        raise ModelConstructionError("both models must share gamma")
    gamma = true_mdp.gamma
    return_true, vis_true = expected_return(true_mdp, policy, start)
    return_namdp, _ = expected_return(namdp, policy, start)
    d = vis_true.state_action
    eta_true, eta_namdp = (1.0 - gamma) * return_true, (1.0 - gamma) * return_namdp
    lhs = abs(eta_true - eta_namdp)
    eps_r = float(np.sum(d * np.abs(true_mdp.rewards - namdp.r_sigma)))
    p_true = np.concatenate([true_mdp.transitions, np.zeros((n_s, n_a, 1))], axis=-1)
    tv = 0.5 * np.sum(np.abs(p_true - namdp.p_sigma), axis=-1)
    expected_tv = float(np.sum(d * tv))
    r_bar_max = float(np.max(np.abs(namdp.r_sigma)))
    eps_m = model_mismatch_bound(r_bar_max, expected_tv, gamma)
    holds = lhs <= eps_r + eps_m + BOUND_SLACK
    report = ErrorBoundReport(
        eta_true=eta_true,
        eta_namdp=eta_namdp,
        return_true=return_true,
        return_namdp=return_namdp,
        lhs=lhs,
        eps_r=eps_r,
        eps_m=eps_m,
        r_bar_max=r_bar_max,
        expected_tv=expected_tv,
        holds=holds,
        visitation=d,
    )
    if not holds:
        logger.error(f"Return-gap bound violated: lhs={lhs:.3e} > {eps_r + eps_m:.3e}")
        if strict:
            raise BoundViolationError(f"lhs {lhs:.6e} exceeds eps_r + eps_m = {eps_r + eps_m:.6e}")
    return report


def bellman_gap(model_sigma: NamdpModel, model_limit: NamdpModel, q: QGrid) -> float:
    """sup over (state, grid point) of |T_limit Q - T_sigma Q|."""
    if model_sigma.state_keys != model_limit.state_keys or model_sigma.grid.size != model_limit.grid.size:
        raise ValueError("models must share states and grid")
    diff = bellman_optimality(model_limit, q.values) - bellman_optimality(model_sigma, q.values)
    return float(np.max(np.abs(diff)))


def nearest_set_identity_gap(
    model_limit: NamdpModel, q: QGrid, dataset: TransitionDataset, tie_tol: float = TIE_TOL
) -> float:
    """
    sup-norm residual of E_C[Q(s, a)] = Q(s, a') + min_i |a' - a_i|^2 for the limit model,
    where C is a' 's nearest set. Dataset actions must sit on grid points.
    """
    groups = group_by_state(dataset)
    grid = model_limit.grid
    worst = 0.0
    for s, key in enumerate(model_limit.state_keys):
        group = groups[key]
        on_grid = [grid.nearest_index(a) for a in group.actions]
        snap = np.max(np.sum((grid.points[on_grid] - group.actions) ** 2, axis=1))
        if snap > tie_tol:
            raise ValueError(f"dataset actions at {key} are not grid points (snap {snap:.2e})")
        q_at_data = q.values[s, on_grid]
        d2 = _sq_distances(grid.points, group.actions)
        mask = d2 <= d2.min(axis=1, keepdims=True) + tie_tol
        lhs = (mask @ q_at_data) / mask.sum(axis=1)
        rhs = q.values[s] + d2.min(axis=1)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def no_ood_check(
    model: NamdpModel,
    dataset: TransitionDataset,
    epsilon: float,
    greedy: ArrayLike | None = None,
) -> NoOodResult:
    """Squared distance from each state's greedy grid action to its nearest dataset action."""
    if greedy is None:
        _, greedy = value_iteration(model)
    greedy = np.asarray(greedy, dtype=np.int64)
    groups = group_by_state(dataset)
    slack = model.grid.dim * (0.5 * model.grid.max_spacing) ** 2
    distances = {}
    for s, key in enumerate(model.state_keys):
        chosen = model.grid.points[greedy[s]][None, :]
        distances[str(key)] = float(_sq_distances(chosen, groups[key].actions).min())
    worst = max(distances.values())
    return NoOodResult(passed=worst < epsilon + slack, worst_distance=worst, slack=slack, distances=distances)


# --- Mode analysis ---


def count_plateau_maxima(values: ArrayLike) -> int:
    """Maximal runs of equal values that exceed both neighbours (grid edges count as -inf)."""
    v = np.asarray(values, dtype=float)
    keep = np.concatenate([[True], np.diff(v) != 0.0])
    runs = v[keep]
    if runs.size == 1:
        return 1
    left = np.concatenate([[-np.inf], runs[:-1]])
    right = np.concatenate([runs[1:], [-np.inf]])
    return int(np.sum((runs > left) & (runs > right)))


def noised_log_density(dataset: TransitionDataset, spec: NoiseSpec, grid: ActionGrid) -> NDArray[np.float64]:
    """log of the noised behaviour mixture (1/N) sum_i q(a'|a_i) on the grid."""
    log_q = log_kernel_matrix(spec, grid.points, dataset.actions)
    return logsumexp(log_q, axis=1) - math.log(len(dataset))


def count_modes(dataset: TransitionDataset, spec: NoiseSpec, grid: ActionGrid) -> int:
    if dataset.action_dim != 1 or grid.dim != 1:
        raise ValueError("mode counting is defined for 1-D actions")
    return count_plateau_maxima(noised_log_density(dataset, spec, grid))


def mode_curve(
    dataset: TransitionDataset,
    family: NoiseFamily,
    sigmas: Sequence[float],
    grid: ActionGrid,
    quadrature_nodes: int = 64,
) -> pd.DataFrame:
    """Mode counts across noise scales, with a refined-grid recount per row."""
    fine = grid.refined() if grid.shape is not None else grid
    rows = []
    for sigma in sigmas:
        spec = NoiseSpec(family=family, sigma=sigma, box=dataset.box, quadrature_nodes=quadrature_nodes)
        rows.append(
            {
                "family": str(family),
                "sigma": float(sigma),
                "variance": float(sigma) ** 2,
                "modes": count_modes(dataset, spec, grid),
                "modes_fine_grid": count_modes(dataset, spec, fine),
            }
        )
    return pd.DataFrame(rows)


# --- Exports ---


def _action_columns(dim: int) -> list[str]:
    return [f"a{d + 1}" for d in range(dim)]


def model_to_frame(model: NamdpModel, q: QGrid | None = None) -> pd.DataFrame:
    """One row per state x grid point: state key, action coordinates, R_sigma and Q."""
    n_s, m = model.r_sigma.shape
    frame = pd.DataFrame(np.tile(model.grid.points, (n_s, 1)), columns=_action_columns(model.grid.dim))
    frame.insert(0, "state", np.repeat([",".join(repr(x) for x in key) for key in model.state_keys], m))
    frame["r_sigma"] = model.r_sigma.ravel()
    if q is not None:
        frame["q"] = q.values.ravel()
    return frame


def qgrid_to_frame(q: QGrid, grid: ActionGrid) -> pd.DataFrame:
    frame = pd.DataFrame(np.tile(grid.points, (q.values.shape[0], 1)), columns=_action_columns(grid.dim))
    frame["q"] = q.values.ravel()
    return frame


def export_model_csv(model: NamdpModel, q: QGrid | None, path: Path, digest: str) -> Path:
    return write_csv_with_echo(model_to_frame(model, q), path, digest)


def export_modes_csv(curve: pd.DataFrame, path: Path, digest: str) -> Path:
    return write_csv_with_echo(curve, path, digest)
