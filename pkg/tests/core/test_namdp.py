# tests/core/test_namdp.py
import math

import numpy as np
import pytest

from pani_lab.common.utils import CONFIG_HASH_PREFIX, read_echo_csv
from pani_lab.core.dataset import (
    FiniteMdp,
    Transition,
    TransitionDataset,
    finite_mdp_action_values,
    finite_mdp_dataset,
    gen_rings,
    group_by_state,
    random_finite_mdp,
)
from pani_lab.core.exceptions import ModelConstructionError
from pani_lab.core.namdp import (
    ActionGrid,
    bellman_gap,
    build_limit_namdp,
    build_namdp,
    count_modes,
    count_plateau_maxima,
    error_bound_report,
    expected_return,
    export_model_csv,
    greedy_policy,
    mode_curve,
    model_mismatch_bound,
    nearest_set,
    no_ood_check,
    pani_exact_regression,
    policy_evaluation,
    posterior_weights,
    state_values,
    uniform_policy,
    value_iteration,
)
from pani_lab.core.noise import ActionBox, NoiseFamily, NoiseSpec

GAMMA = 0.9


def gaussian(sigma, box):
    return NoiseSpec(family=NoiseFamily.GAUSSIAN, sigma=sigma, box=box)


@pytest.fixture
def bandit_grid(bandit):
    return ActionGrid.regular(bandit.box, 301)


# --- Grids ---


def test_regular_grid_defaults():
    grid_1d = ActionGrid.regular(ActionBox.symmetric(1.0))
    grid_2d = ActionGrid.regular(ActionBox.symmetric(1.0, dim=2))
    assert grid_1d.size == 301
    assert grid_2d.size == 61 * 61
    assert grid_1d.spacing[0] == pytest.approx(2.0 / 300)
    assert grid_1d.refined().size == 3001


def test_nearest_index_snaps_to_grid(bandit_grid):
    j = bandit_grid.nearest_index([0.996])
    assert bandit_grid.points[j, 0] == pytest.approx(1.0)


# --- Posterior weights ---


def test_single_entry_weight_is_one():
    for sigma in (1e-3, 0.5, 5.0):
        w = posterior_weights([[0.2]], [0.9], gaussian(sigma, ActionBox.symmetric(1.0)))
        np.testing.assert_array_equal(w, [1.0])


@pytest.mark.parametrize("family", list(NoiseFamily))
def test_symmetric_families_split_evenly_at_midpoint(bandit, family):
    spec = NoiseSpec(family=family, sigma=0.5, box=bandit.box)
    groups = group_by_state(bandit)
    np.testing.assert_allclose(posterior_weights(groups[(0.0,)], [0.0], spec), [0.5, 0.5], atol=1e-12)


def test_gaussian_weight_closed_form(bandit):
    w = posterior_weights(bandit.actions, [0.5], gaussian(1.0, bandit.box))
    assert w[1] == pytest.approx(math.e / (1.0 + math.e), abs=1e-12)


def test_narrow_kernel_puts_all_weight_on_nearest_entry(bandit):
    w = posterior_weights(bandit.actions, [0.7], gaussian(1e-3, bandit.box))
    np.testing.assert_array_equal(w, [0.0, 1.0])


def test_tiny_sigma_weights_stay_normalised_with_exact_ties(bandit, bandit_grid):
    points = np.vstack([bandit_grid.points, [[0.0]]])
    w = posterior_weights(bandit.actions, points, gaussian(1e-6, bandit.box))

    np.testing.assert_allclose(w.sum(axis=1), 1.0, rtol=0.0, atol=1e-12)
    np.testing.assert_array_equal(w[-1], [0.5, 0.5])
    assert np.all(w[points[:, 0] > 1e-3, 1] == 1.0)


def test_duplicated_transition_doubles_its_weight(bandit):
    actions = np.vstack([bandit.actions, [[1.0]]])
    w = posterior_weights(actions, [0.0], gaussian(0.5, bandit.box))
    np.testing.assert_allclose(w, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])


# --- Nearest sets ---


def test_nearest_set_on_bandit(bandit):
    np.testing.assert_array_equal(nearest_set(bandit.actions, [0.0]), [0, 1])
    np.testing.assert_array_equal(nearest_set(bandit.actions, [0.2]), [1])


def test_nearest_set_matches_brute_force(rng):
    actions = rng.uniform(-1.0, 1.0, size=(40, 2))
    for _ in range(20):
        point = rng.uniform(-1.0, 1.0, size=2)
        d2 = [float(np.sum((a - point) ** 2)) for a in actions]
        assert nearest_set(actions, point).tolist() == [int(np.argmin(d2))]


# --- Model construction ---


def test_rows_are_probability_vectors(chain):
    _, data = chain
    model = build_namdp(data, gaussian(0.3, data.box), ActionGrid.regular(data.box, 101), GAMMA)
    for w in model.weights:
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-10)
    np.testing.assert_allclose(model.p_sigma.sum(axis=-1), 1.0, atol=1e-10)
    assert model.p_sigma.shape == (4, 101, 5)


def test_bandit_midpoint_reward_is_minus_half(bandit, bandit_grid):
    j = bandit_grid.nearest_index([0.0])
    for family in (NoiseFamily.GAUSSIAN, NoiseFamily.LAPLACE, NoiseFamily.HYBRID):
        model = build_namdp(bandit, NoiseSpec(family=family, sigma=0.4, box=bandit.box), bandit_grid, GAMMA)
        assert model.r_sigma[0, j] == pytest.approx(-0.5, abs=1e-9)


def test_rewards_never_exceed_dataset_maximum(chain):
    _, data = chain
    model = build_namdp(data, gaussian(0.2, data.box), ActionGrid.regular(data.box, 51), GAMMA)
    groups = group_by_state(data)
    for s, key in enumerate(model.state_keys):
        assert model.r_sigma[s].max() <= groups[key].rewards.max() + 1e-12


def test_all_terminal_dataset_routes_to_terminal(bandit, bandit_grid):
    model = build_namdp(bandit, gaussian(0.3, bandit.box), bandit_grid, GAMMA)
    np.testing.assert_allclose(model.p_sigma[:, :, model.terminal_index], 1.0, rtol=0.0, atol=1e-12)


def test_dangling_next_state_is_rejected():
    rows = [Transition(s=[0.0], a=[0.0], r=0.0, s2=[1.0], done=False)]
    data = TransitionDataset.from_transitions(rows, box=ActionBox.symmetric(1.0))
    with pytest.raises(ModelConstructionError, match="no dataset entries"):
        build_namdp(data, gaussian(0.3, data.box), ActionGrid.regular(data.box, 11), GAMMA)


def test_grid_must_cover_dataset_box(bandit):
    grid = ActionGrid.regular(ActionBox.symmetric(1.0), 11)
    with pytest.raises(ModelConstructionError):
        build_namdp(bandit, gaussian(0.3, bandit.box), grid, GAMMA)


# --- Solvers ---


def test_all_terminal_value_iteration_is_one_sweep(bandit, bandit_grid):
    model = build_namdp(bandit, gaussian(0.5, bandit.box), bandit_grid, GAMMA)
    q, greedy = value_iteration(model)
    np.testing.assert_array_equal(q.values, model.r_sigma)
    assert q.residuals[1] == 0.0
    assert greedy[0] == int(np.argmax(model.r_sigma[0]))


def test_residuals_contract_by_gamma(chain):
    _, data = chain
    model = build_namdp(data, gaussian(0.3, data.box), ActionGrid.regular(data.box, 101), GAMMA)
    q, _ = value_iteration(model)
    res = q.residuals
    assert all(b <= GAMMA * a + 1e-12 for a, b in zip(res, res[1:], strict=False))


def test_repeated_solves_are_bit_identical(chain):
    _, data = chain
    model = build_namdp(data, gaussian(0.3, data.box), ActionGrid.regular(data.box, 101), GAMMA)
    q1, g1 = value_iteration(model)
    q2, g2 = value_iteration(model)
    np.testing.assert_array_equal(q1.values, q2.values)
    np.testing.assert_array_equal(g1, g2)


def test_limit_greedy_actions_track_band_actions(chain):
    simulator, data = chain
    grid = ActionGrid.regular(data.box, 101)
    model = build_limit_namdp(data, grid, GAMMA)
    _, greedy = value_iteration(model)
    groups = group_by_state(data)
    for s, key in enumerate(model.state_keys):
        band = np.array([a for a in groups[key].actions if simulator.in_band(a)])
        distance = np.min(np.abs(band - grid.points[greedy[s]]))
        assert distance <= grid.max_spacing


def test_policy_evaluation_with_zero_gamma_is_reward(chain):
    _, data = chain
    model = build_namdp(data, gaussian(0.3, data.box), ActionGrid.regular(data.box, 41), 0.0)
    q = policy_evaluation(model, uniform_policy(model))
    np.testing.assert_allclose(q.values, model.r_sigma)


def test_greedy_policy_evaluation_recovers_optimal_q(chain):
    _, data = chain
    model = build_namdp(data, gaussian(0.3, data.box), ActionGrid.regular(data.box, 101), GAMMA)
    q_star, greedy = value_iteration(model)
    q_pi = policy_evaluation(model, greedy_policy(greedy, model.grid.size))
    np.testing.assert_allclose(q_pi.values, q_star.values, atol=1e-8)


def test_uniform_policy_on_bandit_averages_reward(bandit, bandit_grid):
    model = build_namdp(bandit, gaussian(0.5, bandit.box), bandit_grid, GAMMA)
    q = policy_evaluation(model, uniform_policy(model))
    assert state_values(model, q, uniform_policy(model))[(0.0,)] == pytest.approx(model.r_sigma.mean())


def test_policy_shape_is_checked(bandit, bandit_grid):
    model = build_namdp(bandit, gaussian(0.5, bandit.box), bandit_grid, GAMMA)
    with pytest.raises(ValueError, match="shape"):
        policy_evaluation(model, np.ones((1, 3)) / 3.0)


# --- Penalized regression ---


def test_regression_on_bandit_equals_model_reward(bandit, bandit_grid):
    spec = gaussian(0.3, bandit.box)
    model = build_namdp(bandit, spec, bandit_grid, GAMMA)
    q = pani_exact_regression(bandit, spec, bandit_grid, uniform_policy(model), {(0.0,): 123.0}, GAMMA)
    np.testing.assert_array_equal(q.values, model.r_sigma)


def test_regression_reproduces_policy_evaluation_on_chain(chain):
    _, data = chain
    spec = gaussian(0.3, data.box)
    grid = ActionGrid.regular(data.box, 101)
    model = build_namdp(data, spec, grid, GAMMA)
    policy = uniform_policy(model)
    q_eval = policy_evaluation(model, policy)
    q_reg = pani_exact_regression(data, spec, grid, policy, q_eval, GAMMA)
    assert np.max(np.abs(q_reg.values - q_eval.values)) <= 1e-8


def test_regression_at_dataset_actions_with_vanishing_noise():
    """Constant rewards and a' on dataset actions: target is r + gamma * v_next."""
    rows = [
        Transition(s=[0.0], a=[-0.5], r=1.0, s2=[0.0], done=False),
        Transition(s=[0.0], a=[0.5], r=1.0, s2=[0.0], done=False),
    ]
    data = TransitionDataset.from_transitions(rows, box=ActionBox.symmetric(1.0))
    grid = ActionGrid.from_points([-0.5, 0.5], data.box)
    q = pani_exact_regression(data, gaussian(1e-4, data.box), grid, np.full((1, 2), 0.5), {(0.0,): 2.0}, GAMMA)
    np.testing.assert_allclose(q.values, [[2.8, 2.8]])


# --- Limit model ---


def test_limit_model_ground_truth(bandit, bandit_grid):
    model = build_limit_namdp(bandit, bandit_grid, GAMMA)
    q, _ = value_iteration(model)
    assert q.values[0, bandit_grid.nearest_index([0.0])] == pytest.approx(-0.5, abs=1e-6)
    assert q.values[0, bandit_grid.nearest_index([1.0])] == pytest.approx(1.0, abs=1e-6)
    assert q.values[0, bandit_grid.nearest_index([-1.0])] == pytest.approx(0.0, abs=1e-6)


def test_tiny_sigma_converges_to_limit_model(bandit, bandit_grid):
    limit = build_limit_namdp(bandit, bandit_grid, GAMMA)
    model = build_namdp(bandit, gaussian(1e-6, bandit.box), bandit_grid, GAMMA)
    assert np.max(np.abs(model.r_sigma - limit.r_sigma)) <= 1e-4


def test_bellman_gap_shrinks_with_sigma(bandit, bandit_grid):
    limit = build_limit_namdp(bandit, bandit_grid, GAMMA)
    q_limit, _ = value_iteration(limit)
    assert bellman_gap(limit, limit, q_limit) == 0.0
    gaps = []
    for sigma in (0.5, 0.25, 0.1, 0.05, 0.01):
        model = build_namdp(bandit, gaussian(sigma, bandit.box), bandit_grid, GAMMA)
        gaps.append(bellman_gap(model, limit, q_limit))
        q_sigma, _ = value_iteration(model)
        assert np.max(np.abs(q_sigma.values - q_limit.values)) <= gaps[-1] / (1.0 - GAMMA) + 1e-9
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:], strict=False))


# --- Returns and the error bound ---


def test_absorbing_state_return_is_geometric_series():
    mdp = FiniteMdp(rewards=[[1.0]], transitions=[[[1.0]]], gamma=GAMMA)
    eta, visitation = expected_return(mdp, [[1.0]])
    assert eta == pytest.approx(1.0 / (1.0 - GAMMA))
    assert visitation.total == pytest.approx(1.0)


def test_two_state_cycle_return():
    mdp = FiniteMdp(rewards=[[0.0], [1.0]], transitions=[[[0.0, 1.0]], [[1.0, 0.0]]], gamma=0.5)
    eta, visitation = expected_return(mdp, [[1.0], [1.0]], start=[1.0, 0.0])
    assert eta == pytest.approx(2.0 / 3.0)
    assert visitation.total == pytest.approx(1.0)


def test_identical_models_have_zero_gap():
    transitions = np.zeros((3, 2, 3))
    for s in range(3):
        transitions[s, 0, s] = 1.0
        transitions[s, 1, (s + 1) % 3] = 1.0
    mdp = FiniteMdp(rewards=[[0.0, 1.0], [0.5, -0.5], [1.0, 0.0]], transitions=transitions, gamma=GAMMA)
    data = finite_mdp_dataset(mdp, samples_per_pair=1)
    grid = ActionGrid.from_points(finite_mdp_action_values(2), data.box)
    namdp = build_limit_namdp(data, grid, GAMMA)
    report = error_bound_report(mdp, namdp, np.full((3, 2), 0.5))
    assert report.lhs == pytest.approx(0.0, abs=1e-12)
    assert report.eps_r == pytest.approx(0.0, abs=1e-12)
    assert report.eps_m == pytest.approx(0.0, abs=1e-12)
    assert report.holds


def test_bound_holds_on_random_mdp():
    mdp = random_finite_mdp(4, 3, gamma=GAMMA, seed=0)
    data = finite_mdp_dataset(mdp, samples_per_pair=3, seed=0)
    grid = ActionGrid.from_points(finite_mdp_action_values(3), data.box)
    namdp = build_namdp(data, gaussian(0.3, data.box), grid, GAMMA)
    report = error_bound_report(mdp, namdp, np.full((4, 3), 1.0 / 3.0))
    assert report.lhs <= report.eps_r + report.eps_m
    assert report.visitation.sum() == pytest.approx(1.0)


def test_model_mismatch_is_linear_in_reward_bound():
    assert model_mismatch_bound(2.0, 0.1, GAMMA) == pytest.approx(2.0 * model_mismatch_bound(1.0, 0.1, GAMMA))


def test_misaligned_models_are_rejected(bandit, bandit_grid):
    mdp = random_finite_mdp(2, 2, gamma=GAMMA, seed=0)
    namdp = build_namdp(bandit, gaussian(0.3, bandit.box), bandit_grid, GAMMA)
    with pytest.raises(ModelConstructionError):
        error_bound_report(mdp, namdp, np.full((2, 2), 0.5))


# --- No OOD ---


def test_limit_greedy_on_bandit_picks_data(bandit, bandit_grid):
    result = no_ood_check(build_limit_namdp(bandit, bandit_grid, GAMMA), bandit, epsilon=1e-12)
    assert result.passed
    assert result.worst_distance == pytest.approx(0.0, abs=1e-20)


def test_small_noise_chain_stays_on_support(chain):
    _, data = chain
    model = build_namdp(data, gaussian(1e-4, data.box), ActionGrid.regular(data.box, 101), GAMMA)
    assert no_ood_check(model, data, epsilon=1e-2).passed


def test_large_noise_reports_its_distance(bandit, bandit_grid):
    result = no_ood_check(build_namdp(bandit, gaussian(1.0, bandit.box), bandit_grid, GAMMA), bandit, 1e-2)
    assert math.isfinite(result.worst_distance)
    assert set(result.distances) == {"(0.0,)"}


# --- Modes ---


@pytest.mark.parametrize(
    ("values", "expected"),
    [([1.0, 1.0, 1.0], 1), ([0.0, 1.0, 1.0, 0.0], 1), ([1.0, 0.0, 1.0], 2), ([0.0, 1.0, 2.0], 1)],
)
def test_plateau_maxima(values, expected):
    assert count_plateau_maxima(values) == expected


@pytest.mark.parametrize(
    ("family", "variance", "modes"),
    [
        (NoiseFamily.GAUSSIAN, 0.5, 2),
        (NoiseFamily.GAUSSIAN, 1.0, 1),
        (NoiseFamily.LAPLACE, 1.0, 2),
    ],
)
def test_mode_counts_on_bandit(bandit, bandit_grid, family, variance, modes):
    spec = NoiseSpec(family=family, sigma=math.sqrt(variance), box=bandit.box)
    assert count_modes(bandit, spec, bandit_grid) == modes


def test_mode_curve_agrees_with_fine_grid(bandit, bandit_grid):
    curve = mode_curve(bandit, NoiseFamily.GAUSSIAN, [math.sqrt(v) for v in (0.5, 0.75, 1.0)], bandit_grid)
    assert curve["modes"].tolist() == [2, 2, 1]
    assert curve["modes_fine_grid"].tolist() == curve["modes"].tolist()


def test_modes_need_one_dimensional_actions():
    data = gen_rings(points_per_ring=4)
    with pytest.raises(ValueError, match="1-D"):
        count_modes(data, gaussian(0.3, data.box), ActionGrid.regular(data.box, 5))


# --- Exports ---


def test_model_csv_rows_and_echo_line(chain, tmp_path):
    _, data = chain
    grid = ActionGrid.regular(data.box, 21)
    model = build_namdp(data, gaussian(0.3, data.box), grid, GAMMA)
    q, _ = value_iteration(model)
    path = export_model_csv(model, q, tmp_path / "model.csv", "abc123")
    assert path.read_text().splitlines()[0] == f"{CONFIG_HASH_PREFIX}abc123"
    frame = read_echo_csv(path)
    assert len(frame) == model.n_states * grid.size
    assert list(frame.columns) == ["state", "a1", "r_sigma", "q"]
