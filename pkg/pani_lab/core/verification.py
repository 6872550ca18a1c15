# pani_lab/core/verification.py
"""
Numerical checks behind ``pani-lab verify``.

Each suite returns a ``SuiteReport`` whose checks record the computed value,
the threshold it was held to and any supporting quantities.
"""
from collections.abc import Callable
import math
import time
from typing import Any

from loguru import logger
import numpy as np
from pydantic import BaseModel, Field, computed_field
from tqdm import tqdm

from .dataset import (
    finite_mdp_action_values,
    finite_mdp_dataset,
    gen_bandit1d,
    gen_chain_env,
    random_finite_mdp,
)
from .experiment_models import VerifyConfig
from .namdp import (
    ActionGrid,
    bellman_gap,
    build_limit_namdp,
    build_namdp,
    error_bound_report,
    greedy_policy,
    mode_curve,
    nearest_set_identity_gap,
    no_ood_check,
    pani_exact_regression,
    policy_evaluation,
    uniform_policy,
    value_iteration,
)
from .noise import NoiseFamily, NoiseSpec

IDENTITY_TOL = 1e-9
MONOTONE_SLACK = 1e-12


class CheckResult(BaseModel):
    name: str
    passed: bool
    value: float | None = None
    threshold: float | None = None
    details: dict[str, Any] = Field(default_factory=dict)


class SuiteReport(BaseModel):
    suite: str
    checks: list[CheckResult]
    elapsed_s: float = 0.0

    @computed_field
    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _at_most(name: str, value: float, threshold: float, **details: Any) -> CheckResult:
    return CheckResult(name=name, passed=bool(value <= threshold), value=value, threshold=threshold, details=details)


def _gaussian(sigma: float, box) -> NoiseSpec:
    return NoiseSpec(family=NoiseFamily.GAUSSIAN, sigma=sigma, box=box)


def _non_increasing(values: list[float]) -> bool:
    return all(b <= a + MONOTONE_SLACK for a, b in zip(values, values[1:], strict=False))


def verify_theorem1(cfg: VerifyConfig) -> list[CheckResult]:
    """Closed-form penalized regression equals NAMDP policy evaluation."""
    _, chain = gen_chain_env(seed=0)
    bandit = gen_bandit1d()
    cases = [
        ("bandit1d", bandit, ActionGrid.regular(bandit.box, cfg.bandit_grid_points)),
        ("chain", chain, ActionGrid.regular(chain.box, cfg.chain_grid_points)),
    ]
    checks = []
    for label, dataset, grid in cases:
        spec = _gaussian(cfg.theorem1_sigma, dataset.box)
        model = build_namdp(dataset, spec, grid, cfg.gamma)
        _, greedy = value_iteration(model)
        for policy_name, policy in (("uniform", uniform_policy(model)), ("greedy", greedy_policy(greedy, grid.size))):
            q_eval = policy_evaluation(model, policy)
            q_reg = pani_exact_regression(dataset, spec, grid, policy, q_eval, cfg.gamma)
            gap = float(np.max(np.abs(q_reg.values - q_eval.values)))
            checks.append(_at_most(f"{label}/{policy_name}", gap, cfg.gap_tol, sweeps=len(q_eval.residuals)))
    return checks


def verify_limits(cfg: VerifyConfig) -> list[CheckResult]:
    """sigma -> 0 convergence to the nearest-set model, plus its closed-form values on bandit1d."""
    dataset = gen_bandit1d()
    grid = ActionGrid.regular(dataset.box, cfg.bandit_grid_points)
    limit = build_limit_namdp(dataset, grid, cfg.gamma)
    q_limit, greedy = value_iteration(limit)
    distances, weight_distances, gaps = [], [], []
    for k in range(0, cfg.limit_max_k + 1):
        model = build_namdp(dataset, _gaussian(2.0**-k, dataset.box), grid, cfg.gamma)
        distances.append(float(np.max(np.abs(model.r_sigma - limit.r_sigma))))
        weight_distances.append(
            max(float(np.max(np.abs(w - w_lim))) for w, w_lim in zip(model.weights, limit.weights, strict=True))
        )
        gaps.append(bellman_gap(model, limit, q_limit))
    checks = [
        CheckResult(
            name="reward_monotone",
            passed=_non_increasing(distances),
            details={"distances": distances, "bellman_gaps": gaps},
        ),
        CheckResult(
            name="weights_monotone",
            passed=_non_increasing(weight_distances),
            details={"distances": weight_distances},
        ),
        _at_most("reward_final", distances[-1], cfg.limit_tol, sigma=2.0**-cfg.limit_max_k),
    ]
    chosen = grid.points[greedy]
    snap = float(np.abs(chosen[:, None, :] - dataset.actions[None, :, :]).max(axis=-1).min(axis=1).max())
    checks.append(_at_most("greedy_on_data", snap, grid.max_spacing))
    q_uniform = policy_evaluation(limit, uniform_policy(limit))
    checks.append(_at_most("nearest_set_identity", nearest_set_identity_gap(limit, q_uniform, dataset), IDENTITY_TOL))
    for target, expected in ((0.0, -0.5), (1.0, 1.0)):
        j = grid.nearest_index([target])
        value = float(q_limit.values[0, j])
        checks.append(
            _at_most(f"q_limit_at_{target:+.0f}", abs(value - expected), cfg.ground_truth_tol, q=value, expected=expected)
        )
    return checks


def verify_bound(cfg: VerifyConfig) -> list[CheckResult]:
    """Return-gap bound on random tabular MDPs, one check per seed."""
    checks = []
    for seed in tqdm(range(cfg.seeds), desc="bound", leave=False):
        rng = np.random.default_rng(seed)
        n_states = int(rng.integers(1, cfg.bound_max_states + 1))
        n_actions = int(rng.integers(1, cfg.bound_max_actions + 1))
        mdp = random_finite_mdp(n_states, n_actions, cfg.gamma, seed)
        dataset = finite_mdp_dataset(mdp, cfg.bound_samples_per_pair, seed)
        grid = ActionGrid.from_points(finite_mdp_action_values(n_actions), dataset.box)
        family = NoiseFamily.GAUSSIAN if rng.random() < 0.5 else NoiseFamily.LAPLACE
        spec = NoiseSpec(family=family, sigma=float(rng.uniform(0.05, 1.0)), box=dataset.box)
        namdp = build_namdp(dataset, spec, grid, cfg.gamma)
        policy = rng.dirichlet(np.ones(n_actions), size=n_states)
        report = error_bound_report(mdp, namdp, policy, strict=False)
        checks.append(
            CheckResult(
                name=f"seed_{seed}",
                passed=report.holds,
                value=report.lhs,
                threshold=report.eps_r + report.eps_m,
                details={"states": n_states, "actions": n_actions, "family": str(family),
                         "sigma": spec.sigma, **report.summary()},
            )
        )
    return checks


def verify_noood(cfg: VerifyConfig) -> list[CheckResult]:
    """Greedy NAMDP actions stay next to the data under small noise."""
    _, dataset = gen_chain_env(seed=0)
    grid = ActionGrid.regular(dataset.box, cfg.chain_grid_points)
    model = build_namdp(dataset, _gaussian(cfg.noood_sigma, dataset.box), grid, cfg.gamma)
    result = no_ood_check(model, dataset, cfg.noood_epsilon)
    return [
        CheckResult(
            name="chain_greedy_support",
            passed=result.passed,
            value=result.worst_distance,
            threshold=cfg.noood_epsilon + result.slack,
            details={"per_state": result.distances, "sigma": cfg.noood_sigma},
        )
    ]


def verify_modes(cfg: VerifyConfig) -> list[CheckResult]:
    """Mode counts of the noised bandit1d behaviour density, recounted on a finer grid."""
    dataset = gen_bandit1d()
    grid = ActionGrid.regular(dataset.box, cfg.bandit_grid_points)
    sigmas = [math.sqrt(v) for v in cfg.mode_variances]
    expected = {
        NoiseFamily.GAUSSIAN: list(cfg.expected_gaussian_modes),
        NoiseFamily.LAPLACE: [2] * len(sigmas),
    }
    checks = []
    for family, wanted in expected.items():
        curve = mode_curve(dataset, family, sigmas, grid)
        counts = [int(c) for c in curve["modes"]]
        fine = [int(c) for c in curve["modes_fine_grid"]]
        checks.append(
            CheckResult(
                name=f"{family}_modes",
                passed=counts == wanted and fine == wanted,
                details={"variances": list(cfg.mode_variances), "modes": counts, "modes_fine_grid": fine,
                         "expected": wanted},
            )
        )
    return checks


SUITES: dict[str, Callable[[VerifyConfig], list[CheckResult]]] = {
    "theorem1": verify_theorem1,
    "limits": verify_limits,
    "bound": verify_bound,
    "noood": verify_noood,
    "modes": verify_modes,
}


def expand_suites(name: str) -> list[str]:
    if name == "all":
        return list(SUITES)
    if name not in SUITES:
        raise ValueError(f"unknown suite '{name}'; choose from {', '.join([*SUITES, 'all'])}")
    return [name]


def run_suite(name: str, cfg: VerifyConfig) -> SuiteReport:
    start = time.perf_counter()
    checks = SUITES[name](cfg)
    report = SuiteReport(suite=name, checks=checks, elapsed_s=time.perf_counter() - start)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        logger.warning(f"Suite '{name}': {len(failed)}/{len(checks)} checks failed: {', '.join(failed[:10])}")
    else:
        logger.success(f"Suite '{name}': {len(checks)} checks passed in {report.elapsed_s:.2f}s")
    return report
