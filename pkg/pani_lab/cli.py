# pani_lab/cli.py
"""
``pani-lab`` command line: dataset generation, NAMDP solving, verification,
training, evaluation and sweeps. Every command writes a config echo next to
its outputs; CSVs carry the echo hash on their first line.

Exit codes: 0 success, 1 failed check, 2 bad input.
"""
from collections.abc import Iterator
from contextlib import contextmanager
from enum import StrEnum
import json
from pathlib import Path
from typing import Any

from loguru import logger
import numpy as np
import pandas as pd
from pydantic import ValidationError
import typer

from pani_lab import plots
from pani_lab.common.utils import generate_sha256_for_file, write_config_echo, write_csv_with_echo
from pani_lab.config import configure_logging, get_settings
from pani_lab.core.dataset import load_jsonl, save_jsonl
from pani_lab.core.exceptions import PaniLabError
from pani_lab.core.experiment_models import (
    DatasetKind,
    ExperimentConfig,
    load_experiment_config,
)
from pani_lab.core.namdp import (
    ActionGrid,
    build_limit_namdp,
    build_namdp,
    count_modes,
    export_model_csv,
    export_modes_csv,
    greedy_policy,
    mode_curve,
    qgrid_to_frame,
    state_values,
    value_iteration,
)
from pani_lab.core.noise import NoiseFamily
from pani_lab.core.verification import SUITES, expand_suites, run_suite
from pani_lab.learn.agents import Algorithm
from pani_lab.learn.diagnostics import (
    agent_policy,
    band_policy,
    evaluate_policy,
    ood_overestimation_probability,
    q_landscape,
)
from pani_lab.learn.train import load_agent, save_agent, train as run_training

app = typer.Typer(
    help="Numerical lab for penalized action noise injection in offline RL.",
    no_args_is_help=True,
)
app.add_typer(plots.app, name="plots")

Suite = StrEnum("Suite", {name: name for name in [*SUITES, "all"]})


class EvalTarget(StrEnum):
    OOD = "ood"
    LANDSCAPE = "landscape"
    RETURN = "return"


@contextmanager
def _bad_input_exits() -> Iterator[None]:
    """Domain and validation errors become exit code 2."""
    try:
        yield
    except (PaniLabError, ValidationError, ValueError, FileNotFoundError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        raise typer.Exit(code=2) from e


def _out_dir(config: ExperimentConfig, out: Path | None, command: str) -> Path:
    if out is not None:
        return out
    return (config.output_dir or get_settings().output_dir) / command


def _write_json(payload: dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return path


def _dataset_echo(path: Path) -> dict[str, Any]:
    return {"path": str(path), "sha256": generate_sha256_for_file(Path(path))}


@app.callback()
def main(log_level: str | None = None):
    configure_logging(log_level)


@app.command("gen-data")
def gen_data(
    kind: DatasetKind,
    seed: int | None = None,
    config: Path | None = None,
    out: Path | None = None,
):
    """Write a toy dataset as JSONL (header line, then one transition per line)."""
    with _bad_input_exits():
        cfg = load_experiment_config(config).with_overrides("dataset", kind=kind)
        seed = cfg.seed if seed is None else seed
        dataset, _ = cfg.dataset.generate(seed=seed)
        path = out or _out_dir(cfg, None, "data") / f"{kind}_seed{seed}.jsonl"
        save_jsonl(dataset, path)
        write_config_echo({**cfg.echo("dataset"), "seed": seed}, path.parent)
    logger.success(f"{kind}: {len(dataset)} transitions -> {path}")


@app.command()
def namdp(
    dataset_path: Path,
    family: NoiseFamily | None = None,
    sigma: float | None = None,
    log_sigma: float | None = None,
    grid_points: int | None = None,
    gamma: float | None = None,
    out: Path | None = None,
    config: Path | None = None,
):
    """
    Build and solve the noisy-action MDP of a dataset on an action grid.
    Writes model.csv (R_sigma and Q* per state x grid point), modes.csv and summary.json.
    """
    with _bad_input_exits():
        cfg = (
            load_experiment_config(config)
            .with_noise(family=family, sigma=sigma, log_sigma=log_sigma)
            .with_overrides("namdp", grid_points=grid_points, gamma=gamma)
        )
        dataset = load_jsonl(dataset_path)
        out_dir = _out_dir(cfg, out, "namdp")
        grid = ActionGrid.regular(dataset.box, cfg.namdp.grid_points)
        spec = cfg.noise.to_spec(dataset.box)
        if spec is None:
            model = build_limit_namdp(dataset, grid, cfg.namdp.gamma)
        else:
            model = build_namdp(dataset, spec, grid, cfg.namdp.gamma)
        q, greedy = value_iteration(model, tol=cfg.namdp.tol, max_iter=cfg.namdp.max_iter)
        digest = write_config_echo({**cfg.echo("noise", "namdp"), "dataset": _dataset_echo(dataset_path)}, out_dir)
        export_model_csv(model, q, out_dir / "model.csv", digest)
        summary: dict[str, Any] = {
            "config_sha256": digest,
            "family": str(model.family) if model.family else "limit",
            "sigma": model.sigma,
            "gamma": model.gamma,
            "n_states": model.n_states,
            "grid_points": grid.size,
            "sweeps": len(q.residuals),
            "greedy_action": {str(k): grid.points[greedy[s]].tolist() for s, k in enumerate(model.state_keys)},
            "v_star": {str(k): v for k, v in state_values(model, q, greedy_policy(greedy, grid.size)).items()},
        }
        if dataset.action_dim == 1:
            families = dict.fromkeys([*([spec.family] if spec else []), NoiseFamily.GAUSSIAN, NoiseFamily.LAPLACE])
            sigmas = [float(np.sqrt(v)) for v in cfg.namdp.mode_variances]
            curve = pd.concat(
                [mode_curve(dataset, fam, sigmas, grid, cfg.noise.quadrature_nodes) for fam in families],
                ignore_index=True,
            )
            export_modes_csv(curve, out_dir / "modes.csv", digest)
            if spec is not None:
                summary["modes"] = count_modes(dataset, spec, grid)
        _write_json(summary, out_dir / "summary.json")
    logger.success(f"NAMDP with {model.n_states} states x {grid.size} grid points written to {out_dir}")


@app.command()
def verify(
    suite: Suite,
    seeds: int | None = None,
    gap_tol: float | None = None,
    limit_max_k: int | None = None,
    limit_tol: float | None = None,
    noood_epsilon: float | None = None,
    out: Path | None = None,
    config: Path | None = None,
):
    """Run a verification suite (or all of them); exits 1 when any check fails."""
    with _bad_input_exits():
        cfg = load_experiment_config(config).with_overrides(
            "verify",
            seeds=seeds,
            gap_tol=gap_tol,
            limit_max_k=limit_max_k,
            limit_tol=limit_tol,
            noood_epsilon=noood_epsilon,
        )
        out_dir = _out_dir(cfg, out, "verify")
        digest = write_config_echo(cfg.echo("verify"), out_dir)
        reports = [run_suite(name, cfg.verify) for name in expand_suites(str(suite))]
    passed = all(r.passed for r in reports)
    payload = {
        "config_sha256": digest,
        "passed": passed,
        "suites": [r.model_dump(mode="json", exclude={"elapsed_s"}) for r in reports],
    }
    path = _write_json(payload, out_dir / "verify_report.json")
    for report in reports:
        failed = [c.name for c in report.checks if not c.passed]
        typer.echo(f"{report.suite}: {len(report.checks) - len(failed)}/{len(report.checks)} checks passed")
    if not passed:
        logger.error(f"Verification failed; see {path}")
        raise typer.Exit(code=1)
    logger.success(f"All checks passed; report at {path}")


@app.command()
def train(
    dataset_path: Path,
    algorithm: Algorithm | None = None,
    family: NoiseFamily | None = None,
    sigma: float | None = None,
    log_sigma: float | None = None,
    no_noise: bool = typer.Option(False, "--no-noise", help="Train without action noise or penalty."),
    steps: int | None = None,
    batch: int | None = None,
    hidden_dim: int | None = None,
    hidden_layers: int | None = None,
    seed: int | None = None,
    penalty_coef: float | None = None,
    bc_alpha: float | None = None,
    stochastic_actor: bool = False,
    eval_chain: bool = False,
    out: Path | None = None,
    config: Path | None = None,
):
    """Train TD3-AN or IQL-AN; writes metrics.csv, agent.npz and config_echo.yaml."""
    with _bad_input_exits():
        cfg = load_experiment_config(config).with_noise(
            family=family, sigma=sigma, log_sigma=log_sigma, enabled=False if no_noise else None
        )
        cfg = cfg.with_overrides(
            "train",
            algorithm=algorithm,
            steps=steps,
            batch=batch,
            hidden_dim=hidden_dim,
            hidden_layers=hidden_layers,
            seed=seed,
            penalty_coef=penalty_coef,
            bc_alpha=bc_alpha,
            stochastic_actor=True if stochastic_actor else None,
        )
        dataset = load_jsonl(dataset_path)
        noised = cfg.train.model_copy(update={"noise": cfg.noise.to_spec(dataset.box)})
        cfg = cfg.model_copy(update={"train": noised})
        simulator = None
        if eval_chain:
            simulator = cfg.dataset.model_copy(update={"kind": DatasetKind.CHAIN}).simulator()
        out_dir = _out_dir(cfg, out, "train")
        echo = {**cfg.echo("noise", "train"), "dataset": _dataset_echo(dataset_path)}
        digest = write_config_echo(echo, out_dir)
        metrics_path = out_dir / "metrics.csv"
        metrics_path.unlink(missing_ok=True)
        result = run_training(
            dataset, cfg.train, simulator=simulator, metrics_path=metrics_path, digest=digest, progress=True
        )
        save_agent(result.agent, out_dir / "agent.npz", echo=echo)
    logger.success(f"Trained {cfg.train.algorithm} for {result.agent.step} steps -> {out_dir}")


@app.command("eval")
def eval_agent(
    agent_path: Path,
    dataset_path: Path,
    what: EvalTarget,
    n_samples: int = 200_000,
    state: list[float] | None = None,
    grid_points: int | None = None,
    episodes: int = 10,
    seed: int = 0,
    out: Path | None = None,
    config: Path | None = None,
):
    """
    Evaluate a trained agent: OOD overestimation probability, the Q landscape
    at one state (landscape.csv with columns a1[,a2],q) or chain returns.
    """
    with _bad_input_exits():
        cfg = load_experiment_config(config)
        agent = load_agent(agent_path)
        dataset = load_jsonl(dataset_path)
        out_dir = _out_dir(cfg, out, "eval")
        rng = np.random.default_rng(seed)
        echo = {
            "agent": _dataset_echo(agent_path),
            "dataset": _dataset_echo(dataset_path),
            "what": str(what),
            "n_samples": n_samples,
            "state": state,
            "grid_points": grid_points,
            "episodes": episodes,
            "seed": seed,
        }
        digest = write_config_echo(echo, out_dir)
        match what:
            case EvalTarget.OOD:
                estimate = ood_overestimation_probability(agent, dataset, n_samples, rng)
                path = _write_json({"config_sha256": digest, **estimate.model_dump()}, out_dir / "ood.json")
            case EvalTarget.LANDSCAPE:
                at = np.asarray(state if state else dataset.states[0], dtype=float)
                if at.shape != (dataset.state_dim,):
                    raise ValueError(f"--state needs {dataset.state_dim} values, got {at.size}")
                grid = ActionGrid.regular(agent.box, grid_points)
                frame = qgrid_to_frame(q_landscape(agent, at, grid), grid)
                path = write_csv_with_echo(frame, out_dir / "landscape.csv", digest)
            case EvalTarget.RETURN:
                simulator = cfg.dataset.model_copy(update={"kind": DatasetKind.CHAIN}).simulator()
                result = evaluate_policy(simulator, agent_policy(agent), episodes, rng)
                band = evaluate_policy(simulator, band_policy(simulator), 1)
                payload = {
                    "config_sha256": digest,
                    **result.model_dump(),
                    "band_policy_return": band.mean_discounted,
                    "optimal_return": simulator.optimal_return(),
                }
                path = _write_json(payload, out_dir / "return.json")
    logger.success(f"{what} evaluation written to {path}")


@app.command()
def sweep(
    config: Path | None = None,
    out: Path | None = None,
    workers: int | None = None,
    resume: bool = False,
    steps: int | None = None,
):
    """Noise family x log sigma x seed grid, one run directory per cell, run as a Prefect flow."""
    from flows.pani_lab.sweep_flow_pani_lab import run_sweep

    with _bad_input_exits():
        cfg = load_experiment_config(config).with_overrides(
            "sweep", resume=True if resume else None, steps=steps
        )
        if workers is not None and workers < 1:
            raise ValueError("--workers must be at least 1")
    result = run_sweep(cfg, out_dir=out, workers=workers)
    typer.echo(json.dumps(result["summary"], indent=2, sort_keys=True, default=str))
    if result["status"] != "COMPLETED_SUCCESSFULLY":
        logger.error(f"Sweep finished with failed cells; see {result['out_dir']}")
        raise typer.Exit(code=1)
    logger.success(f"Sweep complete: {result['out_dir']}")


if __name__ == "__main__":
    app()
