# pani_lab/core/sweep.py
"""
Noise-family x log-sigma x seed sweeps: one isolated run directory per cell,
then per-cell means with standard errors and a worst-sigma robustness table.
"""
import json
import math
from pathlib import Path
from typing import Any

from loguru import logger
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from ..common.utils import sanitize_filename, write_config_echo, write_csv_with_echo
from ..learn.agents import TrainConfig
from ..learn.diagnostics import agent_policy, evaluate_policy, ood_overestimation_probability
from ..learn.train import save_agent, train
from .experiment_models import DatasetConfig, SweepConfig
from .noise import NoiseFamily, NoiseSpec

RUN_SUMMARY = "run_summary.json"
SWEEP_OOD_SAMPLES = 20_000
STATUS_COMPLETED = "COMPLETED"
STATUS_SKIPPED = "SKIPPED"


class SweepCell(BaseModel):
    family: NoiseFamily
    log_sigma: float
    seed: int

    model_config = ConfigDict(frozen=True)

    @property
    def name(self) -> str:
        return sanitize_filename(f"{self.family}_logsig{self.log_sigma:g}_seed{self.seed}")


def expand_cells(sweep: SweepConfig) -> list[SweepCell]:
    return [
        SweepCell(family=family, log_sigma=log_sigma, seed=seed)
        for family in sweep.families
        for log_sigma in sweep.log_sigmas
        for seed in sweep.seeds
    ]


def run_sweep_cell(
    cell: SweepCell,
    dataset_cfg: DatasetConfig,
    train_cfg: TrainConfig,
    sweep: SweepConfig,
    out_root: Path,
) -> dict[str, Any]:
    """Trains one cell into ``out_root/runs/<cell>``; with ``resume`` a finished cell is read back."""
    run_dir = Path(out_root) / "runs" / cell.name
    summary_path = run_dir / RUN_SUMMARY
    if sweep.resume and summary_path.is_file():
        logger.info(f"Skipping finished cell {cell.name}")
        with open(summary_path, encoding="utf-8") as f:
            return {**json.load(f), "status": STATUS_SKIPPED}
    dataset, simulator = dataset_cfg.generate(seed=cell.seed)
    spec = NoiseSpec.from_log_sigma(cell.family, cell.log_sigma, dataset.box)
    config = TrainConfig.model_validate(
        {**train_cfg.model_dump(), "noise": spec.model_dump(), "seed": cell.seed,
         "steps": sweep.steps, "algorithm": sweep.algorithm}
    )
    echo = {"cell": cell.model_dump(mode="json"), "dataset": dataset_cfg.model_dump(mode="json"),
            "train": config.model_dump(mode="json")}
    digest = write_config_echo(echo, run_dir)
    result = train(dataset, config, simulator=simulator, metrics_path=run_dir / "metrics.csv", digest=digest)
    save_agent(result.agent, run_dir / "agent.npz", echo=echo)
    mean_return = math.nan
    if simulator is not None:
        mean_return = evaluate_policy(simulator, agent_policy(result.agent), sweep.eval_episodes).mean_discounted
    ood = ood_overestimation_probability(
        result.agent, dataset, SWEEP_OOD_SAMPLES, np.random.default_rng(cell.seed)
    )
    summary = {
        **cell.model_dump(mode="json"),
        "steps": config.steps,
        "return": mean_return,
        "ood_probability": ood.probability,
        "config_sha256": digest,
    }
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    logger.success(f"Cell {cell.name}: return={mean_return:.4f}, ood={ood.probability:.4f}")
    return {**summary, "status": STATUS_COMPLETED}


def _standard_error(values: pd.Series) -> float:
    n = values.count()
    return float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def summarize_sweep(results: list[dict[str, Any]], out_dir: Path, digest: str) -> dict[str, Any]:
    """Writes summary.csv (per family x log sigma) and robustness.csv (worst sigma per family)."""
    finished = [r for r in results if r.get("status") in (STATUS_COMPLETED, STATUS_SKIPPED)]
    if not finished:
        raise ValueError("no finished sweep cells to summarise")
    frame = pd.DataFrame(finished)
    grouped = frame.groupby(["family", "log_sigma"], sort=True)
    summary = grouped.agg(
        n_seeds=("seed", "count"),
        mean_return=("return", "mean"),
        se_return=("return", _standard_error),
        mean_ood_probability=("ood_probability", "mean"),
        se_ood_probability=("ood_probability", _standard_error),
    ).reset_index()
    rows = []
    for family, block in summary.groupby("family", sort=True):
        valid = block.dropna(subset=["mean_return"])
        if valid.empty:
            rows.append({"family": family, "worst_log_sigma": math.nan,
                         "worst_mean_return": math.nan, "worst_se_return": math.nan})
            continue
        row = valid.loc[valid["mean_return"].idxmin()]
        rows.append({"family": family, "worst_log_sigma": float(row["log_sigma"]),
                     "worst_mean_return": float(row["mean_return"]), "worst_se_return": float(row["se_return"])})
    robustness = pd.DataFrame(rows)
    worst_by_family = dict(zip(robustness["family"], robustness["worst_mean_return"], strict=True))
    hybrid_robust = None
    comparable = all(math.isfinite(v) for v in worst_by_family.values())
    if comparable and NoiseFamily.HYBRID.value in worst_by_family and len(worst_by_family) > 1:
        hybrid = worst_by_family[NoiseFamily.HYBRID.value]
        hybrid_robust = all(hybrid >= v for k, v in worst_by_family.items() if k != NoiseFamily.HYBRID.value)
    robustness["hybrid_at_least_baselines"] = hybrid_robust
    write_csv_with_echo(summary, Path(out_dir) / "summary.csv", digest)
    write_csv_with_echo(robustness, Path(out_dir) / "robustness.csv", digest)
    if hybrid_robust is False:
        logger.warning("Hybrid's worst-sigma return is below a baseline's (soft criterion)")
    return {
        "cells": len(finished),
        "summary_rows": len(summary),
        "hybrid_at_least_baselines": hybrid_robust,
        "worst_mean_return": {k: float(v) for k, v in worst_by_family.items()},
    }
