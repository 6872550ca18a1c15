# flows/pani_lab/sweep_flow_pani_lab.py
import os
from pathlib import Path
from typing import Any

from prefect import flow, get_run_logger, tags
from prefect.task_runners import ThreadPoolTaskRunner

from pani_lab.common.utils import write_config_echo
from pani_lab.config import get_settings
from pani_lab.core.artifact_creators import create_report_artifact, sweep_markdown
from pani_lab.core.experiment_models import ExperimentConfig
from pani_lab.core.sweep import STATUS_COMPLETED, STATUS_SKIPPED, expand_cells

from .config_loading import load_variable_config
from .sweep.tasks import run_sweep_cell_task, summarize_sweep_task


@flow(name="Noise Sweep Flow (PANI Lab)", log_prints=True)
def sweep_flow_pani_lab(
    experiment: dict[str, Any] | None = None,
    out_dir: str | None = None,
    config_variable_name: str | None = None,
    create_artifact: bool = True,
) -> dict[str, Any]:
    """
    Trains one agent per (noise family, log sigma, seed) cell, then writes
    summary.csv and robustness.csv. A failing cell is recorded and the
    remaining cells still run.
    """
    logger = get_run_logger()
    if experiment is None:
        experiment = load_variable_config(config_variable_name, logger)
    config = ExperimentConfig.model_validate(experiment)
    out_root = Path(out_dir) if out_dir else (config.output_dir or get_settings().output_dir) / "sweep"
    cells = expand_cells(config.sweep)
    logger.info(f"Starting Noise Sweep Flow: {len(cells)} cells into {out_root}")
    digest = write_config_echo(config.echo("dataset", "train", "sweep"), out_root)
    payload = config.model_dump(mode="json")

    results: list[dict[str, Any]] = []
    with tags("pani_lab", "sweep"):
        futures = [run_sweep_cell_task.submit(cell.model_dump(mode="json"), payload, str(out_root)) for cell in cells]
        for cell, future in zip(cells, futures, strict=True):
            try:
                results.append(future.result())
            except Exception as e:
                logger.error(f"Sweep cell '{cell.name}' failed: {e}")
                results.append({**cell.model_dump(mode="json"), "status": "FAILED", "error": str(e)})

        failed = [r for r in results if r["status"] not in (STATUS_COMPLETED, STATUS_SKIPPED)]
        status = "COMPLETED_WITH_ERRORS" if failed else "COMPLETED_SUCCESSFULLY"
        summary: dict[str, Any] = {}
        if len(failed) < len(results):
            summary = summarize_sweep_task(results, str(out_root), digest)
        else:
            logger.error("No sweep cell finished; nothing to summarise.")

        if create_artifact and summary:
            try:
                create_report_artifact(
                    prefix="sweep-summary",
                    identifier="pani-lab",
                    markdown_lines=sweep_markdown(summary, status),
                    description="Worst-sigma returns per noise family.",
                )
            except Exception as e:
                logger.warning(f"Sweep summary artifact not created: {e}")

    logger.info(f"Finished Noise Sweep Flow. Overall Status: {status}")
    return {"status": status, "out_dir": str(out_root), "summary": summary, "details": results}


def resolve_workers(config: ExperimentConfig, workers: int | None = None) -> int:
    """CLI flag, then the sweep section, then PANI_LAB_SWEEP_WORKERS, then the CPU count."""
    return workers or config.sweep.max_workers or get_settings().sweep_workers or os.cpu_count() or 1


def run_sweep(config: ExperimentConfig, out_dir: Path | None = None, workers: int | None = None) -> dict[str, Any]:
    """Runs the sweep flow with a thread pool sized by ``resolve_workers``."""
    n_workers = resolve_workers(config, workers)
    sized = sweep_flow_pani_lab.with_options(task_runner=ThreadPoolTaskRunner(max_workers=n_workers))
    return sized(
        experiment=config.model_dump(mode="json"),
        out_dir=str(out_dir) if out_dir else None,
    )


if __name__ == "__main__":
    print(run_sweep(ExperimentConfig()))
