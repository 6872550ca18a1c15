# flows/pani_lab/sweep/tasks/run_sweep_cell_task_pani_lab.py
from pathlib import Path
from typing import Any

from prefect import get_run_logger, task
from prefect.cache_policies import NO_CACHE

from pani_lab.core.experiment_models import ExperimentConfig
from pani_lab.core.sweep import SweepCell, run_sweep_cell


@task(name="Run Sweep Cell (PANI Lab)", log_prints=True, cache_policy=NO_CACHE, retries=0)
def run_sweep_cell_task(cell: dict[str, Any], experiment: dict[str, Any], out_root: str) -> dict[str, Any]:
    """
    Prefect task wrapper around core.sweep.run_sweep_cell. Each cell writes
    only into its own run directory, so cells may run concurrently.
    """
    logger = get_run_logger()
    sweep_cell = SweepCell.model_validate(cell)
    config = ExperimentConfig.model_validate(experiment)
    logger.info(f"Starting sweep cell '{sweep_cell.name}'")
    try:
        result = run_sweep_cell(sweep_cell, config.dataset, config.train, config.sweep, Path(out_root))
    except Exception as e:
        logger.error(f"Sweep cell '{sweep_cell.name}' failed: {e}", exc_info=True)
        raise
    logger.info(f"Finished sweep cell '{sweep_cell.name}' with status {result['status']}")
    return result
