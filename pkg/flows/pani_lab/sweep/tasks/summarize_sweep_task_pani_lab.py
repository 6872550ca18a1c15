# flows/pani_lab/sweep/tasks/summarize_sweep_task_pani_lab.py
from pathlib import Path
from typing import Any

from prefect import get_run_logger, task
from prefect.cache_policies import NO_CACHE

from pani_lab.core.sweep import summarize_sweep


@task(name="Summarize Sweep (PANI Lab)", log_prints=True, cache_policy=NO_CACHE)
def summarize_sweep_task(results: list[dict[str, Any]], out_dir: str, digest: str) -> dict[str, Any]:
    logger = get_run_logger()
    logger.info(f"Summarising {len(results)} sweep cell results into {out_dir}")
    try:
        return summarize_sweep(results, Path(out_dir), digest)
    except Exception as e:
        logger.error(f"Error summarising sweep: {e}", exc_info=True)
        raise
