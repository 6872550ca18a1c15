# flows/pani_lab/verification/tasks/run_verification_suite_task_pani_lab.py
from typing import Any

from prefect import get_run_logger, task
from prefect.cache_policies import NO_CACHE

from pani_lab.core.experiment_models import VerifyConfig
from pani_lab.core.verification import run_suite


@task(name="Run Verification Suite (PANI Lab)", log_prints=True, cache_policy=NO_CACHE)
def run_verification_suite_task(suite: str, verify_config: dict[str, Any]) -> dict[str, Any]:
    """
    Prefect task wrapper around core.verification.run_suite.
    Returns the suite report as a JSON-ready dict.
    """
    logger = get_run_logger()
    logger.info(f"Starting verification suite '{suite}'")
    try:
        report = run_suite(suite, VerifyConfig.model_validate(verify_config))
    except Exception as e:
        logger.error(f"Verification suite '{suite}' raised: {e}", exc_info=True)
        raise
    logger.info(f"Finished suite '{suite}': passed={report.passed} ({len(report.checks)} checks)")
    return report.model_dump(mode="json")
