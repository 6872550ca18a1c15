# flows/pani_lab/verification/tasks/create_verification_report_artifact_task_pani_lab.py
from typing import Any

from prefect import get_run_logger, task

from pani_lab.core.artifact_creators import create_report_artifact, verification_markdown


@task(name="Create Verification Report Artifact (PANI Lab)", log_prints=True)
def create_verification_report_artifact_task(reports: list[dict[str, Any]], status: str) -> str:
    logger = get_run_logger()
    try:
        key = create_report_artifact(
            prefix="verification-summary",
            identifier="pani-lab",
            markdown_lines=verification_markdown(reports, status),
            description="Summary of the numerical verification suites.",
        )
    except Exception as e:
        logger.error(f"Error creating verification summary artifact: {e}", exc_info=True)
        raise
    logger.info(f"Created verification summary artifact: {key}")
    return key
