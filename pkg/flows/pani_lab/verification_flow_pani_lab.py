# flows/pani_lab/verification_flow_pani_lab.py
from typing import Any

from prefect import flow, get_run_logger, tags

from pani_lab.core.experiment_models import VerifyConfig
from pani_lab.core.verification import expand_suites

from .config_loading import load_variable_config
from .verification.tasks import create_verification_report_artifact_task, run_verification_suite_task


@flow(name="Verification Flow (PANI Lab)", log_prints=True)
def verification_flow_pani_lab(
    suites: list[str] | None = None,
    verify_config: dict[str, Any] | None = None,
    config_variable_name: str | None = None,
    create_artifact: bool = True,
) -> dict[str, Any]:
    """
    Runs the requested verification suites as task runs and aggregates their
    reports. Settings come from ``verify_config``, else from the Prefect
    Variable ``config_variable_name`` (its ``verify`` section), else defaults.
    """
    logger = get_run_logger()
    names = list(dict.fromkeys(n for s in (suites or ["all"]) for n in expand_suites(s)))
    if verify_config is None:
        verify_config = load_variable_config(config_variable_name, logger).get("verify", {})
    cfg = VerifyConfig.model_validate(verify_config).model_dump(mode="json")
    logger.info(f"Starting Verification Flow for suites: {names}")

    reports: list[dict[str, Any]] = []
    with tags("pani_lab", "verification"):
        futures = [run_verification_suite_task.submit(name, cfg) for name in names]
        all_passed = True
        for name, future in zip(names, futures, strict=True):
            try:
                report = future.result()
            except Exception as e:
                logger.error(f"Suite '{name}' failed to run: {e}")
                reports.append({"suite": name, "error": str(e), "passed": False})
                all_passed = False
                continue
            reports.append(report)
            all_passed = all_passed and bool(report["passed"])
        status = "COMPLETED_SUCCESSFULLY" if all_passed else "COMPLETED_WITH_ERRORS"

        if create_artifact:
            try:
                create_verification_report_artifact_task(reports, status)
            except Exception as e:
                logger.warning(f"Verification summary artifact not created: {e}")

    logger.info(f"Finished Verification Flow. Overall Status: {status}")
    return {"status": status, "reports": reports}


if __name__ == "__main__":
    print(verification_flow_pani_lab(suites=["theorem1", "limits"]))
