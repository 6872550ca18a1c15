# flows/pani_lab/verification/tasks/__init__.py
from .create_verification_report_artifact_task_pani_lab import create_verification_report_artifact_task
from .run_verification_suite_task_pani_lab import run_verification_suite_task

__all__ = [
    "run_verification_suite_task",
    "create_verification_report_artifact_task",
]
