# pani_lab/core/artifact_creators.py
from datetime import UTC, datetime
from typing import Any

from loguru import logger
from prefect.artifacts import create_markdown_artifact

MAX_KEY_LENGTH = 200


def clean_for_artifact_key(name_part: str, default_name: str = "item") -> str:
    """
    Lowercase letters, digits and single dashes only, as Prefect artifact keys require.
    """
    if not name_part:
        name_part = default_name
    cleaned = name_part.lower().replace(" ", "-").replace("_", "-").replace(".", "-")
    cleaned = "".join(c for c in cleaned if c.isalnum() or c == "-")
    while "--" in cleaned:
        cleaned = cleaned.replace("--", "-")
    cleaned = cleaned.strip("-")
    return cleaned if cleaned else default_name


def artifact_key(prefix: str, identifier: str) -> str:
    day = datetime.now(UTC).strftime("%Y-%m-%d")
    key = f"{clean_for_artifact_key(prefix)}-{clean_for_artifact_key(identifier)}-{day}"
    if len(key) > MAX_KEY_LENGTH:
        key = key[:MAX_KEY_LENGTH].rstrip("-")
        logger.warning(f"Artifact key was truncated to: {key}")
    return key


def verification_markdown(reports: list[dict[str, Any]], status: str) -> list[str]:
    lines = [
        "## Verification Summary",
        f"- **Overall Status:** `{status}`",
        f"- **Run Timestamp (UTC):** `{datetime.now(UTC).isoformat()}`",
        "",
        "| suite | checks | failed | seconds |",
        "|---|---|---|---|",
    ]
    for report in reports:
        if "error" in report:
            lines.append(f"| {report.get('suite', '?')} | - | error: `{report['error']}` | - |")
            continue
        checks = report.get("checks", [])
        failed = [c["name"] for c in checks if not c.get("passed")]
        lines.append(
            f"| {report['suite']} | {len(checks)} | {', '.join(failed) or 0} | {report.get('elapsed_s', 0.0):.2f} |"
        )
    return lines


def sweep_markdown(summary: dict[str, Any], status: str) -> list[str]:
    lines = [
        "## Sweep Summary",
        f"- **Overall Status:** `{status}`",
        f"- **Cells summarised:** `{summary.get('cells', 0)}`",
        f"- **Hybrid worst-sigma return at least each baseline's:** `{summary.get('hybrid_at_least_baselines')}`",
        "",
        "| family | worst-sigma mean return |",
        "|---|---|",
    ]
    for family, value in sorted(summary.get("worst_mean_return", {}).items()):
        lines.append(f"| {family} | {value:.4f} |")
    return lines


def create_report_artifact(prefix: str, identifier: str, markdown_lines: list[str], description: str) -> str:
    """Publishes a markdown artifact and returns its key; failures propagate to the calling task."""
    key = artifact_key(prefix, identifier)
    logger.info(f"Creating markdown artifact with key: {key}")
    create_markdown_artifact(key=key, markdown="\n".join(markdown_lines), description=description)
    return key
