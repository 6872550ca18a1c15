#!/usr/bin/env python3
# scripts/setup_prefect_variables.py
"""
Creates or updates Prefect Variables from the YAML configs under
'configs/variables/pani_lab/'.

A file named '<name>_config_pani_lab.yaml' becomes the Variable 'pani-lab-<name>'
(e.g. sweep_config_pani_lab.yaml -> pani-lab-sweep), which is the name the flows
take as ``config_variable_name``. Every file is validated as an ExperimentConfig
before it is uploaded; invalid files are reported and skipped.

Existing Variables are only replaced when PREFECT_VARIABLE_OVERWRITE=true or the
user confirms at the prompt.
"""

import json
import os
from pathlib import Path
import sys
from typing import Any

from dotenv import load_dotenv
from loguru import logger
from prefect.variables import Variable
import typer
import yaml

from pani_lab.config import CONFIGS_DIR, PROJ_ROOT, configure_logging
from pani_lab.core.exceptions import ConfigError
from pani_lab.core.experiment_models import load_experiment_config

FILENAME_SUFFIX = "_config_pani_lab"
VARIABLE_PREFIX = "pani-lab"
TAG = "pani_lab"


def prompt_yes_no(prompt_text: str) -> bool:
    try:
        return typer.confirm(prompt_text, default=False)
    except typer.Abort:
        logger.warning("Prompt cancelled; keeping the existing Variable.")
        return False


def derive_variable_info(config_file_path: Path) -> dict[str, Any] | None:
    """Variable name and tags for one config file, or None if the name does not fit."""
    stem = config_file_path.stem
    if not stem.endswith(FILENAME_SUFFIX):
        logger.warning(f"Skipping '{config_file_path.name}': expected '*{FILENAME_SUFFIX}.yaml'.")
        return None
    base = stem[: -len(FILENAME_SUFFIX)].replace("_", "-")
    if not base:
        logger.warning(f"Skipping '{config_file_path.name}': no config name before the suffix.")
        return None
    return {"name": f"{VARIABLE_PREFIX}-{base}", "tags": sorted({TAG, base})}


def set_variable(var_name: str, var_value: dict[str, Any], force_overwrite: bool, tags: list[str]) -> bool:
    """Creates or replaces one Variable; returns True when it was written."""
    existing = Variable.get(var_name, default=None)
    if existing is None:
        action = "Created"
    elif force_overwrite or prompt_yes_no(f"Overwrite existing variable '{var_name}'?"):
        action = "Updated"
    else:
        logger.info(f"Skipping update for '{var_name}'.")
        return False
    # stored as a JSON string
    Variable.set(var_name, json.dumps(var_value), tags=tags, overwrite=True)
    logger.success(f"{action} Variable '{var_name}' (tags: {', '.join(tags)})")
    return True


def create_variables_from_configs(config_dir: Path, force_overwrite: bool) -> list[str]:
    """Uploads every valid config in ``config_dir``; returns the Variable names written."""
    if not config_dir.is_dir():
        logger.error(f"Configuration directory not found: {config_dir}")
        return []
    config_files = sorted([*config_dir.glob("*.yaml"), *config_dir.glob("*.yml")])
    if not config_files:
        logger.warning(f"No config files found in {config_dir}")
        return []
    logger.info(f"Found {len(config_files)} config files in {config_dir}")

    written = []
    for path in config_files:
        info = derive_variable_info(path)
        if info is None:
            continue
        try:
            load_experiment_config(path)
        except ConfigError as e:
            logger.error(f"Skipping '{path.name}': {e}")
            continue
        value = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if set_variable(info["name"], value, force_overwrite, info["tags"]):
            written.append(info["name"])
    logger.info(f"{len(written)} of {len(config_files)} Variables written.")
    return written


if __name__ == "__main__":
    configure_logging()
    load_dotenv(PROJ_ROOT / ".env", override=True)

    api_url = os.environ.get("PREFECT_API_URL")
    if not api_url:
        logger.error("PREFECT_API_URL is not set (directly or via .env).")
        sys.exit(1)
    if "prefect.cloud" in api_url and not os.environ.get("PREFECT_API_KEY"):
        logger.warning("PREFECT_API_URL looks like Prefect Cloud, but PREFECT_API_KEY is not set.")

    force = os.environ.get("PREFECT_VARIABLE_OVERWRITE", "false").lower() == "true"
    logger.info(f"Targeting Prefect API: {api_url} (force overwrite: {force})")
    create_variables_from_configs(CONFIGS_DIR, force)
