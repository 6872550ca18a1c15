# flows/pani_lab/config_loading.py
import json
from typing import Any

from prefect import variables


def load_variable_config(config_variable_name: str | None, logger) -> dict[str, Any]:
    """
    Reads a JSON mapping stored in a Prefect Variable; a missing or malformed
    variable yields an empty mapping so code defaults apply.
    """
    if not config_variable_name:
        return {}
    try:
        value = variables.Variable.get(config_variable_name, default=None)
    except Exception as e:
        logger.error(f"Failed to load config Variable '{config_variable_name}': {e}", exc_info=True)
        return {}
    if value is None:
        logger.info(f"Config Variable '{config_variable_name}' not found. Proceeding with defaults.")
        return {}
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError as e:
            logger.error(f"Failed to parse JSON from config Variable '{config_variable_name}': {e}")
            return {}
    if not isinstance(value, dict):
        logger.error(f"Config Variable '{config_variable_name}' did not contain a JSON mapping.")
        return {}
    logger.info(f"Loaded config Variable '{config_variable_name}'")
    return value
