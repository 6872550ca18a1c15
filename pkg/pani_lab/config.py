from pathlib import Path

from dotenv import load_dotenv
from loguru import logger
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file if it exists
load_dotenv()

# Paths
PROJ_ROOT = Path(__file__).resolve().parents[1]
logger.debug(f"PROJ_ROOT path is: {PROJ_ROOT}")

DATA_DIR = PROJ_ROOT / "data"
RAW_DATA_DIR = DATA_DIR / "raw"
PROCESSED_DATA_DIR = DATA_DIR / "processed"

MODELS_DIR = PROJ_ROOT / "models"

REPORTS_DIR = PROJ_ROOT / "reports"
FIGURES_DIR = REPORTS_DIR / "figures"

CONFIGS_DIR = PROJ_ROOT / "configs" / "variables" / "pani_lab"


class LabSettings(BaseSettings):
    """Environment-level settings (PANI_LAB_* variables or .env)."""

    output_dir: Path = REPORTS_DIR / "runs"
    log_level: str = "INFO"
    sweep_workers: int | None = Field(default=None, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="PANI_LAB_",
        env_file=".env",
        extra="ignore",
    )


def get_settings() -> LabSettings:
    return LabSettings()


def configure_logging(level: str | None = None) -> None:
    """Route loguru through tqdm.write at the requested level."""
    level = level or get_settings().log_level
    logger.remove()
    try:
        from tqdm import tqdm

        logger.add(lambda msg: tqdm.write(msg, end=""), colorize=True, level=level)
    except ModuleNotFoundError:
        import sys

        logger.add(sys.stderr, level=level)


# If tqdm is installed, configure loguru with tqdm.write
# https://github.com/Delgan/loguru/issues/135
configure_logging()
