# pani_lab/common/utils.py
import hashlib
import json
from pathlib import Path
import re
from typing import Any

from loguru import logger
import pandas as pd
import yaml

CONFIG_HASH_PREFIX = "# config_sha256: "


def generate_sha256_hash_from_bytes(content: bytes) -> str:
    """Calculates the SHA256 hash for a byte string."""
    sha256_hash = hashlib.sha256()
    sha256_hash.update(content)
    hex_digest = sha256_hash.hexdigest()
    logger.debug(f"Generated SHA256 hash from bytes: {hex_digest[:8]}...")
    return hex_digest


def generate_sha256_hash_from_string(text_content: str, encoding: str = "utf-8") -> str:
    """Calculates the SHA256 hash for a string."""
    return generate_sha256_hash_from_bytes(text_content.encode(encoding))


def generate_sha256_for_file(file_path: Path) -> str | None:
    """
    Calculates the SHA256 hash for a file on disk.
    Returns None when the path is missing or unreadable.
    """
    if not file_path or not file_path.is_file():
        logger.error(f"File not found or is not a file for hashing: {file_path}")
        return None
    try:
        sha256_hash = hashlib.sha256()
        with open(file_path, "rb") as f:
            for byte_block in iter(lambda: f.read(4096), b""):
                sha256_hash.update(byte_block)
        hex_digest = sha256_hash.hexdigest()
        logger.debug(f"Calculated SHA256 for {file_path.name}: {hex_digest[:8]}...")
        return hex_digest
    except OSError as e:
        logger.error(f"OSError calculating SHA256 for {file_path}: {e}")
    return None


def sanitize_filename(filename: str, default_name: str = "run") -> str:
    """
    Basic filename sanitization so generated run names are safe path components.
    """
    if not filename:
        return default_name
    filename = Path(filename).name
    s1 = re.sub(r"[\s/\\&:,|]+", "_", filename)
    s2 = re.sub(r"[^\w.\-_]", "", s1)
    s3 = re.sub(r"_+", "_", s2)
    s4 = s3.strip("._ ")
    return s4 if s4 else default_name


def canonical_json(payload: Any) -> str:
    """Key-sorted compact JSON; the input to every config hash."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(payload: Any) -> str:
    return generate_sha256_hash_from_string(canonical_json(payload))


def write_config_echo(payload: dict[str, Any], out_dir: Path) -> str:
    """Writes config_echo.yaml into out_dir and returns the echo hash."""
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config_hash(payload)
    echo = {"config_sha256": digest, "config": json.loads(canonical_json(payload))}
    with open(out_dir / "config_echo.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(echo, f, sort_keys=True)
    logger.debug(f"Config echo written to {out_dir / 'config_echo.yaml'} ({digest[:8]}...)")
    return digest


def write_csv_with_echo(frame: pd.DataFrame, path: Path, digest: str) -> Path:
    """CSV with a leading comment line carrying the config hash, then a header row."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"{CONFIG_HASH_PREFIX}{digest}\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def append_csv_rows(frame: pd.DataFrame, path: Path, digest: str) -> None:
    """Appends rows, writing the comment and header lines on first use."""
    if not path.exists():
        write_csv_with_echo(frame, path, digest)
        return
    with open(path, "a", encoding="utf-8", newline="") as f:
        frame.to_csv(f, index=False, header=False, float_format="%.17g")
        f.flush()


def read_echo_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
