"""
Settings Service for fluortraj
Reads run defaults from the environment (optionally a .env file).
"""

from functools import lru_cache
from typing import Optional
import logging
import os

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Settings(BaseModel):
    """Process-wide defaults; CLI flags take precedence"""

    threads: int = Field(default=1, ge=1)
    out_dir: str = "out"
    log_level: str = "INFO"
    trace: bool = False

    @field_validator("log_level")
    @classmethod
    def _level(cls, value: str) -> str:
        value = value.upper()
        if value not in LOG_LEVELS:
            raise ValueError(f"FLUOR_LOG_LEVEL must be one of {LOG_LEVELS}, got {value!r}")
        return value


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}")


@lru_cache()
def get_settings() -> Settings:
    """
    Builds the settings object once per process.

    Raises:
        ValueError: If an environment variable holds an invalid value
    """
    return Settings(
        threads=_int_env("FLUOR_THREADS", 1),
        out_dir=os.getenv("FLUOR_OUT") or "out",
        log_level=os.getenv("FLUOR_LOG_LEVEL") or "INFO",
        trace=(os.getenv("FLUOR_TRACE", "0").strip() == "1"),
    )


def resolve_threads(flag: Optional[int]) -> int:
    """--threads wins over FLUOR_THREADS"""
    if flag is not None:
        if flag < 1:
            raise ValueError("--threads must be positive")
        return flag
    return get_settings().threads
