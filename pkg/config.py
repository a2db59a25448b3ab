"""
pf-regen Configuration
Environment-driven run defaults, loaded from .env and the process environment
"""

import logging
import os
import sys
from functools import lru_cache
from typing import Mapping, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

# Load environment variables from .env file
load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

ENV_KEYS = {
    "tol": "PF_TOL",
    "seed": "PF_SEED",
    "n_cycles": "PF_N_CYCLES",
    "n_max": "PF_N_MAX",
    "ci_level": "PF_CI_LEVEL",
    "threads": "PF_THREADS",
    "log_level": "PF_LOG_LEVEL",
    "port": "PORT",
    "environment": "PF_ENVIRONMENT",
}


class Settings(BaseModel):
    """Defaults for every run; CLI flags and request fields override them per run"""

    model_config = ConfigDict(frozen=True)

    tol: float = Field(1e-12, gt=0)
    seed: Optional[int] = Field(None, ge=0)
    n_cycles: int = Field(100_000, ge=1)
    n_max: int = Field(1_000_000, ge=1)
    ci_level: float = Field(0.95, gt=0, lt=1)
    threads: int = Field(1, ge=1)
    log_level: str = "INFO"
    port: int = Field(8000, ge=1, le=65535)
    environment: str = "development"

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        level = value.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"unknown log level {value!r}")
        return level


def load_settings(environ: Optional[Mapping[str, str]] = None) -> Settings:
    environ = os.environ if environ is None else environ
    values = {}
    for name, key in ENV_KEYS.items():
        # Clean up whitespace and newlines
        raw = environ.get(key, "").strip()
        if raw:
            values[name] = raw
    try:
        return Settings(**values)
    except ValidationError as e:
        bad = sorted({ENV_KEYS[str(err["loc"][0])] for err in e.errors() if err["loc"]})
        raise ValueError(f"Invalid environment configuration: {', '.join(bad)}") from e


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return load_settings()


def configure_logging(level: Optional[str] = None):
    """One stderr handler so stdout stays a single JSON document"""
    logging.basicConfig(
        level=(level or get_settings().log_level).upper(),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )
