"""
Config Tool - environment settings and attack configuration files.

Environment variables (read from the process or a .env file):
  TVINE_JOBS        default parallel jobs (1)
  TVINE_SEED        default base seed (2024)
  TVINE_TRACKING    "1" enables mlflow tracking
  TVINE_MLFLOW_URI  mlflow tracking URI
  TVINE_EXPERIMENT  mlflow experiment name ("TVineSynth")
"""

import json
import os
import sys
from typing import Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from .errors import DataError, UsageError
from .privacy_tool import AIAConfig, MIAConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

load_dotenv()


class Settings(BaseModel):
    jobs: int = Field(1, ge=1)
    seed: int = Field(2024, ge=0)
    tracking: bool = False
    mlflow_uri: Optional[str] = None
    experiment: str = "TVineSynth"


def load_settings() -> Settings:
    """Settings from the environment; malformed values are a usage error."""
    try:
        return Settings(
            jobs=os.getenv("TVINE_JOBS", "1"),
            seed=os.getenv("TVINE_SEED", "2024"),
            tracking=os.getenv("TVINE_TRACKING", "0").strip().lower() in ("1", "true", "yes"),
            mlflow_uri=os.getenv("TVINE_MLFLOW_URI") or None,
            experiment=os.getenv("TVINE_EXPERIMENT", "TVineSynth"),
        )
    except ValidationError as e:
        raise UsageError(f"Invalid TVINE_* environment setting: {e}")


def load_attack_config(path: Optional[str]) -> Tuple[AIAConfig, MIAConfig]:
    """
    Read the [aia] and [mia] sections of a TOML or JSON file.

    Missing sections or keys fall back to the defaults; camel-case keys
    (nIter, sizeRawT, ...) are accepted.

    Raises:
        DataError: missing or unparseable file
        UsageError: a value violates the configuration constraints
    """
    if path is None:
        return AIAConfig(), MIAConfig()
    if not os.path.exists(path):
        raise DataError(f"Attack config not found: {path}")
    try:
        if path.endswith(".toml"):
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        else:
            with open(path, "r") as f:
                raw = json.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"Could not parse {path}: {e}")
    try:
        return AIAConfig(**raw.get("aia", {})), MIAConfig(**raw.get("mia", {}))
    except ValidationError as e:
        raise UsageError(f"Invalid attack config {path}: {e}")
