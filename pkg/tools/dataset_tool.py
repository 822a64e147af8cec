"""
Dataset Tool - the tabular container shared by every module, CSV I/O and
the per-directory run manifest.
"""

import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from . import __version__
from .errors import DataError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"


@dataclass(frozen=True)
class Dataset:
    """
    n x d numeric covariates plus a binary response.

    Covariates keep their column order; the response is always reported
    after them when the data is written or flattened to a matrix.
    """

    features: np.ndarray
    response: np.ndarray
    names: tuple
    response_name: str = "y"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2:
            raise DataError(f"features must be a 2-D matrix, got shape {feats.shape}")
        resp = np.asarray(self.response).ravel()
        if resp.size != feats.shape[0]:
            raise DataError(f"{feats.shape[0]} covariate rows but {resp.size} responses")
        if not np.all(np.isfinite(feats)):
            raise DataError("covariates contain non-finite values")
        if not np.all(np.isin(resp, (0, 1))):
            raise DataError(f"response '{self.response_name}' must take values in {{0, 1}}")
        names = tuple(str(n) for n in self.names)
        if len(names) != feats.shape[1]:
            raise DataError(f"{feats.shape[1]} covariates but {len(names)} names")
        if len(set(names)) != len(names) or self.response_name in names:
            raise DataError("column names must be unique")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "response", resp.astype(int))
        object.__setattr__(self, "names", names)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def columns(self) -> List[str]:
        return list(self.names) + [self.response_name]

    def matrix(self) -> np.ndarray:
        """Covariates followed by the response as one float matrix."""
        return np.column_stack([self.features, self.response.astype(float)])

    def subset(self, rows: Sequence[int]) -> "Dataset":
        idx = np.asarray(rows, dtype=int)
        return Dataset(self.features[idx], self.response[idx], self.names, self.response_name)

    def column_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"Unknown covariate '{name}'; available: {list(self.names)}")

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=list(self.names))
        frame[self.response_name] = self.response
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, response: str = "y") -> "Dataset":
        if response not in frame.columns:
            raise DataError(f"Response column '{response}' not found; columns: {list(frame.columns)}")
        covariates = [c for c in frame.columns if c != response]
        if not covariates:
            raise DataError("no covariate columns")
        try:
            feats = frame[covariates].to_numpy(dtype=float)
        except (TypeError, ValueError) as e:
            raise DataError(f"non-numeric covariate values: {e}")
        resp = frame[response].to_numpy()
        return cls(feats, resp, tuple(covariates), response)


def read_csv(path: str, response: str = "y") -> Dataset:
    """
    Load a comma-separated file with a header row.

    Raises:
        DataError: if the file is missing, unparseable or lacks the response column
    """
    if not os.path.exists(path):
        raise DataError(f"Data file not found: {path}")
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"Could not parse {path}: {e}")
    data = Dataset.from_frame(frame, response)
    logger.info("[Dataset] loaded %s: %d rows, %d covariates", path, data.n_rows, data.n_features)
    return data


def write_csv(data: Dataset, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    data.to_frame().to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    return path


# ============================================================================
# RUN MANIFEST
# ============================================================================

class RunManifest(BaseModel):
    """Record of one CLI invocation written next to its artifacts."""

    command: str
    inputs: Dict[str, str] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)
    base_seed: Optional[int] = None
    tool_version: str = __version__
    wall_clock_s: float = 0.0
    outputs: List[str] = Field(default_factory=list)


def write_manifest(out_dir: str, manifest: RunManifest) -> str:
    """Write (or replace) the single manifest of an artifact directory."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as f:
        json.dump(manifest.model_dump(), f, indent=2)
    return path


class Stopwatch:
    def __init__(self):
        self.start = time.time()

    def elapsed(self) -> float:
        return time.time() - self.start
