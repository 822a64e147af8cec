"""
Observability Module for TVineSynth
Uses MLflow to track command runs, per-stage durations and sweep metrics.
"""

import logging
from contextlib import contextmanager
from typing import Dict, Iterable, Optional

import mlflow

logger = logging.getLogger(__name__)


def setup_observability(tracking_uri: Optional[str] = None, experiment_name: str = "TVineSynth"):
    """Point MLflow at the tracking store and select the experiment."""
    if tracking_uri:
        mlflow.set_tracking_uri(tracking_uri)
    mlflow.set_experiment(experiment_name)
    print(f"[Observability] MLflow experiment set to: {experiment_name}")
    return mlflow


def log_stage_execution(stage_name: str, params: Dict, metrics: Dict[str, float], duration_s: float,
                        step: Optional[int] = None):
    """Log one pipeline stage to the active run."""
    try:
        mlflow.log_metric(f"{stage_name}_duration_seconds", duration_s, step=step)
        for key, value in metrics.items():
            mlflow.log_metric(f"{stage_name}_{key}", float(value), step=step)
        # mlflow caps param values at 500 characters
        for key, value in params.items():
            mlflow.log_param(f"{stage_name}_{key}", str(value)[:500])
    except Exception as e:
        print(f"[Observability] Warning: Failed to log to MLflow: {e}")


def log_artifacts(paths: Iterable[str]):
    try:
        for path in paths:
            mlflow.log_artifact(path)
    except Exception as e:
        print(f"[Observability] Warning: Failed to log artifacts to MLflow: {e}")


@contextmanager
def tracked_run(enabled: bool, run_name: str, tracking_uri: Optional[str] = None,
                experiment_name: str = "TVineSynth"):
    """
    An MLflow run around a CLI command when tracking is enabled; a no-op
    otherwise. Setup failures only disable tracking.
    """
    if not enabled:
        yield False
        return
    try:
        setup_observability(tracking_uri, experiment_name)
        mlflow.start_run(run_name=run_name)
    except Exception as e:
        print(f"[Observability] Warning: MLflow tracking disabled: {e}")
        yield False
        return
    try:
        yield True
    finally:
        mlflow.end_run()
