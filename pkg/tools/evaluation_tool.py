"""
Evaluation Tool - downstream utility, statistical fidelity and the
truncation sweep that produces the privacy-utility plot.

Key Responsibilities:
  - TSTR / TRTR AUC with the in-tree random forest
  - alpha-precision, beta-recall and authenticity on standardized data
  - Fit once at the highest truncation level, then score every level
  - Sweep CSV, per-level Kendall tau matrices and the SVG scatter
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, field_validator
from scipy.integrate import trapezoid
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .cvine_tool import CVineModel, fit_cvine, sample, truncate
from .dataset_tool import Dataset
from .errors import DataError, DomainError
from .forest_tool import ForestConfig, predict_proba, train_forest
from .numerics_tool import RngStream, Stream, auc, kendall_tau_matrix, standardization_stats
from .privacy_tool import AIAConfig, CVineGenerator, MIAConfig, run_aia, run_mia, select_targets

logger = logging.getLogger(__name__)

GRID_POINTS = 21
PRIVACY_METRICS = ("mab", "pg")
SWEEP_COLUMNS = [
    "truncation", "utility_median", "utility_q25", "utility_q75",
    "privacy_metric", "privacy_median", "privacy_q25", "privacy_q75",
]


# ============================================================================
# UTILITY
# ============================================================================

def _forest_auc(train: Dataset, test: Dataset, cfg: ForestConfig) -> float:
    if train.names != test.names:
        raise DataError(f"train columns {list(train.names)} differ from test columns {list(test.names)}")
    forest = train_forest(train, cfg)
    return auc(test.response, predict_proba(forest, test))


def utility_tstr(synthetic: Dataset, test: Dataset, cfg: Optional[ForestConfig] = None) -> float:
    """Train on synthetic, test on real: AUC(y*, w*)."""
    return _forest_auc(synthetic, test, cfg or ForestConfig())


def utility_trtr(real: Dataset, test: Dataset, cfg: Optional[ForestConfig] = None) -> float:
    """Train on real, test on real: AUC(y*, y*_hat)."""
    return _forest_auc(real, test, cfg or ForestConfig())


def _replicate_auc(model: CVineModel, test: Dataset, cfg: ForestConfig, stream: RngStream) -> float:
    return utility_tstr(sample(model, model.n_train, stream), test, cfg)


def utility_replicates(model: CVineModel, test: Dataset, n_rep: int, rng: RngStream,
                       cfg: Optional[ForestConfig] = None, jobs: int = 1) -> np.ndarray:
    """TSTR AUC of n_rep synthetic sets, each the size of the model's training data."""
    if n_rep < 1:
        raise DomainError("n_rep must be at least 1")
    cfg = cfg or ForestConfig()
    scores = Parallel(n_jobs=jobs)(
        delayed(_replicate_auc)(model, test, cfg, rng.derive(r)) for r in range(n_rep)
    )
    return np.asarray(scores, dtype=float)


# ============================================================================
# FIDELITY
# ============================================================================

@dataclass
class FidelityReport:
    alpha: np.ndarray
    precision_curve: np.ndarray
    beta: np.ndarray
    recall_curve: np.ndarray
    integrated_precision: float
    integrated_recall: float
    authenticity: float

    def to_dict(self) -> Dict:
        return {
            "alpha": self.alpha.tolist(),
            "precision_curve": self.precision_curve.tolist(),
            "beta": self.beta.tolist(),
            "recall_curve": self.recall_curve.tolist(),
            "integrated_precision": self.integrated_precision,
            "integrated_recall": self.integrated_recall,
            "authenticity": self.authenticity,
        }


def _as_matrix(data: Union[Dataset, np.ndarray]) -> np.ndarray:
    return data.matrix() if isinstance(data, Dataset) else np.array(data, dtype=float, ndmin=2)


def _medoid(x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Row with the smallest total Euclidean distance to all rows."""
    totals = np.empty(x.shape[0])
    for start in range(0, x.shape[0], chunk):
        totals[start:start + chunk] = cdist(x[start:start + chunk], x).sum(axis=1)
    return x[int(np.argmin(totals))]


def _coverage_curve(support: np.ndarray, probe: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Fraction of probe rows inside the medoid ball of support holding mass q, for q in grid."""
    center = _medoid(support)
    radii = np.quantile(np.linalg.norm(support - center, axis=1), grid)
    dist = np.sort(np.linalg.norm(probe - center, axis=1))
    return np.searchsorted(dist, radii, side="right") / probe.shape[0]


def _integrated_score(curve: np.ndarray, grid: np.ndarray) -> float:
    return float(np.clip(1.0 - 2.0 * trapezoid(np.abs(curve - grid), grid), 0.0, 1.0))


def fidelity(real: Union[Dataset, np.ndarray], synthetic: Union[Dataset, np.ndarray]) -> FidelityReport:
    """
    alpha-precision, beta-recall and authenticity of synthetic against real.

    Both sets are standardized with the real data's column statistics.

    Raises:
        DataError: fewer than 2 rows on either side or a column mismatch
    """
    r = _as_matrix(real)
    s = _as_matrix(synthetic)
    if r.shape[0] < 2 or s.shape[0] < 2:
        raise DataError("fidelity needs at least 2 rows on each side")
    if r.shape[1] != s.shape[1]:
        raise DataError(f"real has {r.shape[1]} columns, synthetic {s.shape[1]}")
    mean, sd = standardization_stats(r)
    r = (r - mean) / sd
    s = (s - mean) / sd

    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    precision = _coverage_curve(r, s, grid)
    recall = _coverage_curve(s, r, grid)

    tree = cKDTree(r)
    own_nn = tree.query(r, k=2)[0][:, 1]
    dist, idx = tree.query(s, k=1)
    authenticity = float(np.mean(dist > own_nn[idx]))

    report = FidelityReport(
        alpha=grid,
        precision_curve=precision,
        beta=grid.copy(),
        recall_curve=recall,
        integrated_precision=_integrated_score(precision, grid),
        integrated_recall=_integrated_score(recall, grid),
        authenticity=authenticity,
    )
    logger.info(
        "[Fidelity] IP=%.3f IR=%.3f A=%.3f",
        report.integrated_precision, report.integrated_recall, report.authenticity,
    )
    return report


# ============================================================================
# TRUNCATION SWEEP
# ============================================================================

class SweepConfig(BaseModel):
    """truncations are 1-based tree levels; sensitive is a 0-based covariate."""

    truncations: List[int]
    privacy: str = "mab"
    sensitive: int = Field(..., ge=0)
    n_rep: int = Field(50, ge=1)
    target_mode: str = "outlier"
    n_targets: int = Field(3, ge=1)

    @field_validator("truncations")
    @classmethod
    def _nonempty(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("truncations must not be empty")
        return sorted(set(int(t) for t in v))

    @field_validator("privacy")
    @classmethod
    def _known_metric(cls, v: str) -> str:
        if v not in PRIVACY_METRICS:
            raise ValueError(f"privacy must be one of {PRIVACY_METRICS}")
        return v


class SweepRecord(BaseModel):
    truncation: int
    utility_median: float
    utility_q25: float
    utility_q75: float
    privacy_metric: str
    privacy_median: float
    privacy_q25: float
    privacy_q75: float


@dataclass
class SweepResult:
    records: List[SweepRecord]
    targets: List[int]
    columns: List[str]
    tau_matrices: Dict[int, np.ndarray] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.records], columns=SWEEP_COLUMNS)


def _quartiles(values: Sequence[float]) -> np.ndarray:
    return np.quantile(np.asarray(values, dtype=float), [0.5, 0.25, 0.75])


def privacy_scores(real: Dataset, order: Sequence[int], t: int, cfg: SweepConfig, targets: Sequence[int],
                   aia_cfg: AIAConfig, mia_cfg: MIAConfig, base: RngStream,
                   forest_cfg: Optional[ForestConfig] = None, jobs: int = 1) -> np.ndarray:
    """
    Per-game privacy scores of the C-vine truncated at t: the MAB of every
    synthetic regression, or the PG of every target.
    """
    generator = CVineGenerator(order, t_max=t)
    if cfg.privacy == "mab":
        report = run_aia(real, generator, cfg.sensitive, targets, aia_cfg, base.derive(Stream.AIA), jobs=jobs)
        return report.per_set_mab()
    gains = [
        run_mia(real, generator, int(target), mia_cfg, base.derive(Stream.MIA, int(target)),
                forest_cfg=forest_cfg, jobs=jobs).privacy_gain
        for target in targets
    ]
    return np.asarray(gains, dtype=float)


def _evaluate_level(real: Dataset, test: Dataset, order: Sequence[int], fitted: CVineModel, t: int,
                    cfg: SweepConfig, targets: Sequence[int], aia_cfg: AIAConfig, mia_cfg: MIAConfig,
                    base: RngStream, forest_cfg: ForestConfig):
    model = truncate(fitted, t)
    utility = utility_replicates(model, test, cfg.n_rep, base.derive(Stream.UTILITY), forest_cfg)
    privacy = privacy_scores(real, order, t, cfg, targets, aia_cfg, mia_cfg, base, forest_cfg)
    tau = kendall_tau_matrix(sample(model, model.n_train, base.derive(Stream.SAMPLE, t)).matrix())
    u = _quartiles(utility)
    p = _quartiles(privacy)
    record = SweepRecord(
        truncation=t,
        utility_median=float(u[0]), utility_q25=float(u[1]), utility_q75=float(u[2]),
        privacy_metric=cfg.privacy,
        privacy_median=float(p[0]), privacy_q25=float(p[1]), privacy_q75=float(p[2]),
    )
    logger.info(
        "[Sweep] t=%d utility=%.4f %s=%.4f", t, record.utility_median, cfg.privacy, record.privacy_median
    )
    return record, tau


def sweep(real: Dataset, test: Dataset, order: Sequence[int], cfg: SweepConfig,
          aia_cfg: Optional[AIAConfig] = None, mia_cfg: Optional[MIAConfig] = None,
          rng: Union[RngStream, int] = 0, forest_cfg: Optional[ForestConfig] = None,
          jobs: int = 1) -> SweepResult:
    """
    Evaluate utility and privacy at every truncation level in cfg.truncations.

    The C-vine is fitted once at max(T) and truncated per level, so the
    record at t equals the standalone evaluation of a model fitted with the
    same seed and truncated at t.

    Raises:
        DomainError: a truncation level outside 1..d or a sensitive index out of range
    """
    d = real.n_features
    bad = [t for t in cfg.truncations if not 1 <= t <= d]
    if bad:
        raise DomainError(f"truncation levels {bad} outside 1..{d}")
    if cfg.sensitive >= d:
        raise DomainError(f"sensitive index {cfg.sensitive} outside 0..{d - 1}")
    base = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    aia_cfg = aia_cfg or AIAConfig()
    mia_cfg = mia_cfg or MIAConfig()
    forest_cfg = forest_cfg or ForestConfig()

    targets = select_targets(real, cfg.sensitive, cfg.target_mode, cfg.n_targets, base.derive(Stream.TARGETS))
    fitted = fit_cvine(real, order, max(cfg.truncations), base.derive(Stream.FIT), jobs=jobs)
    logger.info("[Sweep] fitted once at t_max=%d; scoring %d levels", max(cfg.truncations), len(cfg.truncations))

    results = Parallel(n_jobs=jobs)(
        delayed(_evaluate_level)(real, test, order, fitted, t, cfg, targets, aia_cfg, mia_cfg, base, forest_cfg)
        for t in cfg.truncations
    )
    return SweepResult(
        records=[r for r, _ in results],
        targets=[int(t) for t in targets],
        columns=real.columns,
        tau_matrices={t: tau for t, (_, tau) in zip(cfg.truncations, results)},
    )


# ============================================================================
# OUTPUT
# ============================================================================

def write_sweep_csv(result: SweepResult, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    result.to_frame().to_csv(path, index=False, float_format="%.17g")
    return path


def write_tau_matrices(result: SweepResult, out_dir: str) -> List[str]:
    """One tau_t<level>.csv per truncation level, labeled by column name."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for t, tau in sorted(result.tau_matrices.items()):
        path = os.path.join(out_dir, f"tau_t{t}.csv")
        pd.DataFrame(tau, index=result.columns, columns=result.columns).to_csv(path, float_format="%.17g")
        paths.append(path)
    return paths


def read_competitors(path: str) -> pd.DataFrame:
    """Auxiliary points for the plot: columns label, utility, privacy."""
    if not os.path.exists(path):
        raise DataError(f"Competitor file not found: {path}")
    frame = pd.read_csv(path)
    missing = {"label", "utility", "privacy"} - set(frame.columns)
    if missing:
        raise DataError(f"{path} lacks columns {sorted(missing)}")
    return frame


def plot_privacy_utility(records: Sequence[SweepRecord], path: str,
                         competitors: Optional[pd.DataFrame] = None) -> str:
    """
    Scatter of (utility, privacy) with one labeled marker per truncation
    level; each marker carries the SVG id "truncation-<t>".
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not records:
        raise DomainError("nothing to plot")
    metric = records[0].privacy_metric
    matplotlib.rcParams["svg.fonttype"] = "none"
    matplotlib.rcParams["svg.hashsalt"] = "tvinesynth"

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for rec in records:
        ax.scatter([rec.utility_median], [rec.privacy_median], color="tab:blue", gid=f"truncation-{rec.truncation}")
        ax.annotate(f"t={rec.truncation}", (rec.utility_median, rec.privacy_median),
                    textcoords="offset points", xytext=(4, 4), fontsize=8)
    if competitors is not None:
        for row in competitors.itertuples(index=False):
            ax.scatter([row.utility], [row.privacy], color="tab:orange", marker="x", gid=f"competitor-{row.label}")
            ax.annotate(str(row.label), (row.utility, row.privacy),
                        textcoords="offset points", xytext=(4, -10), fontsize=8)
    ax.set_xlabel("utility (AUC)")
    ax.set_ylabel(f"privacy (median {metric.upper()})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
