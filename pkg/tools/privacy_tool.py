"""
Privacy Tool - attribute and membership inference games.

Purpose:
    Score how much a synthetic-data generator leaks about a sensitive
    covariate (AIA, scored by the mean / worst-case absolute regression
    coefficient and per-target squared error) and about the presence of a
    single record (MIA, scored by the privacy gain). Closed-form
    regression coefficients of truncated Gaussian C-vines serve as oracles.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from .cvine_tool import fit_cvine, sample, truncate
from .dataset_tool import Dataset
from .errors import DataError, DomainError, NumericError, RankDeficiencyError, ZeroVarianceError
from .forest_tool import ForestConfig, predict_proba, train_forest
from .numerics_tool import RngStream, ols_fit, standardization_stats, standardize

logger = logging.getLogger(__name__)

# generator(train, n_sets, size, rng) -> n_sets synthetic datasets of `size` rows
SyntheticGenerator = Callable[[Dataset, int, int, RngStream], List[Dataset]]


# ============================================================================
# CONFIGURATION
# ============================================================================

class AIAConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    n_iter: int = Field(10, ge=1, alias="nIter")
    size_raw_t: int = Field(500, ge=1, alias="sizeRawT")
    size_syn_t: int = Field(500, ge=1, alias="sizeSynT")
    n_synth: int = Field(50, ge=1, alias="nSynth")
    bootstrap_size: int = Field(500, ge=1, alias="bootstrapSize")


class MIAConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    n_iter: int = Field(10, ge=1, alias="nIter")
    size_raw_a: int = Field(500, ge=1, alias="sizeRawA")
    n_shadows: int = Field(10, ge=1, alias="nShadows")
    n_syn_a: int = Field(10, ge=1, alias="nSynA")
    size_raw_t: int = Field(400, ge=1, alias="sizeRawT")
    size_syn_t: int = Field(400, ge=1, alias="sizeSynT")
    n_syn_t: int = Field(50, ge=1, alias="nSynT")


class CVineGenerator:
    """Fit-and-sample closure around the C-vine; picklable for joblib workers."""

    def __init__(self, order: Sequence[int], t_max: int, truncation: Optional[int] = None,
                 independence_level: Optional[float] = 0.01):
        self.order = tuple(int(i) for i in order)
        self.t_max = t_max
        self.truncation = truncation
        self.independence_level = independence_level

    def __call__(self, train: Dataset, n_sets: int, size: int, rng: RngStream) -> List[Dataset]:
        model = fit_cvine(train, self.order, self.t_max, rng.derive(0), independence_level=self.independence_level)
        if self.truncation is not None and self.truncation < model.truncation_level:
            model = truncate(model, self.truncation)
        return [sample(model, size, rng.derive(1, l)) for l in range(n_sets)]


# ============================================================================
# TARGET SELECTION
# ============================================================================

def select_targets(data: Dataset, sensitive_j: int, mode: str, count: int, rng: RngStream) -> np.ndarray:
    """
    Pick target rows for the games.

    Args:
        data: real data
        sensitive_j: 0-based sensitive covariate
        mode: "outlier" (outside the central 95% of the sensitive column,
            most extreme first) or "random" (uniform without replacement)
        count: number of targets

    Raises:
        DataError: if fewer than count rows qualify
    """
    if not 0 <= sensitive_j < data.n_features:
        raise DomainError(f"sensitive index {sensitive_j} outside 0..{data.n_features - 1}")
    if count > data.n_rows:
        raise DataError(f"cannot select {count} targets from {data.n_rows} rows")
    col = data.features[:, sensitive_j]
    if mode == "random":
        return np.sort(rng.generator().choice(data.n_rows, size=count, replace=False))
    if mode != "outlier":
        raise DomainError(f"Unknown target mode '{mode}'")

    lo, hi = np.quantile(col, [0.025, 0.975])
    outliers = np.flatnonzero((col < lo) | (col > hi))
    if outliers.size < count:
        raise DataError(f"only {outliers.size} outliers available, {count} requested")
    median = np.median(col)
    extremeness = np.abs(col[outliers] - median) / (hi - lo if hi > lo else 1.0)
    ranks = np.argsort(-extremeness, kind="stable")
    return np.sort(outliers[ranks[:count]])


# ============================================================================
# ATTRIBUTE INFERENCE
# ============================================================================

@dataclass
class AIAReport:
    sensitive: int
    targets: List[int]
    beta: np.ndarray            # (d, n_iter, n_synth), NaN where skipped
    intercepts: np.ndarray      # (n_iter, n_synth)
    r_squared: np.ndarray       # (n_iter, n_synth)
    mse_synthetic: np.ndarray   # per target
    mse_real: np.ndarray        # per target
    skipped: int = 0

    @property
    def mab(self) -> float:
        return float(np.nanmean(np.abs(self.beta)))

    @property
    def wcab(self) -> float:
        return float(np.nanmax(np.abs(self.beta)))

    @property
    def mr2(self) -> float:
        return float(np.nanmean(self.r_squared))

    def per_set_mab(self) -> np.ndarray:
        """MAB of each (iteration, synthetic set) regression, flattened; skipped sets dropped."""
        values = np.abs(self.beta).mean(axis=0).ravel()
        return values[np.isfinite(values)]

    def to_dict(self) -> Dict:
        return {
            "sensitive": self.sensitive,
            "targets": list(self.targets),
            "mab": self.mab,
            "wcab": self.wcab,
            "mr2": self.mr2,
            "mse_synthetic": self.mse_synthetic.tolist(),
            "mse_real": self.mse_real.tolist(),
            "skipped": self.skipped,
            "n_iter": int(self.beta.shape[1]),
            "n_synth": int(self.beta.shape[2]),
        }

    def iteration_rows(self) -> List[Dict]:
        rows = []
        for m in range(self.beta.shape[1]):
            for l in range(self.beta.shape[2]):
                b = self.beta[:, m, l]
                rows.append({
                    "iteration": m,
                    "synthetic_set": l,
                    "mab": float(np.mean(np.abs(b))) if np.all(np.isfinite(b)) else None,
                    "wcab": float(np.max(np.abs(b))) if np.all(np.isfinite(b)) else None,
                    "r_squared": float(self.r_squared[m, l]) if np.isfinite(self.r_squared[m, l]) else None,
                    "intercept": float(self.intercepts[m, l]) if np.isfinite(self.intercepts[m, l]) else None,
                })
        return rows


def _regress_sensitive(matrix: np.ndarray, j: int):
    """Standardize a (covariates + response) matrix and regress column j on the rest."""
    try:
        z = standardize(matrix)
        others = [k for k in range(matrix.shape[1]) if k != j]
        return ols_fit(z[:, others], z[:, j])
    except (ZeroVarianceError, RankDeficiencyError, DomainError) as e:
        logger.debug("[AIA] regression skipped: %s", e)
        return None


def _aia_iteration(real: Dataset, generator: SyntheticGenerator, j: int, targets: np.ndarray,
                   pool: np.ndarray, target_z: np.ndarray, cfg: AIAConfig, stream: RngStream) -> Dict:
    gen = stream.generator()
    n_ref = max(1, min(cfg.size_raw_t, real.n_rows) - targets.size)
    n_ref = min(n_ref, pool.size)
    rows = np.sort(np.concatenate([gen.choice(pool, size=n_ref, replace=False), targets]))
    train = real.subset(rows)
    synthetic = generator(train, cfg.n_synth, cfg.size_syn_t, stream.derive(1))

    d = real.n_features
    others = [k for k in range(d + 1) if k != j]
    beta = np.full((d, cfg.n_synth), np.nan)
    intercepts = np.full(cfg.n_synth, np.nan)
    r2 = np.full(cfg.n_synth, np.nan)
    err_s = np.full((cfg.n_synth, targets.size), np.nan)
    err_r = np.full((cfg.n_synth, targets.size), np.nan)
    skipped = 0

    for l, syn in enumerate(synthetic):
        fit = _regress_sensitive(syn.matrix(), j)
        if fit is None:
            skipped += 1
            continue
        beta[:, l] = fit.coefficients
        intercepts[l] = fit.intercept
        r2[l] = fit.r_squared
        err_s[l] = (fit.intercept + target_z[:, others] @ fit.coefficients - target_z[:, j]) ** 2

    train_matrix = train.matrix()
    for b in range(cfg.n_synth):
        boot = gen.integers(0, train.n_rows, size=cfg.bootstrap_size)
        fit = _regress_sensitive(train_matrix[boot], j)
        if fit is not None:
            err_r[b] = (fit.intercept + target_z[:, others] @ fit.coefficients - target_z[:, j]) ** 2

    return {"beta": beta, "intercepts": intercepts, "r2": r2, "err_s": err_s, "err_r": err_r, "skipped": skipped}


def run_aia(real: Dataset, generator: SyntheticGenerator, sensitive_j: int, targets: Sequence[int],
            cfg: AIAConfig, rng: RngStream, jobs: int = 1) -> AIAReport:
    """
    Attribute inference game against a generator.

    Each iteration subsamples reference rows (always including the targets),
    fits the generator, and regresses the standardized sensitive column on
    every other column of each synthetic set. Targets are guessed from their
    non-sensitive values standardized with the real data's statistics.

    Raises:
        DomainError: sensitive index out of range
        NumericError: if every synthetic regression had to be skipped
    """
    d = real.n_features
    if not 0 <= sensitive_j < d:
        raise DomainError(f"sensitive index {sensitive_j} outside 0..{d - 1}")
    targets = np.asarray(sorted(set(int(t) for t in targets)), dtype=int)
    matrix = real.matrix()
    mean, sd = standardization_stats(matrix, real.columns)
    target_z = (matrix[targets] - mean) / sd
    pool = np.setdiff1d(np.arange(real.n_rows), targets)

    iterations = tqdm(range(cfg.n_iter), desc="[AIA] game iterations", disable=None, leave=False)
    results = Parallel(n_jobs=jobs)(
        delayed(_aia_iteration)(real, generator, sensitive_j, targets, pool, target_z, cfg, rng.derive(m))
        for m in iterations
    )

    beta = np.stack([r["beta"] for r in results], axis=1)
    skipped = sum(r["skipped"] for r in results)
    if not np.any(np.isfinite(beta)):
        raise NumericError("every synthetic regression of the attribute inference game was skipped")
    if skipped:
        logger.warning("[AIA] Warning: %d synthetic regressions skipped (collinear or constant columns)", skipped)

    with np.errstate(invalid="ignore"):
        err_s = np.concatenate([r["err_s"] for r in results], axis=0)
        err_r = np.concatenate([r["err_r"] for r in results], axis=0)
        mse_s = np.nanmean(err_s, axis=0) if targets.size else np.array([])
        mse_r = np.nanmean(err_r, axis=0) if targets.size else np.array([])

    report = AIAReport(
        sensitive=sensitive_j,
        targets=targets.tolist(),
        beta=beta,
        intercepts=np.stack([r["intercepts"] for r in results]),
        r_squared=np.stack([r["r2"] for r in results]),
        mse_synthetic=mse_s,
        mse_real=mse_r,
        skipped=skipped,
    )
    logger.info("[AIA] MAB=%.4f WCAB=%.4f over %d iterations", report.mab, report.wcab, cfg.n_iter)
    return report


# ============================================================================
# MEMBERSHIP INFERENCE
# ============================================================================

def privacy_gain(p_true_positive: float, p_false_positive: float) -> float:
    """PG = Adv_R - Adv_S with Adv_R = 1."""
    return 1.0 - (p_true_positive - p_false_positive)


def synthetic_features(data: Dataset) -> np.ndarray:
    """Column mean, sd, median, min, max and the lower-triangle Pearson correlations."""
    m = data.matrix()
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.nan_to_num(np.corrcoef(m, rowvar=False), nan=0.0)
    sd = m.std(axis=0, ddof=1) if m.shape[0] > 1 else np.zeros(m.shape[1])
    low = np.tril_indices(m.shape[1], k=-1)
    return np.concatenate([m.mean(axis=0), sd, np.median(m, axis=0), m.min(axis=0), m.max(axis=0), corr[low]])


@dataclass
class MIAReport:
    target_index: int
    p_true_positive: float
    p_false_positive: float
    n_challenges: int
    adv_real: float = 1.0
    challenge_rows: List[Dict] = field(default_factory=list)

    @property
    def adv_synthetic(self) -> float:
        return self.p_true_positive - self.p_false_positive

    @property
    def privacy_gain(self) -> float:
        return privacy_gain(self.p_true_positive, self.p_false_positive)

    def to_dict(self) -> Dict:
        return {
            "target_index": self.target_index,
            "p_true_positive": self.p_true_positive,
            "p_false_positive": self.p_false_positive,
            "adv_real": self.adv_real,
            "adv_synthetic": self.adv_synthetic,
            "privacy_gain": self.privacy_gain,
            "n_challenges": self.n_challenges,
        }


def _membership_sets(real: Dataset, generator: SyntheticGenerator, pool: np.ndarray, target_index: int,
                     member: int, size_raw: int, n_sets: int, size_syn: int, stream: RngStream) -> List[np.ndarray]:
    gen = stream.generator()
    rows = gen.choice(pool, size=min(size_raw, pool.size), replace=False)
    if member:
        rows[0] = target_index
    synthetic = generator(real.subset(np.sort(rows)), n_sets, size_syn, stream.derive(1))
    return [synthetic_features(s) for s in synthetic]


def run_mia(real: Dataset, generator: SyntheticGenerator, target_index: int, cfg: MIAConfig, rng: RngStream,
            forest_cfg: Optional[ForestConfig] = None, jobs: int = 1) -> MIAReport:
    """
    Membership inference game for one target row.

    The non-target rows are split by seed into an attacker pool (shadow
    training) and a disjoint challenge pool. Shadow models alternate between
    including and excluding the target; a random forest learns membership
    from per-set summary features and is scored on fresh challenges whose
    membership labels are balanced in random order.

    Raises:
        DataError: if the shadow training set has a single class
    """
    if not 0 <= target_index < real.n_rows:
        raise DomainError(f"target row {target_index} outside the data")
    rest = np.setdiff1d(np.arange(real.n_rows), [target_index])
    perm = rng.derive(0).generator().permutation(rest)
    n_attacker = int(round(rest.size * cfg.size_raw_a / (cfg.size_raw_a + cfg.size_raw_t)))
    attacker_pool, challenge_pool = perm[:n_attacker], perm[n_attacker:]
    if attacker_pool.size == 0 or challenge_pool.size == 0:
        raise DataError("not enough rows to split attacker and challenge pools")

    shadow_labels = [s % 2 for s in range(cfg.n_shadows)]
    shadows = Parallel(n_jobs=jobs)(
        delayed(_membership_sets)(real, generator, attacker_pool, target_index, label,
                                  cfg.size_raw_a, cfg.n_syn_a, cfg.size_syn_t, rng.derive(1, s))
        for s, label in enumerate(tqdm(shadow_labels, desc="[MIA] shadow models", disable=None, leave=False))
    )
    x_train = np.array([f for sets in shadows for f in sets])
    y_train = np.array([label for label, sets in zip(shadow_labels, shadows) for _ in sets])
    if np.unique(y_train).size < 2:
        raise DataError("membership classifier needs shadow sets with and without the target")

    names = tuple(f"f{i}" for i in range(x_train.shape[1]))
    forest_cfg = forest_cfg or ForestConfig(seed=rng.derive(4).stream_id)
    classifier = train_forest(Dataset(x_train, y_train, names, "member"), forest_cfg)

    balanced = np.resize([1, 0], cfg.n_iter)
    challenge_labels = rng.derive(2).generator().permutation(balanced)
    challenges = Parallel(n_jobs=jobs)(
        delayed(_membership_sets)(real, generator, challenge_pool, target_index, int(label),
                                  cfg.size_raw_t, cfg.n_syn_t, cfg.size_syn_t, rng.derive(3, m))
        for m, label in enumerate(tqdm(challenge_labels, desc="[MIA] challenges", disable=None, leave=False))
    )

    guesses = {0: [], 1: []}
    rows = []
    for m, (label, sets) in enumerate(zip(challenge_labels, challenges)):
        scores = predict_proba(classifier, np.array(sets))
        guess = (scores >= 0.5).astype(int)
        guesses[int(label)].extend(guess.tolist())
        rows.append({"challenge": m, "member": int(label), "guessed_member_rate": float(guess.mean())})

    tp = float(np.mean(guesses[1])) if guesses[1] else float("nan")
    fp = float(np.mean(guesses[0])) if guesses[0] else float("nan")
    report = MIAReport(target_index, tp, fp, cfg.n_iter, challenge_rows=rows)
    logger.info("[MIA] target %d: PG=%.3f (TP=%.3f, FP=%.3f)", target_index, report.privacy_gain, tp, fp)
    return report


# ============================================================================
# CLOSED-FORM COEFFICIENTS OF TRUNCATED GAUSSIAN C-VINES
# rho is indexed by vine variable: positions 1..d are covariates X_(1)..X_(d),
# position d+1 is the response (root of the first tree).
# ============================================================================

@dataclass(frozen=True)
class BetaResult:
    beta: np.ndarray        # coefficients on positions [d+1] \ {j*}, in position order
    sigma2: float
    regressors: List[int]   # 1-based positions


def _check_correlation(rho: np.ndarray) -> np.ndarray:
    r = np.asarray(rho, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise DomainError("rho must be square")
    if not np.allclose(r, r.T, atol=1e-12) or not np.allclose(np.diag(r), 1.0, atol=1e-12):
        raise DomainError("rho must be symmetric with unit diagonal")
    try:
        np.linalg.cholesky(r)
    except np.linalg.LinAlgError:
        raise NumericError("rho is not positive definite")
    return r


def theoretical_beta(rho: np.ndarray, j_star: int, tau: Optional[int]) -> BetaResult:
    """
    Regression of variable j* on all others under the Gaussian C-vine of rho
    truncated at tau (None = untruncated).

    Non-root regressors get exactly zero; the tau roots get rho_RR^-1 rho_Rj.

    Raises:
        DomainError: j* or tau out of range
        NumericError: rho not positive definite
    """
    r = _check_correlation(rho)
    m = r.shape[0]
    d = m - 1
    if not 1 <= j_star <= m:
        raise DomainError(f"j_star={j_star} outside 1..{m}")
    j = j_star - 1
    others = [k for k in range(m) if k != j]
    beta = np.zeros(d)

    if tau is None:
        coef = np.linalg.solve(r[np.ix_(others, others)], r[others, j])
        return BetaResult(coef, float(1.0 - r[j, others] @ coef), [k + 1 for k in others])

    if not 1 <= tau <= d + 1 - j_star:
        raise DomainError(f"tau={tau} outside 1..{d + 1 - j_star} for j_star={j_star}")
    roots = list(range(d + 1 - tau, m))
    coef = np.linalg.solve(r[np.ix_(roots, roots)], r[roots, j])
    beta[d - tau:] = coef
    sigma2 = float(1.0 - r[roots, j] @ coef)
    return BetaResult(beta, sigma2, [k + 1 for k in others])


def block_independence_check(rho: np.ndarray, associated: Sequence[int], sensitive: Sequence[int], tau: int) -> Dict:
    """
    Verify that every sensitive position gets an all-zero coefficient vector.

    Returns:
        Dictionary with "holds", "max_abs_beta" and "per_sensitive"
    """
    r = _check_correlation(rho)
    d = r.shape[0] - 1
    k_set, s_set = set(associated), set(sensitive)
    if k_set & s_set:
        raise DomainError("associated and sensitive sets must be disjoint")
    bound = d + 1 - len(k_set) - len(s_set)
    if not 1 <= tau <= bound:
        raise DomainError(f"tau={tau} outside 1..{bound}")
    per = {}
    for j in sorted(s_set):
        per[j] = float(np.max(np.abs(theoretical_beta(r, j, tau).beta)))
    worst = max(per.values()) if per else 0.0
    return {"holds": worst <= 1e-12, "max_abs_beta": worst, "per_sensitive": per}
