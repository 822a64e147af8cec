"""
Numerics Tool - shared scalar / matrix primitives.

Normal distribution functions, ranks and Kendall's tau, empirical CDF and
quantile, standardization, ordinary least squares, AUC and seeded random
streams. Every function is pure; RngStream values are immutable and each
worker derives its own stream.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, special, stats

from .errors import DataError, DomainError, RankDeficiencyError, ZeroVarianceError

ArrayLike = Union[float, Sequence[float], np.ndarray]

_UINT64 = 2**64


# ============================================================================
# RANDOM STREAMS
# ============================================================================

@dataclass(frozen=True)
class RngStream:
    """
    Reproducible random stream identified by (base_seed, stream_id).

    The same pair always yields the same sequence. Child streams for
    parallel workers are derived with `derive`, never by sharing a generator.
    """

    base_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("base_seed", "stream_id"):
            value = getattr(self, name)
            if not 0 <= int(value) < _UINT64:
                raise DomainError(f"{name} must be an unsigned 64-bit integer, got {value}")

    def generator(self) -> np.random.Generator:
        """Fresh counter-based generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=int(self.base_seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(seq))

    def derive(self, *keys: int) -> "RngStream":
        """Child stream keyed by integers; identical keys give identical children."""
        seq = np.random.SeedSequence(
            entropy=int(self.base_seed),
            spawn_key=(int(self.stream_id),) + tuple(int(k) for k in keys),
        )
        child_id = int(seq.generate_state(1, dtype=np.uint64)[0])
        return RngStream(self.base_seed, child_id)


def as_stream(rng: Union["RngStream", int, None], default_seed: int = 0) -> RngStream:
    """Accept an RngStream, a bare integer seed or None."""
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(default_seed)
    return RngStream(int(rng))


class Stream(IntEnum):
    """Stream keys derived from the base seed, one per pipeline stage."""

    SIMULATE = 1
    SPLIT = 2
    FIT = 3
    SAMPLE = 4
    UTILITY = 5
    TARGETS = 6
    AIA = 7
    MIA = 8


# ============================================================================
# NORMAL DISTRIBUTION
# ============================================================================

def _scalar_or_array(value: np.ndarray, like) -> Union[float, np.ndarray]:
    return float(value) if np.ndim(like) == 0 else value


def std_normal_cdf(x: ArrayLike) -> Union[float, np.ndarray]:
    """Standard normal CDF (complementary error function based)."""
    arr = np.asarray(x, dtype=float)
    return _scalar_or_array(special.ndtr(arr), x)


def std_normal_quantile(p: ArrayLike) -> Union[float, np.ndarray]:
    """
    Standard normal quantile function.

    Raises:
        DomainError: if any p lies outside the open interval (0, 1)
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise DomainError("std_normal_quantile requires p in (0, 1)")
    return _scalar_or_array(special.ndtri(arr), p)


# ============================================================================
# RANKS AND ASSOCIATION
# ============================================================================

def kendall_tau(x: ArrayLike, y: ArrayLike) -> float:
    """
    Kendall's tau_b between two equal-length vectors.

    Returns 0.0 when one of the vectors has no untied pairs.
    """
    xa = np.asarray(x, dtype=float).ravel()
    ya = np.asarray(y, dtype=float).ravel()
    if xa.shape != ya.shape:
        raise DomainError(f"kendall_tau length mismatch: {xa.size} vs {ya.size}")
    if xa.size < 2:
        raise DomainError("kendall_tau needs at least 2 observations")
    tau = stats.kendalltau(xa, ya, variant="b")[0]
    if not np.isfinite(tau):
        return 0.0
    return float(np.clip(tau, -1.0, 1.0))


def kendall_tau_matrix(m: np.ndarray) -> np.ndarray:
    """All pairwise tau_b of the columns of m (unit diagonal, exactly symmetric)."""
    m = np.asarray(m, dtype=float)
    k = m.shape[1]
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = kendall_tau(m[:, i], m[:, j])
    return out


def empirical_pit(column: ArrayLike) -> np.ndarray:
    """Pseudo-observations rank / (n + 1) with averaged ranks for ties."""
    col = np.asarray(column, dtype=float).ravel()
    if col.size < 2:
        raise DomainError("empirical_pit needs at least 2 observations")
    return stats.rankdata(col, method="average") / (col.size + 1.0)


def plotting_positions(n: int) -> np.ndarray:
    return np.arange(1, n + 1, dtype=float) / (n + 1.0)


def empirical_quantile(sample: ArrayLike, p: ArrayLike) -> Union[float, np.ndarray]:
    """
    Quantile by linear interpolation between order statistics placed at
    plotting positions i / (n + 1); clamps to min / max outside.
    """
    s = np.sort(np.asarray(sample, dtype=float).ravel())
    if s.size == 0:
        raise DataError("empirical_quantile of an empty sample")
    pa = np.asarray(p, dtype=float)
    if np.any((pa < 0.0) | (pa > 1.0)) or np.any(np.isnan(pa)):
        raise DomainError("empirical_quantile requires p in [0, 1]")
    return _scalar_or_array(np.interp(pa, plotting_positions(s.size), s), p)


def empirical_cdf(sorted_sample: np.ndarray, x: ArrayLike) -> Union[float, np.ndarray]:
    """Inverse of empirical_quantile; values stay in [1/(n+1), n/(n+1)]."""
    s = np.asarray(sorted_sample, dtype=float)
    xa = np.asarray(x, dtype=float)
    return _scalar_or_array(np.interp(xa, s, plotting_positions(s.size)), x)


def ks_uniform_statistic(u: ArrayLike) -> float:
    """Kolmogorov-Smirnov distance between a sample and U(0, 1)."""
    return float(stats.kstest(np.asarray(u, dtype=float).ravel(), "uniform")[0])


# ============================================================================
# STANDARDIZATION AND REGRESSION
# ============================================================================

def standardization_stats(m: np.ndarray, names: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Column means and sample standard deviations (ddof=1).

    Raises:
        ZeroVarianceError: naming the first constant column
    """
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.shape[0] < 2:
        raise DataError("standardize needs at least 2 rows")
    mean = m.mean(axis=0)
    sd = m.std(axis=0, ddof=1)
    for j, s in enumerate(sd):
        if not s > 0.0:
            raise ZeroVarianceError(names[j] if names is not None else f"column {j}")
    return mean, sd


def standardize(m: np.ndarray, names: Optional[Sequence[str]] = None) -> np.ndarray:
    """Column-wise z-scores (mean 0, sample sd 1)."""
    arr = np.asarray(m, dtype=float)
    mean, sd = standardization_stats(arr, names)
    if arr.ndim == 1:
        return (arr - mean[0]) / sd[0]
    return (arr - mean) / sd


@dataclass(frozen=True)
class OLSResult:
    intercept: float
    coefficients: np.ndarray
    r_squared: float
    residual_norm: float


def ols_fit(design: np.ndarray, response: ArrayLike, rank_tol: float = 1e-10) -> OLSResult:
    """
    Ordinary least squares with an intercept column added internally.

    Args:
        design: n x k regressor matrix (no intercept column)
        response: length-n response

    Returns:
        OLSResult with the intercept reported separately from the k slopes

    Raises:
        DomainError: if n <= k + 1
        RankDeficiencyError: listing the regressors involved in the collinearity
    """
    x = np.asarray(design, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(response, dtype=float).ravel()
    n, k = x.shape
    if y.size != n:
        raise DomainError(f"ols_fit: {n} design rows but {y.size} responses")
    if n <= k + 1:
        raise DomainError(f"ols_fit needs more than {k + 1} rows, got {n}")

    full = np.column_stack([np.ones(n), x])
    _, sv, vt = linalg.svd(full, full_matrices=False)
    null = vt[sv <= rank_tol * sv[0] * max(n, k + 1)]
    if null.shape[0]:
        # regressors carrying weight in the numerical null space; column 0 is the intercept
        involved = np.flatnonzero(np.any(np.abs(null) > 1e-8, axis=0))
        raise RankDeficiencyError([int(c) - 1 for c in involved if c > 0])

    coef, *_ = np.linalg.lstsq(full, y, rcond=None)
    resid = y - full @ coef
    rss = float(resid @ resid)
    centered = y - y.mean()
    tss = float(centered @ centered)
    r2 = 1.0 - rss / tss if tss > 0.0 else 0.0
    return OLSResult(
        intercept=float(coef[0]),
        coefficients=coef[1:],
        r_squared=r2,
        residual_norm=float(np.linalg.norm(full.T @ resid)),
    )


# ============================================================================
# CLASSIFIER EVALUATION
# ============================================================================

def auc(labels: ArrayLike, scores: ArrayLike) -> float:
    """Area under the ROC curve via the normalized Mann-Whitney U statistic."""
    lab = np.asarray(labels).ravel().astype(int)
    sc = np.asarray(scores, dtype=float).ravel()
    if lab.size != sc.size:
        raise DomainError("auc: labels and scores differ in length")
    n_pos = int(np.sum(lab == 1))
    n_neg = int(np.sum(lab == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("auc needs both classes in labels")
    ranks = stats.rankdata(sc, method="average")
    u = ranks[lab == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
