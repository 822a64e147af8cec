"""
CVine Tool - the truncated C-vine generative model.

Variable positions are root-first: position 0 is the response Y, position p
(1..d) is the covariate X_(d+1-p) of the order O*, so position 1 is X_(d)
and position d is X_(1). Tree t (0-based) has root position t and one edge
per later position; the edge pairs (leaf, root) and the root supplies the
conditioning argument of every h-function.

Tree 1 couples every covariate with the latent uniform V of the binary
response, Y = 1{V > 1 - prevalence}. Its edges are fitted on the binary
likelihood P(y | x) and later trees work on the class conditionals F(x | y).

Key Responsibilities:
  - Sequential tree-by-tree fitting with AIC family selection per edge
  - Truncation without touching data
  - Inverse-Rosenblatt sampling and the data-scale back-transform
  - Log-density and the per-tree log-odds decomposition of the response
  - Versioned JSON (de)serialization
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ValidationError
from scipy import stats

from .dataset_tool import Dataset
from .errors import DataError, DomainError, ModelFormatError
from .numerics_tool import RngStream, as_stream, empirical_cdf, empirical_quantile, std_normal_quantile
from .pair_copula_tool import (
    EPS,
    INDEPENDENCE_COPULA,
    FamilyKind,
    PairCopula,
    PairCopulaFamily,
    h_function,
    h_inverse,
    log_density as pair_log_density,
    response_conditional_cdf,
    response_conditional_inverse,
    response_log_density,
    select_aic,
    select_aic_response,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MIN_ROWS = 30

Trees = Tuple[Tuple[PairCopula, ...], ...]


# ============================================================================
# MODEL TYPES
# ============================================================================

@dataclass(frozen=True)
class Marginal:
    """Empirical margin: the sorted training column plus a Silverman KDE."""

    name: str
    quantile_table: np.ndarray

    def cdf(self, x) -> np.ndarray:
        return np.clip(empirical_cdf(self.quantile_table, np.asarray(x, dtype=float)), EPS, 1.0 - EPS)

    def quantile(self, p) -> np.ndarray:
        return empirical_quantile(self.quantile_table, np.clip(np.asarray(p, dtype=float), 0.0, 1.0))

    @cached_property
    def kde(self) -> stats.gaussian_kde:
        return stats.gaussian_kde(self.quantile_table, bw_method="silverman")

    def logpdf(self, x) -> np.ndarray:
        return self.kde.logpdf(np.atleast_1d(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class VineCopula:
    """Copula part of a C-vine: trees[t][j] couples position t+1+j with root t."""

    trees: Trees
    truncation_level: int

    def __post_init__(self):
        d = len(self.trees)
        for t, edges in enumerate(self.trees):
            if len(edges) != d - t:
                raise DomainError(f"tree {t + 1} has {len(edges)} edges, expected {d - t}")
            if t >= self.truncation_level and not all(pc.is_independence for pc in edges):
                raise DomainError(f"tree {t + 1} lies above truncation level {self.truncation_level}")
        if not 1 <= self.truncation_level <= max(d, 1):
            raise DomainError(f"truncation level {self.truncation_level} outside [1, {d}]")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def dim(self) -> int:
        return len(self.trees) + 1


@dataclass(frozen=True)
class CVineModel:
    """
    Fitted C-vine with empirical margins.

    order[k] is the column index of X_(k+1); marginals are indexed by the
    original covariate column. trees[0] holds the response edges.
    """

    order: Tuple[int, ...]
    marginals: Tuple[Marginal, ...]
    response_name: str
    response_prevalence: float
    n_train: int
    vine: VineCopula

    def __post_init__(self):
        d = len(self.marginals)
        if sorted(self.order) != list(range(d)):
            raise DomainError(f"order {list(self.order)} is not a permutation of 0..{d - 1}")
        if self.vine.n_trees != d:
            raise DomainError(f"vine has {self.vine.n_trees} trees for {d} covariates")
        if not 0.0 < self.response_prevalence < 1.0:
            raise DomainError("response prevalence must lie in (0, 1)")

    @property
    def d(self) -> int:
        return len(self.marginals)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(m.name for m in self.marginals)

    @property
    def truncation_level(self) -> int:
        return self.vine.truncation_level

    @property
    def trees(self) -> Trees:
        return self.vine.trees

    def position_columns(self) -> List[int]:
        """Covariate column at each vine position (-1 for the response)."""
        return [-1] + [self.order[self.d - p] for p in range(1, self.d + 1)]


@dataclass
class PseudoObsCache:
    """Conditional pseudo-observations per tree: levels[t][:, p] = F(x_p | positions < t)."""

    levels: List[np.ndarray] = field(default_factory=list)


# ============================================================================
# FITTING
# ============================================================================

def check_order(order: Sequence[int], d: int) -> Tuple[int, ...]:
    out = tuple(int(i) for i in order)
    if sorted(out) != list(range(d)):
        raise DataError(f"order {list(out)} is not a permutation of 0..{d - 1}")
    return out


def _tie_broken_pit(column: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """ranks/(n+1) with ties broken at random."""
    n = column.size
    idx = np.lexsort((gen.random(n), column))
    ranks = np.empty(n)
    ranks[idx] = np.arange(1, n + 1)
    return ranks / (n + 1.0)


def _covariate_matrix(data: Dataset, order: Sequence[int], gen: np.random.Generator) -> np.ndarray:
    """PIT of every covariate; column p-1 holds vine position p."""
    d = data.n_features
    u = np.empty((data.n_rows, d))
    for p in range(1, d + 1):
        u[:, p - 1] = _tie_broken_pit(data.features[:, order[d - p]], gen)
    return np.clip(u, EPS, 1.0 - EPS)


def _fit_edge(pair: np.ndarray, candidates, independence_level) -> PairCopula:
    return select_aic(pair, candidates, independence_level).copula


def _fit_response_edge(u: np.ndarray, y: np.ndarray, prevalence: float, candidates, independence_level) -> PairCopula:
    return select_aic_response(u, y, prevalence, candidates, independence_level).copula


def fit_cvine(
    data: Dataset,
    order: Sequence[int],
    t_max: int,
    rng: Union[RngStream, int, None] = None,
    candidates: Optional[Iterable[PairCopulaFamily]] = None,
    independence_level: Optional[float] = 0.01,
    jobs: int = 1,
) -> CVineModel:
    """
    Fit a C-vine tree by tree up to t_max.

    Tree 1 is fitted on the binary likelihood of the response given each
    covariate; later trees run on the class conditionals F(x | y).

    Args:
        data: training data with binary response
        order: O* as covariate column indices, order[0] = X_(1)
        t_max: highest tree that is estimated; later trees are Independence
        rng: stream that breaks ties in the covariate ranks
        candidates: pair-copula families (default: all with rotations)
        independence_level: level of the independence pre-test per edge
        jobs: joblib workers across the edges of one tree

    Returns:
        CVineModel with truncation_level = t_max

    Raises:
        DataError: fewer than 30 rows, a constant column or a single-class response
    """
    d = data.n_features
    order = check_order(order, d)
    if data.n_rows < MIN_ROWS:
        raise DataError(f"fit_cvine needs at least {MIN_ROWS} rows, got {data.n_rows}")
    if not 1 <= t_max <= d:
        raise DomainError(f"t_max={t_max} outside [1, {d}]")
    for j, name in enumerate(data.names):
        if np.ptp(data.features[:, j]) == 0.0:
            raise DataError(f"Column '{name}' is constant")
    prevalence = float(data.response.mean())
    if not 0.0 < prevalence < 1.0:
        raise DataError(f"Response '{data.response_name}' has a single class")
    if candidates is not None:
        candidates = list(candidates)

    gen = as_stream(rng).generator()
    w = _covariate_matrix(data, order, gen)
    y = data.response.astype(int)

    trees: List[Tuple[PairCopula, ...]] = []
    with Parallel(n_jobs=jobs) as parallel:
        edges = parallel(
            delayed(_fit_response_edge)(w[:, j], y, prevalence, candidates, independence_level) for j in range(d)
        )
        trees.append(tuple(edges))
        logger.info(
            "[CVine] tree 1 fitted: %d of %d edges dependent", sum(not pc.is_independence for pc in edges), d
        )
        if t_max > 1:
            for j, pc in enumerate(edges):
                w[:, j] = response_conditional_cdf(pc, w[:, j], y, prevalence)

        # column k of w is vine position k+1, the root of tree k+1 (0-based)
        for t in range(1, d):
            if t >= t_max:
                trees.append(tuple(INDEPENDENCE_COPULA for _ in range(d - t)))
                continue
            root = w[:, t - 1]
            edges = parallel(
                delayed(_fit_edge)(np.column_stack([w[:, k], root]), candidates, independence_level)
                for k in range(t, d)
            )
            trees.append(tuple(edges))
            n_dep = sum(not pc.is_independence for pc in edges)
            logger.info("[CVine] tree %d fitted: %d of %d edges dependent", t + 1, n_dep, len(edges))
            if t + 1 < t_max:
                for k, pc in zip(range(t, d), edges):
                    w[:, k] = h_function(pc, w[:, k], root)

    marginals = tuple(Marginal(name, np.sort(data.features[:, j])) for j, name in enumerate(data.names))
    return CVineModel(
        order=order,
        marginals=marginals,
        response_name=data.response_name,
        response_prevalence=prevalence,
        n_train=data.n_rows,
        vine=VineCopula(tuple(trees), t_max),
    )


# ============================================================================
# TRUNCATION
# ============================================================================

def truncate(model: Union[CVineModel, VineCopula], t: int) -> Union[CVineModel, VineCopula]:
    """Set every tree above t to Independence; never re-reads data."""
    vine = model.vine if isinstance(model, CVineModel) else model
    if not 1 <= t <= vine.truncation_level:
        raise DomainError(f"cannot truncate at {t}: model is fitted up to tree {vine.truncation_level}")
    trees = tuple(
        edges if k < t else tuple(INDEPENDENCE_COPULA for _ in edges) for k, edges in enumerate(vine.trees)
    )
    truncated = VineCopula(trees, t)
    if isinstance(model, CVineModel):
        return replace(model, vine=truncated)
    return truncated


# ============================================================================
# SAMPLING
# ============================================================================

def _inverse_rosenblatt(trees: Sequence[Tuple[PairCopula, ...]], w: np.ndarray) -> np.ndarray:
    """Map independent uniforms w (rows x len(trees)+1) through a C-vine, columns in position order."""
    n, m = w.shape
    x = np.empty((n, m))
    x[:, 0] = w[:, 0]
    # diag[k] = F(x_k | x_0..x_{k-1}), the conditioning argument supplied by root k
    diag = [w[:, 0]]
    for i in range(1, m):
        val = w[:, i]
        for k in range(i - 1, -1, -1):
            pc = trees[k][i - k - 1]
            if not pc.is_independence:
                val = h_inverse(pc, val, diag[k])
        x[:, i] = val
        if i == m - 1:
            break
        cond = val
        for j in range(i):
            pc = trees[j][i - j - 1]
            if not pc.is_independence:
                cond = h_function(pc, cond, diag[j])
        diag.append(cond)
    return x


def sample_copula(vine: VineCopula, n: int, rng: Union[RngStream, int, None]) -> np.ndarray:
    """
    Inverse-Rosenblatt sample on the copula scale, columns in position order.
    """
    if n < 1:
        raise DomainError("sample size must be at least 1")
    gen = as_stream(rng).generator()
    w = np.clip(gen.random((n, vine.dim)), EPS, 1.0 - EPS)
    return _inverse_rosenblatt(vine.trees, w)


def _sample_positions(model: CVineModel, n: int, rng: Union[RngStream, int, None]) -> Tuple[np.ndarray, np.ndarray]:
    """Covariate uniforms (column p-1 is position p) and the binary response."""
    if n < 1:
        raise DomainError("sample size must be at least 1")
    pi = model.response_prevalence
    gen = as_stream(rng).generator()
    w = np.clip(gen.random((n, model.d + 1)), EPS, 1.0 - EPS)
    y = (w[:, 0] > 1.0 - pi).astype(int)
    z = _inverse_rosenblatt(model.trees[1:], w[:, 1:])
    u = np.empty_like(z)
    for j, pc in enumerate(model.trees[0]):
        u[:, j] = response_conditional_inverse(pc, z[:, j], y, pi)
    return u, y


def sample(model: CVineModel, n: int, rng: Union[RngStream, int, None]) -> Dataset:
    """Synthetic data on the data scale, covariates in their original column order."""
    u, y = _sample_positions(model, n, rng)
    feats = np.empty((n, model.d))
    for p, col in enumerate(model.position_columns()[1:], start=1):
        feats[:, col] = model.marginals[col].quantile(u[:, p - 1])
    return Dataset(feats, y, model.names, model.response_name)


# ============================================================================
# DENSITY AND LOG-ODDS
# ============================================================================

def conditional_pseudo_obs(trees: Sequence[Tuple[PairCopula, ...]], u: np.ndarray) -> PseudoObsCache:
    """h-recursion over the trees for rows of position-ordered pseudo-observations."""
    w = np.clip(np.array(u, dtype=float, ndmin=2), EPS, 1.0 - EPS)
    cache = PseudoObsCache([w.copy()])
    for t, edges in enumerate(trees[:-1]):
        root = w[:, t]
        for p, pc in enumerate(edges, start=t + 1):
            if not pc.is_independence:
                w[:, p] = h_function(pc, w[:, p], root)
        cache.levels.append(w.copy())
    return cache


def tree_log_densities(trees: Sequence[Tuple[PairCopula, ...]], u: np.ndarray) -> np.ndarray:
    """Per-row, per-tree sums of log pair-copula densities (rows x len(trees))."""
    cache = conditional_pseudo_obs(trees, u)
    rows = cache.levels[0].shape[0]
    out = np.zeros((rows, len(trees)))
    for t, (edges, w) in enumerate(zip(trees, cache.levels)):
        root = w[:, t]
        for p, pc in enumerate(edges, start=t + 1):
            if not pc.is_independence:
                out[:, t] += pair_log_density(pc, w[:, p], root)
    return out


def copula_log_density(vine: VineCopula, u: np.ndarray) -> np.ndarray:
    """Log copula density of position-ordered pseudo-observations."""
    return tree_log_densities(vine.trees, u).sum(axis=1)


def _covariate_uniforms(model: CVineModel, x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float, ndmin=2)
    if x.shape[1] != model.d:
        raise DomainError(f"expected {model.d} covariates per row, got {x.shape[1]}")
    u = np.empty((x.shape[0], model.d))
    for p, col in enumerate(model.position_columns()[1:], start=1):
        u[:, p - 1] = model.marginals[col].cdf(x[:, col])
    return u


def _log_density_terms(model: CVineModel, u: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-tree copula log-density terms (rows x d) given the response."""
    pi = model.response_prevalence
    out = np.zeros((u.shape[0], model.d))
    z = np.empty_like(u)
    for j, pc in enumerate(model.trees[0]):
        out[:, 0] += response_log_density(pc, u[:, j], y, pi)
        z[:, j] = response_conditional_cdf(pc, u[:, j], y, pi)
    out[:, 1:] = tree_log_densities(model.trees[1:], z)
    return out


def log_density(model: CVineModel, x, y) -> Union[float, np.ndarray]:
    """
    Joint log-density of covariate rows x with responses y.

    Copula term plus KDE marginal log-densities plus the response's
    log-probability.
    """
    x_arr = np.array(x, dtype=float, ndmin=2)
    y_arr = np.broadcast_to(np.asarray(y, dtype=int), (x_arr.shape[0],))
    u = _covariate_uniforms(model, x_arr)
    total = _log_density_terms(model, u, y_arr).sum(axis=1)
    for col, marginal in enumerate(model.marginals):
        total = total + marginal.logpdf(x_arr[:, col])
    pi = model.response_prevalence
    total = total + np.where(y_arr == 1, np.log(pi), np.log1p(-pi))
    return float(total[0]) if np.ndim(x) == 1 else total


@dataclass(frozen=True)
class PsiDecomposition:
    terms: np.ndarray  # rows x d, column t is psi_{t+1}

    @property
    def psi(self) -> np.ndarray:
        return self.terms.sum(axis=1)

    def truncated(self, tau: int) -> np.ndarray:
        """Log-odds of the vine truncated at tau: sum of the first tau terms."""
        return self.terms[:, :tau].sum(axis=1)


def psi_decomposition(model: CVineModel, x) -> PsiDecomposition:
    """
    Per-tree decomposition of the log-odds log P(Y=1|x) - log P(Y=0|x).

    The first term carries logit(prevalence).
    """
    u = _covariate_uniforms(model, x)
    rows = u.shape[0]
    terms = _log_density_terms(model, u, np.ones(rows, dtype=int)) - _log_density_terms(
        model, u, np.zeros(rows, dtype=int)
    )
    pi = model.response_prevalence
    terms[:, 0] += np.log(pi) - np.log1p(-pi)
    return PsiDecomposition(terms)


# ============================================================================
# GAUSSIAN C-VINES AND STRUCTURE HELPERS
# ============================================================================

def gaussian_cvine(rho: np.ndarray, truncation_level: Optional[int] = None) -> VineCopula:
    """
    Gaussian C-vine equivalent to a correlation matrix.

    rho is indexed root-last: its final variable is the root of tree 1 and
    its first variable is the deepest leaf, so rho's variable k sits at
    vine position dim-1-k. sample_copula(...)[:, ::-1] restores rho's order.
    """
    r = np.asarray(rho, dtype=float)[::-1, ::-1].copy()
    m = r.shape[0]
    if r.shape != (m, m) or not np.allclose(r, r.T) or not np.allclose(np.diag(r), 1.0):
        raise DomainError("rho must be a symmetric correlation matrix")
    try:
        np.linalg.cholesky(r)
    except np.linalg.LinAlgError:
        raise DomainError("rho is not positive definite")

    gaussian = PairCopulaFamily(FamilyKind.GAUSSIAN)
    trees = []
    for t in range(m - 1):
        edges = []
        for p in range(t + 1, m):
            partial = float(r[t, p])
            edges.append(INDEPENDENCE_COPULA if abs(partial) < 1e-14 else PairCopula(gaussian, partial))
        trees.append(tuple(edges))
        rest = np.arange(t + 1, m)
        scale = np.sqrt(1.0 - r[t, rest] ** 2)
        updated = (r[np.ix_(rest, rest)] - np.outer(r[t, rest], r[t, rest])) / np.outer(scale, scale)
        r[np.ix_(rest, rest)] = updated
        np.fill_diagonal(r, 1.0)
    vine = VineCopula(tuple(trees), m - 1)
    if truncation_level is not None:
        vine = truncate(vine, truncation_level)
    return vine


def normal_scores(u: np.ndarray) -> np.ndarray:
    return std_normal_quantile(np.clip(u, EPS, 1.0 - EPS))


def recommended_t_max(order: Sequence[int], sensitive: Iterable[int]) -> int:
    """
    Deepest truncation at which no sensitive covariate becomes a tree root.

    X_(p) (1-based position p in the order) is the root of tree d+2-p, so the
    first sensitive root appears at tree d+2-p_max.
    """
    order = [int(i) for i in order]
    d = len(order)
    positions = [order.index(int(j)) + 1 for j in sensitive]
    if not positions:
        return d
    return max(1, min(d, d + 1 - max(positions)))


def position_names(model: CVineModel) -> List[str]:
    return [model.response_name if c < 0 else model.names[c] for c in model.position_columns()]


def edge_label(model: CVineModel, t: int, j: int) -> str:
    """'leaf,root|conditioning' names for edge j of tree t (both 0-based)."""
    names = position_names(model)
    leaf, root = names[t + 1 + j], names[t]
    given = ",".join(names[:t])
    return f"{leaf},{root}|{given}" if given else f"{leaf},{root}"


def summary(model: CVineModel) -> List[dict]:
    """Per-tree count of dependent edges, the families in use and each dependent edge."""
    names = position_names(model)
    out = []
    for t, edges in enumerate(model.trees):
        used = sorted({pc.family.label for pc in edges if not pc.is_independence})
        out.append(
            {
                "tree": t + 1,
                "root": names[t],
                "edges": len(edges),
                "dependent": sum(not pc.is_independence for pc in edges),
                "families": used,
                "edge_details": [
                    (edge_label(model, t, j), pc.label) for j, pc in enumerate(edges) if not pc.is_independence
                ],
            }
        )
    return out


# ============================================================================
# SERIALIZATION
# ============================================================================

class PairCopulaDocument(BaseModel):
    family: str
    rotation: int = 0
    theta: Optional[float] = None


class MarginalDocument(BaseModel):
    name: str
    quantile_table: List[float]


class CVineDocument(BaseModel):
    version: int
    order: List[int]
    n_train: int
    marginals: List[MarginalDocument]
    response_name: str = "y"
    response_prevalence: float
    truncation_level: int
    trees: List[List[PairCopulaDocument]]


def to_document(model: CVineModel) -> CVineDocument:
    return CVineDocument(
        version=SCHEMA_VERSION,
        order=list(model.order),
        n_train=model.n_train,
        marginals=[MarginalDocument(name=m.name, quantile_table=m.quantile_table.tolist()) for m in model.marginals],
        response_name=model.response_name,
        response_prevalence=model.response_prevalence,
        truncation_level=model.truncation_level,
        trees=[
            [PairCopulaDocument(family=pc.family.kind.value, rotation=pc.family.rotation, theta=pc.theta) for pc in edges]
            for edges in model.trees
        ],
    )


def serialize(model: CVineModel) -> str:
    return json.dumps(to_document(model).model_dump(), indent=2)


def _copula_from_document(doc: PairCopulaDocument) -> PairCopula:
    try:
        kind = FamilyKind(doc.family)
    except ValueError:
        raise ModelFormatError(f"Unknown pair-copula family '{doc.family}'")
    try:
        return PairCopula(PairCopulaFamily(kind, doc.rotation), doc.theta)
    except DomainError as e:
        raise ModelFormatError(f"Invalid pair copula {doc.family}: {e}")


def deserialize(text: Union[str, dict]) -> CVineModel:
    """
    Rebuild a model from its JSON document.

    Raises:
        ModelFormatError: malformed JSON, schema mismatch or invariant violation
    """
    try:
        raw = json.loads(text) if isinstance(text, str) else text
        doc = CVineDocument.model_validate(raw)
    except (json.JSONDecodeError, ValidationError, TypeError) as e:
        raise ModelFormatError(f"Malformed model document: {e}")
    if doc.version != SCHEMA_VERSION:
        raise ModelFormatError(f"Model schema version {doc.version} unsupported (expected {SCHEMA_VERSION})")
    d = len(doc.marginals)
    if not 1 <= doc.truncation_level <= d:
        raise ModelFormatError(f"truncation_level {doc.truncation_level} outside [1, {d}]")
    trees = tuple(tuple(_copula_from_document(pc) for pc in edges) for edges in doc.trees)
    try:
        return CVineModel(
            order=tuple(doc.order),
            marginals=tuple(Marginal(m.name, np.asarray(m.quantile_table, dtype=float)) for m in doc.marginals),
            response_name=doc.response_name,
            response_prevalence=doc.response_prevalence,
            n_train=doc.n_train,
            vine=VineCopula(trees, doc.truncation_level),
        )
    except DomainError as e:
        raise ModelFormatError(f"Invalid model document: {e}")


def save_model(model: CVineModel, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write(serialize(model))
    return path


def load_model(path: str) -> CVineModel:
    try:
        with open(path) as f:
            return deserialize(f.read())
    except OSError as e:
        raise ModelFormatError(f"Could not read model file {path}: {e}")
