"""
Datagen Tool - simulated "real" data with a binary response and
class-conditional block-structured Gaussian covariates.

The reference 20-dimensional parameters live in data/block_gaussian_d20.json
(three mutually independent blocks x1-x5, x6-x10 and x11-x20).
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from .dataset_tool import Dataset
from .errors import DataError, DomainError, NumericError
from .numerics_tool import RngStream, as_stream

logger = logging.getLogger(__name__)

SPEC_FILE = "block_gaussian_d20.json"


@dataclass(frozen=True)
class BlockGaussianSpec:
    prevalence: float
    mu0: np.ndarray
    mu1: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray
    blocks: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if not 0.0 < self.prevalence < 1.0:
            raise DomainError(f"prevalence must lie in (0, 1), got {self.prevalence}")
        mu0 = np.asarray(self.mu0, dtype=float)
        mu1 = np.asarray(self.mu1, dtype=float)
        d = mu0.size
        if mu1.size != d:
            raise DataError("mu0 and mu1 differ in length")
        for name in ("sigma0", "sigma1"):
            s = np.asarray(getattr(self, name), dtype=float)
            if s.shape != (d, d):
                raise DataError(f"{name} has shape {s.shape}, expected ({d}, {d})")
            if not np.allclose(s, s.T, atol=0.0):
                raise NumericError(f"{name} is not symmetric")
            try:
                np.linalg.cholesky(s)
            except np.linalg.LinAlgError:
                raise NumericError(f"{name} is not positive definite")
            object.__setattr__(self, name, s)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "blocks", tuple(tuple(int(v) for v in b) for b in self.blocks))

    @property
    def d(self) -> int:
        return self.mu0.size

    def names(self) -> List[str]:
        return [f"x{i + 1}" for i in range(self.d)]

    def correlation(self, cls: int) -> np.ndarray:
        s = self.sigma1 if cls else self.sigma0
        sd = np.sqrt(np.diag(s))
        return s / np.outer(sd, sd)


def load_spec(path: str) -> BlockGaussianSpec:
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise DataError(f"Block-Gaussian parameter file not found: {path}")
    except json.JSONDecodeError as e:
        raise DataError(f"Could not parse {path}: {e}")
    try:
        return BlockGaussianSpec(
            prevalence=raw["prevalence"],
            mu0=raw["mu0"],
            mu1=raw["mu1"],
            sigma0=raw["sigma0"],
            sigma1=raw["sigma1"],
            blocks=raw.get("blocks", ()),
        )
    except KeyError as e:
        raise DataError(f"{path} lacks field {e}")


def reference_block_spec() -> BlockGaussianSpec:
    """The 20-dimensional two-class block-Gaussian reference parameters."""
    data_path = os.path.join(os.path.dirname(__file__), '..', 'data', SPEC_FILE)
    return load_spec(data_path)


def block_gaussian_spec(block_sizes: Sequence[int], rho: float, shift: float = 1.0,
                        prevalence: float = 0.5) -> BlockGaussianSpec:
    """
    Equicorrelated blocks with unit variances; class 1 is shifted by `shift`
    in every coordinate. Used to build small property-test fixtures.
    """
    sizes = [int(b) for b in block_sizes]
    if not sizes or min(sizes) < 1:
        raise DomainError("block sizes must be positive")
    d = sum(sizes)
    sigma = np.zeros((d, d))
    blocks = []
    start = 0
    for size in sizes:
        end = start + size
        sigma[start:end, start:end] = rho
        blocks.append((start + 1, end))
        start = end
    np.fill_diagonal(sigma, 1.0)
    return BlockGaussianSpec(prevalence, np.zeros(d), np.full(d, shift), sigma, sigma.copy(), tuple(blocks))


def simulate(spec: BlockGaussianSpec, n: int, rng: Union[RngStream, int, None] = None) -> Dataset:
    """
    Draw n rows: the class first, then the class-conditional Gaussian via
    the Cholesky factor of its covariance.
    """
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n}")
    gen = as_stream(rng).generator()
    y = (gen.random(n) < spec.prevalence).astype(int)
    z = gen.standard_normal((n, spec.d))
    x = np.empty((n, spec.d))
    for cls, mu, sigma in ((0, spec.mu0, spec.sigma0), (1, spec.mu1, spec.sigma1)):
        rows = y == cls
        x[rows] = mu + z[rows] @ np.linalg.cholesky(sigma).T
    logger.debug("[Datagen] simulated %d rows, prevalence %.3f", n, y.mean())
    return Dataset(x, y, tuple(spec.names()), "y")


def _stratified_counts(class_sizes: np.ndarray, n_test: int) -> np.ndarray:
    """Largest-remainder allocation of n_test across classes."""
    n = class_sizes.sum()
    quota = n_test * class_sizes / n
    counts = np.floor(quota).astype(int)
    short = n_test - counts.sum()
    # ties go to the lower class label
    order = np.lexsort((np.arange(counts.size), -(quota - counts)))
    counts[order[:short]] += 1
    return counts


def train_test_split(data: Dataset, test_fraction: float,
                     rng: Union[RngStream, int, None] = None) -> Tuple[Dataset, Dataset]:
    """
    Stratified split with floor(n * test_fraction) test rows.

    Raises:
        DomainError: fraction outside (0, 1)
        DataError: a class too small to appear on both sides
    """
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(np.floor(data.n_rows * test_fraction))
    if n_test == 0 or n_test == data.n_rows:
        raise DataError(f"test fraction {test_fraction} leaves an empty side for n={data.n_rows}")

    classes = np.array([0, 1])
    members = [np.flatnonzero(data.response == c) for c in classes]
    sizes = np.array([m.size for m in members])
    counts = _stratified_counts(sizes, n_test)
    for c, size, k in zip(classes, sizes, counts):
        if size > 0 and (k == 0 or k == size):
            raise DataError(f"class {c} ({size} rows) cannot be split {k}/{size - k}")

    gen = as_stream(rng).generator()
    test_rows = []
    for rows, k in zip(members, counts):
        test_rows.append(gen.permutation(rows)[:k])
    test_idx = np.sort(np.concatenate(test_rows))
    train_idx = np.setdiff1d(np.arange(data.n_rows), test_idx)
    logger.info("[Datagen] split %d rows into %d train / %d test", data.n_rows, train_idx.size, test_idx.size)
    return data.subset(train_idx), data.subset(test_idx)
