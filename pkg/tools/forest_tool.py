"""
Forest Tool - bagged CART classifier with Gini splits.

Splits are placed at observed training values (x <= value goes left), so
predictions are unchanged by strictly increasing per-feature transforms
applied to both training and scoring rows.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, Field

from .dataset_tool import Dataset
from .errors import DataError, DomainError
from .numerics_tool import RngStream

logger = logging.getLogger(__name__)


class ForestConfig(BaseModel):
    n_trees: int = Field(100, ge=1)
    max_depth: int = Field(12, ge=1)
    min_leaf: int = Field(2, ge=1)
    features_per_split: Optional[int] = Field(None, ge=1)
    seed: int = Field(0, ge=0)

    def resolve_features(self, d: int) -> int:
        k = self.features_per_split or math.ceil(math.sqrt(d))
        if k > d:
            raise DomainError(f"features_per_split={k} exceeds the {d} available features")
        return k


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # fraction of class 1 in the node

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=int)
        rows = np.arange(x.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not np.any(inner):
                return self.value[node]
            go_left = x[rows, np.where(inner, feat, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)


@dataclass(frozen=True)
class Forest:
    trees: List[Tree]
    n_features: int


def _best_split(x: np.ndarray, y: np.ndarray, features: np.ndarray, min_leaf: int):
    """Lowest weighted Gini over the candidate features, or None."""
    m = y.size
    xs_all = x[:, features]
    order = np.argsort(xs_all, axis=0, kind="stable")
    xs = np.take_along_axis(xs_all, order, axis=0)
    ys = y[order]
    cum = np.cumsum(ys, axis=0)[:-1]
    total = ys[:, 0].sum()
    n_left = np.arange(1, m, dtype=float)[:, None]
    n_right = m - n_left
    p_left = cum / n_left
    p_right = (total - cum) / n_right
    impurity = (n_left * 2.0 * p_left * (1.0 - p_left) + n_right * 2.0 * p_right * (1.0 - p_right)) / m
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not np.any(valid):
        return None
    impurity = np.where(valid, impurity, np.inf)
    i, f = np.unravel_index(int(np.argmin(impurity)), impurity.shape)
    return int(features[f]), float(xs[i, f])


def _grow_tree(x: np.ndarray, y: np.ndarray, cfg: ForestConfig, k: int, gen: np.random.Generator) -> Tree:
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []

    def new_node(idx: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    stack = [(new_node(np.arange(y.size)), np.arange(y.size), 0)]
    d = x.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        if depth >= cfg.max_depth or idx.size < 2 * cfg.min_leaf or yn.min() == yn.max():
            continue
        features = gen.choice(d, size=k, replace=False)
        split = _best_split(x[idx], yn, features, cfg.min_leaf)
        if split is None:
            continue
        f, thr = split
        mask = x[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=int),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=int),
        right=np.asarray(right, dtype=int),
        value=np.asarray(value, dtype=float),
    )


def _bagged_tree(x: np.ndarray, y: np.ndarray, cfg: ForestConfig, k: int, stream: RngStream) -> Tree:
    gen = stream.generator()
    boot = gen.integers(0, y.size, size=y.size)
    return _grow_tree(x[boot], y[boot], cfg, k, gen)


def train_forest(train: Dataset, cfg: ForestConfig, jobs: int = 1) -> Forest:
    """
    Bagged Gini trees on the covariates of train, labels from its response.

    Raises:
        DataError: if the training response has a single class
    """
    y = train.response.astype(float)
    if y.min() == y.max():
        raise DataError("train_forest needs both classes in the training response")
    x = train.features
    k = cfg.resolve_features(x.shape[1])
    root = RngStream(cfg.seed)
    trees = Parallel(n_jobs=jobs)(
        delayed(_bagged_tree)(x, y, cfg, k, root.derive(b)) for b in range(cfg.n_trees)
    )
    return Forest(trees=list(trees), n_features=x.shape[1])


def predict_proba(forest: Forest, rows: Union[Dataset, np.ndarray]) -> np.ndarray:
    """Fraction of trees voting class 1."""
    x = rows.features if isinstance(rows, Dataset) else np.array(rows, dtype=float, ndmin=2)
    if x.shape[1] != forest.n_features:
        raise DomainError(f"forest expects {forest.n_features} features, got {x.shape[1]}")
    votes = np.zeros(x.shape[0])
    for tree in forest.trees:
        votes += tree.predict(x) > 0.5
    return votes / len(forest.trees)
