"""
Ordering Tool - privacy-aware covariate order O*.

Sensitive covariates S go first in the order (deepest in the vine, last to
become a tree root), followed by the set K of covariates strongly associated
with S, then everything else in column order.
"""

import logging
from typing import Dict, List

import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy import stats

from .cvine_tool import recommended_t_max
from .dataset_tool import Dataset
from .errors import DataError, DomainError, ZeroVarianceError
from .numerics_tool import kendall_tau

logger = logging.getLogger(__name__)

MEASURES = ("kendall", "spearman", "pearson")


class OrderSpec(BaseModel):
    """Inputs of the ordering step; sensitive holds 0-based covariate indices."""

    sensitive: List[int] = Field(default_factory=list)
    threshold: float = 0.3
    association: str = "kendall"

    @field_validator("threshold")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0.0:
            raise ValueError("threshold must be positive")
        return v

    @field_validator("association")
    @classmethod
    def _known_measure(cls, v: str) -> str:
        if v not in MEASURES:
            raise ValueError(f"association must be one of {MEASURES}")
        return v


class OrderResult(BaseModel):
    order: List[int]
    sensitive: List[int]
    associated: List[int]
    association_matrix: List[List[float]]
    safe_truncation_bound: int
    recommended_t_max: int
    names: List[str] = Field(default_factory=list)

    def order_names(self) -> List[str]:
        return [self.names[i] for i in self.order] if self.names else []


def association_matrix(data: Dataset, measure: str = "kendall") -> np.ndarray:
    """
    Pairwise association of the covariates (d x d, exactly symmetric).

    Raises:
        ZeroVarianceError: for a constant column
    """
    if measure not in MEASURES:
        raise DomainError(f"Unknown association measure '{measure}'")
    x = data.features
    d = x.shape[1]
    if d < 2:
        raise DataError("association_matrix needs at least 2 covariates")
    for j in range(d):
        if np.ptp(x[:, j]) == 0.0:
            raise ZeroVarianceError(data.names[j])

    out = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            if measure == "kendall":
                value = kendall_tau(x[:, i], x[:, j])
            elif measure == "spearman":
                value = stats.spearmanr(x[:, i], x[:, j])[0]
            else:
                value = np.corrcoef(x[:, i], x[:, j])[0, 1]
            out[i, j] = out[j, i] = float(np.clip(value, -1.0, 1.0))
    return out


def order_from_matrix(rho: np.ndarray, sensitive: List[int], threshold: float) -> Dict[str, List[int]]:
    """Block placement given an association matrix."""
    d = rho.shape[0]
    s = sorted(set(int(j) for j in sensitive))
    for j in s:
        if not 0 <= j < d:
            raise DomainError(f"sensitive index {j} outside 0..{d - 1}")
    if not s:
        return {"order": list(range(d)), "sensitive": [], "associated": []}

    strength = np.max(np.abs(rho[s, :]), axis=0)
    associated = [k for k in range(d) if k not in s and strength[k] > threshold]
    associated.sort(key=lambda k: (-strength[k], k))
    placed = set(s) | set(associated)
    rest = [k for k in range(d) if k not in placed]
    return {"order": s + associated + rest, "sensitive": s, "associated": associated}


def find_order(data: Dataset, spec: OrderSpec) -> OrderResult:
    """
    Compute O* from the sensitive set and the association threshold.

    Args:
        data: real data (covariates only are used)
        spec: sensitive indices, threshold rho* and association measure

    Returns:
        OrderResult with the order, K, the association matrix, the safe
        truncation bound d+1-|K|-|S| and the recommended t_max
    """
    rho = association_matrix(data, spec.association)
    placed = order_from_matrix(rho, spec.sensitive, spec.threshold)
    d = data.n_features
    bound = d + 1 - len(placed["associated"]) - len(placed["sensitive"])
    result = OrderResult(
        order=placed["order"],
        sensitive=placed["sensitive"],
        associated=placed["associated"],
        association_matrix=rho.tolist(),
        safe_truncation_bound=bound,
        recommended_t_max=recommended_t_max(placed["order"], placed["sensitive"]),
        names=list(data.names),
    )
    logger.info(
        "[Ordering] S=%s K=%s safe bound=%d", placed["sensitive"], placed["associated"], bound
    )
    return result


def validate_order(order: List[int], sensitive: List[int], associated: List[int], d: int) -> Dict:
    """
    Check the block placement of an order.

    Returns:
        Dictionary with "valid", "violations" and "safe_truncation_bound"

    Raises:
        DataError: if order is not a permutation of 0..d-1
    """
    order = [int(i) for i in order]
    if sorted(order) != list(range(d)):
        raise DataError(f"order {order} is not a permutation of 0..{d - 1}")
    s, k = set(sensitive), set(associated)
    violations = []
    if s & k:
        violations.append(f"sensitive and associated sets overlap: {sorted(s & k)}")
    head = order[: len(s)]
    if set(head) != s:
        violations.append(f"positions 1..{len(s)} hold {head}, expected the sensitive set {sorted(s)}")
    block = order[len(s): len(s) + len(k)]
    if set(block) != k:
        violations.append(
            f"positions {len(s) + 1}..{len(s) + len(k)} hold {block}, expected the associated set {sorted(k)}"
        )
    return {
        "valid": not violations,
        "violations": violations,
        "safe_truncation_bound": d + 1 - len(k) - len(s),
    }
