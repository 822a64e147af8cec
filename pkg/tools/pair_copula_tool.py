"""
Pair Copula Tool - bivariate copula families used as vine building blocks.

Families: Independence, Gaussian, Clayton, Gumbel, Frank and Joe, the
asymmetric ones in 0/90/180/270 degree rotations. Conventions:
  - density(pc, u, v) is c(u, v); rotations act as
      180 -> c0(1-u, 1-v), 90 -> c0(v, 1-u), 270 -> c0(1-v, u)
  - h_function(pc, u, v) = dC(u, v)/dv, the conditional CDF of U given V = v
  - h_inverse(pc, w, v) solves h_function(pc, u, v) = w for u
  - response_* functions treat v as the latent uniform of a binary response
    Y = 1{v > 1 - prevalence}; they give P(Y | u), F(u | Y) and its inverse
Inputs are clamped to [1e-10, 1 - 1e-10].
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import DomainError, NumericError
from .numerics_tool import kendall_tau

logger = logging.getLogger(__name__)

EPS = 1e-10
ROTATIONS = (0, 90, 180, 270)

ArrayLike = Union[float, Sequence[float], np.ndarray]


class FamilyKind(str, Enum):
    INDEPENDENCE = "independence"
    GAUSSIAN = "gaussian"
    CLAYTON = "clayton"
    GUMBEL = "gumbel"
    FRANK = "frank"
    JOE = "joe"


# Families whose density is invariant under rotation by 180 degrees
# (and for which 90 / 270 are expressed through the parameter sign instead).
_ROTATION_FREE = {FamilyKind.INDEPENDENCE, FamilyKind.GAUSSIAN, FamilyKind.FRANK}


@dataclass(frozen=True)
class PairCopulaFamily:
    kind: FamilyKind
    rotation: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", FamilyKind(self.kind))
        if self.rotation not in ROTATIONS:
            raise DomainError(f"Unsupported rotation {self.rotation}; expected one of {ROTATIONS}")
        if self.kind in _ROTATION_FREE and self.rotation != 0:
            raise DomainError(f"{self.kind.value} copula does not take a rotation")

    @property
    def n_params(self) -> int:
        return 0 if self.kind is FamilyKind.INDEPENDENCE else 1

    @property
    def label(self) -> str:
        if self.rotation:
            return f"{self.kind.value}{self.rotation}"
        return self.kind.value

    def sort_key(self) -> Tuple[int, str, int]:
        return (self.n_params, self.kind.value, self.rotation)


INDEPENDENCE = PairCopulaFamily(FamilyKind.INDEPENDENCE)


@dataclass(frozen=True)
class PairCopula:
    """A family with its parameter; the parameter is validated on construction."""

    family: PairCopulaFamily
    theta: Optional[float] = None

    def __post_init__(self):
        if self.family.kind is FamilyKind.INDEPENDENCE:
            if self.theta is not None:
                raise DomainError("independence copula takes no parameter")
            return
        base = _BASE[self.family.kind]
        if self.theta is None or not np.isfinite(self.theta):
            raise DomainError(f"{self.family.label} copula needs a finite parameter")
        object.__setattr__(self, "theta", float(self.theta))
        if not base.admissible(self.theta):
            raise DomainError(
                f"theta={self.theta} outside the admissible range of the {self.family.kind.value} family"
            )

    @property
    def is_independence(self) -> bool:
        return self.family.kind is FamilyKind.INDEPENDENCE

    @property
    def label(self) -> str:
        if self.theta is None:
            return self.family.label
        return f"{self.family.label}({self.theta:.4g})"


INDEPENDENCE_COPULA = PairCopula(INDEPENDENCE)


@dataclass(frozen=True)
class PairCopulaFit:
    copula: PairCopula
    loglik: float
    n_obs: int

    @property
    def aic(self) -> float:
        return 2.0 * self.copula.family.n_params - 2.0 * self.loglik


# ============================================================================
# BASE (UNROTATED) FAMILIES
# a, b are clamped arrays; base h is dC0(a, b)/db. All families are
# exchangeable, so the conditional of b given a uses the same formula.
# ============================================================================

def _clamp(x: np.ndarray) -> np.ndarray:
    return np.clip(x, EPS, 1.0 - EPS)


class _BaseFamily:
    lower: float = -np.inf
    upper: float = np.inf
    lower_open: bool = False
    upper_open: bool = False

    def admissible(self, theta: float) -> bool:
        lo_ok = theta > self.lower if self.lower_open else theta >= self.lower
        hi_ok = theta < self.upper if self.upper_open else theta <= self.upper
        return bool(lo_ok and hi_ok)

    def search_bounds(self, tau: float) -> Tuple[float, float]:
        return self.lower + 1e-6, self.upper

    def logpdf(self, a, b, theta):
        raise NotImplementedError

    def hfunc(self, a, b, theta):
        raise NotImplementedError

    def cdf(self, a, b, theta):
        raise NotImplementedError

    def tau(self, theta: float) -> float:
        raise NotImplementedError

    def theta(self, tau: float) -> float:
        raise NotImplementedError

    def hinv(self, w, b, theta):
        """Safeguarded Newton on h(a | b) = w, bracketed in [EPS, 1 - EPS]."""
        lo = np.full_like(w, EPS)
        hi = np.full_like(w, 1.0 - EPS)
        x = w.copy()
        for _ in range(100):
            f = self.hfunc(x, b, theta) - w
            lo = np.where(f < 0.0, x, lo)
            hi = np.where(f > 0.0, x, hi)
            if np.max(np.abs(f)) < 1e-13:
                break
            dens = np.exp(self.logpdf(x, b, theta))
            step = x - f / dens
            bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
            x = np.where(bad, 0.5 * (lo + hi), step)
        return x


class _Independence(_BaseFamily):
    def admissible(self, theta):
        return theta is None

    def logpdf(self, a, b, theta):
        return np.zeros_like(a)

    def hfunc(self, a, b, theta):
        return a

    def hinv(self, w, b, theta):
        return w

    def cdf(self, a, b, theta):
        return a * b

    def tau(self, theta):
        return 0.0

    def theta(self, tau):
        return None


class _Gaussian(_BaseFamily):
    lower, upper = -0.9999, 0.9999
    lower_open = upper_open = True

    def search_bounds(self, tau):
        return -0.9999 + 1e-9, 0.9999 - 1e-9

    def logpdf(self, a, b, rho):
        x, y = special.ndtri(a), special.ndtri(b)
        r2 = 1.0 - rho * rho
        return -0.5 * np.log(r2) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)

    def hfunc(self, a, b, rho):
        return special.ndtr((special.ndtri(a) - rho * special.ndtri(b)) / np.sqrt(1.0 - rho * rho))

    def hinv(self, w, b, rho):
        return special.ndtr(np.sqrt(1.0 - rho * rho) * special.ndtri(w) + rho * special.ndtri(b))

    def cdf(self, a, b, rho):
        """Bivariate normal CDF through Owen's T function."""
        h, k = special.ndtri(a), special.ndtri(b)
        s = np.sqrt(1.0 - rho * rho)

        def owen(x, other):
            num = other - rho * x
            safe = np.where(x == 0.0, 1.0, x)
            return np.where(x == 0.0, 0.25 * np.sign(num), special.owens_t(x, num / (safe * s)))

        beta = np.where((h * k > 0.0) | ((h * k == 0.0) & (h + k >= 0.0)), 0.0, 0.5)
        out = 0.5 * (special.ndtr(h) + special.ndtr(k)) - owen(h, k) - owen(k, h) - beta
        both_zero = (h == 0.0) & (k == 0.0)
        return np.where(both_zero, 0.25 + np.arcsin(rho) / (2.0 * np.pi), out)

    def tau(self, rho):
        return 2.0 / np.pi * np.arcsin(rho)

    def theta(self, tau):
        return float(np.sin(np.pi * tau / 2.0))


class _Clayton(_BaseFamily):
    lower, upper = 1e-10, 28.0
    lower_open = True

    def _s(self, la, lb, theta):
        return np.expm1(-theta * la) + np.expm1(-theta * lb) + 1.0

    def logpdf(self, a, b, theta):
        la, lb = np.log(a), np.log(b)
        s = self._s(la, lb, theta)
        return np.log1p(theta) - (1.0 + theta) * (la + lb) - (2.0 + 1.0 / theta) * np.log(s)

    def hfunc(self, a, b, theta):
        la, lb = np.log(a), np.log(b)
        s = self._s(la, lb, theta)
        return np.exp((-theta - 1.0) * lb + (-1.0 / theta - 1.0) * np.log(s))

    def hinv(self, w, b, theta):
        lb = np.log(b)
        inner = np.exp(-theta * lb) * np.expm1(-theta / (1.0 + theta) * np.log(w))
        return np.exp(-np.log1p(inner) / theta)

    def cdf(self, a, b, theta):
        return np.exp(-np.log(self._s(np.log(a), np.log(b), theta)) / theta)

    def tau(self, theta):
        return theta / (theta + 2.0)

    def theta(self, tau):
        return 2.0 * tau / (1.0 - tau)


class _Gumbel(_BaseFamily):
    lower, upper = 1.0, 17.0

    def search_bounds(self, tau):
        return 1.0, 17.0

    def _parts(self, a, b, theta):
        x, y = -np.log(a), -np.log(b)
        s = x**theta + y**theta
        return x, y, s, s ** (1.0 / theta)

    def logpdf(self, a, b, theta):
        x, y, s, big_a = self._parts(a, b, theta)
        return (
            -big_a
            - np.log(a)
            - np.log(b)
            + (theta - 1.0) * (np.log(x) + np.log(y))
            + (1.0 / theta - 2.0) * np.log(s)
            + np.log(big_a + theta - 1.0)
        )

    def hfunc(self, a, b, theta):
        x, y, s, big_a = self._parts(a, b, theta)
        return np.exp(-big_a + (1.0 / theta - 1.0) * np.log(s) + (theta - 1.0) * np.log(y) - np.log(b))

    def cdf(self, a, b, theta):
        return np.exp(-self._parts(a, b, theta)[3])

    def tau(self, theta):
        return 1.0 - 1.0 / theta

    def theta(self, tau):
        return 1.0 / (1.0 - tau)


def _debye1(theta: float) -> float:
    """First Debye function (1/theta) * int_0^theta t / (e^t - 1) dt."""
    if theta == 0.0:
        return 1.0
    value, _ = integrate.quad(lambda t: t / np.expm1(t) if t != 0.0 else 1.0, 0.0, theta)
    return value / theta


class _Frank(_BaseFamily):
    lower, upper = -35.0, 35.0
    zero_band = 1e-4

    def admissible(self, theta):
        return bool(-35.0 <= theta <= 35.0 and abs(theta) >= self.zero_band)

    def search_bounds(self, tau):
        if tau >= 0.0:
            return self.zero_band, 35.0
        return -35.0, -self.zero_band

    def _parts(self, a, b, theta):
        return np.expm1(-theta * a), np.expm1(-theta * b), np.expm1(-theta)

    def logpdf(self, a, b, theta):
        ea, eb, e1 = self._parts(a, b, theta)
        return np.log(-theta * e1) - theta * (a + b) - 2.0 * np.log(np.abs(e1 + ea * eb))

    def hfunc(self, a, b, theta):
        ea, eb, e1 = self._parts(a, b, theta)
        return (eb + 1.0) * ea / (e1 + ea * eb)

    def hinv(self, w, b, theta):
        eb = np.expm1(-theta * b)
        e1 = np.expm1(-theta)
        ea = w * e1 / (1.0 + eb * (1.0 - w))
        return -np.log1p(ea) / theta

    def cdf(self, a, b, theta):
        ea, eb, e1 = self._parts(a, b, theta)
        return -np.log1p(ea * eb / e1) / theta

    def tau(self, theta):
        return 1.0 - 4.0 / theta + 4.0 * _debye1(theta) / theta

    def theta(self, tau):
        lo, hi = self.search_bounds(tau)
        if abs(tau) <= abs(self.tau(self.zero_band)):
            return self.zero_band if tau >= 0.0 else -self.zero_band
        return optimize.brentq(lambda t: self.tau(t) - tau, lo, hi, xtol=1e-12)


_JOE_TERMS = np.arange(1, 20001, dtype=float)


class _Joe(_BaseFamily):
    lower, upper = 1.0, 30.0
    lower_open = True

    def _parts(self, a, b, theta):
        pa = (1.0 - a) ** theta
        pb = (1.0 - b) ** theta
        return pa, pb, pa + pb - pa * pb

    def logpdf(self, a, b, theta):
        pa, pb, s = self._parts(a, b, theta)
        return (
            (theta - 1.0) * (np.log1p(-a) + np.log1p(-b))
            + (1.0 / theta - 2.0) * np.log(s)
            + np.log(theta - 1.0 + s)
        )

    def hfunc(self, a, b, theta):
        pa, pb, s = self._parts(a, b, theta)
        return np.exp((1.0 / theta - 1.0) * np.log(s) + (theta - 1.0) * np.log1p(-b)) * (1.0 - pa)

    def cdf(self, a, b, theta):
        return 1.0 - self._parts(a, b, theta)[2] ** (1.0 / theta)

    def tau(self, theta):
        k = _JOE_TERMS
        return float(1.0 - 4.0 * np.sum(1.0 / (k * (theta * k + 2.0) * (theta * (k - 1.0) + 2.0))))

    def theta(self, tau):
        if tau <= self.tau(1.0 + 1e-6):
            return 1.0 + 1e-6
        return optimize.brentq(lambda t: self.tau(t) - tau, 1.0 + 1e-6, 30.0, xtol=1e-12)


_BASE: Dict[FamilyKind, _BaseFamily] = {
    FamilyKind.INDEPENDENCE: _Independence(),
    FamilyKind.GAUSSIAN: _Gaussian(),
    FamilyKind.CLAYTON: _Clayton(),
    FamilyKind.GUMBEL: _Gumbel(),
    FamilyKind.FRANK: _Frank(),
    FamilyKind.JOE: _Joe(),
}


# ============================================================================
# ROTATED EVALUATION
# ============================================================================

def _prepare(u: ArrayLike, v: ArrayLike) -> Tuple[np.ndarray, np.ndarray, bool]:
    scalar = np.ndim(u) == 0 and np.ndim(v) == 0
    ua, va = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    ua = _clamp(np.array(ua, dtype=float, ndmin=1))
    va = _clamp(np.array(va, dtype=float, ndmin=1))
    return ua, va, scalar


def _finish(value: np.ndarray, scalar: bool):
    return float(value[0]) if scalar else value


def _rotated_args(rotation: int, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if rotation == 90:
        return v, 1.0 - u
    if rotation == 180:
        return 1.0 - u, 1.0 - v
    if rotation == 270:
        return 1.0 - v, u
    return u, v


def log_density(pc: PairCopula, u: ArrayLike, v: ArrayLike):
    """log c(u, v); finite everywhere on the clamped square."""
    ua, va, scalar = _prepare(u, v)
    base = _BASE[pc.family.kind]
    a, b = _rotated_args(pc.family.rotation, ua, va)
    return _finish(base.logpdf(a, b, pc.theta), scalar)


def density(pc: PairCopula, u: ArrayLike, v: ArrayLike):
    """Copula density c(u, v)."""
    value = log_density(pc, u, v)
    return float(np.exp(value)) if np.ndim(value) == 0 else np.exp(value)


def h_function(pc: PairCopula, u: ArrayLike, v: ArrayLike):
    """Conditional CDF of U at u given V = v."""
    ua, va, scalar = _prepare(u, v)
    if pc.is_independence:
        return _finish(ua, scalar)
    base = _BASE[pc.family.kind]
    rot, theta = pc.family.rotation, pc.theta
    if rot == 90:
        out = 1.0 - base.hfunc(1.0 - ua, va, theta)
    elif rot == 180:
        out = 1.0 - base.hfunc(1.0 - ua, 1.0 - va, theta)
    elif rot == 270:
        out = base.hfunc(ua, 1.0 - va, theta)
    else:
        out = base.hfunc(ua, va, theta)
    return _finish(_clamp(out), scalar)


def h_inverse(pc: PairCopula, w: ArrayLike, v: ArrayLike):
    """Solve h_function(pc, u, v) = w for u."""
    wa, va, scalar = _prepare(w, v)
    if pc.is_independence:
        return _finish(wa, scalar)
    base = _BASE[pc.family.kind]
    rot, theta = pc.family.rotation, pc.theta
    if rot == 90:
        out = 1.0 - base.hinv(_clamp(1.0 - wa), va, theta)
    elif rot == 180:
        out = 1.0 - base.hinv(_clamp(1.0 - wa), _clamp(1.0 - va), theta)
    elif rot == 270:
        out = base.hinv(wa, _clamp(1.0 - va), theta)
    else:
        out = base.hinv(wa, va, theta)
    return _finish(_clamp(out), scalar)


def c_cdf(pc: PairCopula, u: ArrayLike, v: ArrayLike):
    """Copula distribution function C(u, v)."""
    ua, va, scalar = _prepare(u, v)
    base = _BASE[pc.family.kind]
    rot, theta = pc.family.rotation, pc.theta
    if rot == 90:
        out = va - base.cdf(va, 1.0 - ua, theta)
    elif rot == 180:
        out = ua + va - 1.0 + base.cdf(1.0 - ua, 1.0 - va, theta)
    elif rot == 270:
        out = ua - base.cdf(1.0 - va, ua, theta)
    else:
        out = base.cdf(ua, va, theta)
    return _finish(np.clip(out, 0.0, 1.0), scalar)


_SWAPPED_ROTATION = {0: 0, 90: 270, 180: 180, 270: 90}


def swap_arguments(pc: PairCopula) -> PairCopula:
    """Copula of (V, U) when pc is the copula of (U, V)."""
    rot = pc.family.rotation
    if rot in (0, 180):
        return pc
    return PairCopula(PairCopulaFamily(pc.family.kind, _SWAPPED_ROTATION[rot]), pc.theta)


def h_function_given_u(pc: PairCopula, u: ArrayLike, v: ArrayLike):
    """Conditional CDF of V at v given U = u."""
    return h_function(swap_arguments(pc), v, u)


# ============================================================================
# BINARY RESPONSE EDGES
# The response is the threshold 1{V > 1 - prevalence} of the latent uniform V
# that the edge couples with the covariate's pseudo-observation U.
# ============================================================================

def _binary(y: ArrayLike, prevalence: float) -> np.ndarray:
    if not 0.0 < prevalence < 1.0:
        raise DomainError(f"prevalence {prevalence} outside (0, 1)")
    ya = np.asarray(y)
    if np.any((ya != 0) & (ya != 1)):
        raise DomainError("response must be coded 0 / 1")
    return ya.astype(int)


def response_probability(pc: PairCopula, u: ArrayLike, y: ArrayLike, prevalence: float) -> np.ndarray:
    """P(Y = y | U = u)."""
    ya = _binary(y, prevalence)
    below = np.asarray(h_function_given_u(pc, u, 1.0 - prevalence), dtype=float)
    return np.clip(np.where(ya == 1, 1.0 - below, below), EPS, 1.0)


def response_log_density(pc: PairCopula, u: ArrayLike, y: ArrayLike, prevalence: float) -> np.ndarray:
    """log P(Y = y | U = u) - log P(Y = y); zero for the independence copula."""
    ya = _binary(y, prevalence)
    p_y = np.where(ya == 1, prevalence, 1.0 - prevalence)
    return np.log(response_probability(pc, u, ya, prevalence)) - np.log(p_y)


def response_conditional_cdf(pc: PairCopula, u: ArrayLike, y: ArrayLike, prevalence: float) -> np.ndarray:
    """F(u | Y = y) = P(U <= u, Y = y) / P(Y = y)."""
    ya = _binary(y, prevalence)
    cut = 1.0 - prevalence
    ua = _clamp(np.asarray(u, dtype=float))
    joint_below = np.asarray(c_cdf(pc, ua, cut), dtype=float)
    return _clamp(np.where(ya == 1, (ua - joint_below) / prevalence, joint_below / cut))


def response_conditional_inverse(pc: PairCopula, a: ArrayLike, y: ArrayLike, prevalence: float) -> np.ndarray:
    """Solve response_conditional_cdf(pc, u, y, prevalence) = a for u by safeguarded Newton."""
    ya = _binary(y, prevalence)
    target, ya = np.broadcast_arrays(_clamp(np.asarray(a, dtype=float)), ya)
    target = np.array(target, dtype=float)
    if pc.is_independence:
        return target
    lo = np.full_like(target, EPS)
    hi = np.full_like(target, 1.0 - EPS)
    x = target.copy()
    for _ in range(100):
        f = response_conditional_cdf(pc, x, ya, prevalence) - target
        lo = np.where(f < 0.0, x, lo)
        hi = np.where(f > 0.0, x, hi)
        if np.max(np.abs(f)) < 1e-12:
            break
        slope = np.exp(response_log_density(pc, x, ya, prevalence))
        step = x - f / slope
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        x = np.where(bad, 0.5 * (lo + hi), step)
    return _clamp(x)


# ============================================================================
# KENDALL'S TAU <-> PARAMETER
# ============================================================================

def _tau_sign(family: PairCopulaFamily) -> int:
    """+1 / -1 for families restricted to one sign of tau, 0 when both are reachable."""
    if family.kind in _ROTATION_FREE:
        return 0
    return -1 if family.rotation in (90, 270) else 1


def theta_to_tau(family: PairCopulaFamily, theta: Optional[float]) -> float:
    """Kendall's tau implied by a parameter, sign-adjusted for 90/270 rotations."""
    if family.kind is FamilyKind.INDEPENDENCE:
        return 0.0
    PairCopula(family, theta)
    tau = float(_BASE[family.kind].tau(theta))
    return -tau if _tau_sign(family) < 0 else tau


def attainable_tau(family: PairCopulaFamily) -> Tuple[float, float]:
    """Closed-ish interval of tau values the family can represent."""
    kind = family.kind
    if kind is FamilyKind.INDEPENDENCE:
        return 0.0, 0.0
    base = _BASE[kind]
    if kind is FamilyKind.GAUSSIAN:
        top = base.tau(0.9999)
        return -top, top
    if kind is FamilyKind.FRANK:
        top = base.tau(35.0)
        return -top, top
    lo_theta = 1e-10 if kind is FamilyKind.CLAYTON else 1.0
    lo, hi = base.tau(lo_theta), base.tau(base.upper)
    if _tau_sign(family) < 0:
        return -hi, -lo
    return lo, hi


def tau_to_theta(family: PairCopulaFamily, tau: float) -> Optional[float]:
    """
    Parameter matching Kendall's tau.

    Raises:
        DomainError: if tau is not attainable by the family and rotation
    """
    if family.kind is FamilyKind.INDEPENDENCE:
        if tau != 0.0:
            raise DomainError("independence copula only attains tau = 0")
        return None
    lo, hi = attainable_tau(family)
    if not lo <= tau <= hi:
        raise DomainError(f"tau={tau:.4f} not attainable by {family.label} (range [{lo:.4f}, {hi:.4f}])")
    base = _BASE[family.kind]
    base_tau = -tau if _tau_sign(family) < 0 else tau
    if family.kind is FamilyKind.FRANK and abs(base_tau) < 1e-5:
        return _Frank.zero_band if base_tau >= 0 else -_Frank.zero_band
    theta = float(base.theta(base_tau))
    return float(np.clip(theta, *_clip_range(family.kind)))


def _clip_range(kind: FamilyKind) -> Tuple[float, float]:
    return {
        FamilyKind.GAUSSIAN: (-0.9999 + 1e-9, 0.9999 - 1e-9),
        FamilyKind.CLAYTON: (1e-6, 28.0),
        FamilyKind.GUMBEL: (1.0, 17.0),
        FamilyKind.FRANK: (-35.0, 35.0),
        FamilyKind.JOE: (1.0 + 1e-6, 30.0),
    }[kind]


# ============================================================================
# ESTIMATION
# ============================================================================

def candidate_families() -> List[PairCopulaFamily]:
    """Every family with every admissible rotation."""
    out = [INDEPENDENCE, PairCopulaFamily(FamilyKind.GAUSSIAN), PairCopulaFamily(FamilyKind.FRANK)]
    for kind in (FamilyKind.CLAYTON, FamilyKind.GUMBEL, FamilyKind.JOE):
        out.extend(PairCopulaFamily(kind, rot) for rot in ROTATIONS)
    return out


def _as_pairs(pseudo_obs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(pseudo_obs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError(f"pseudo-observations must be n x 2, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise DomainError("need at least 2 pseudo-observations")
    if np.any((arr <= 0.0) | (arr >= 1.0)) or not np.all(np.isfinite(arr)):
        raise DomainError("pseudo-observations must lie in the open unit square")
    return _clamp(arr[:, 0]), _clamp(arr[:, 1])


def loglik(pc: PairCopula, pseudo_obs: np.ndarray) -> float:
    u, v = _as_pairs(pseudo_obs)
    return float(np.sum(log_density(pc, u, v)))


def fit_mle(family: PairCopulaFamily, pseudo_obs: np.ndarray, tau: Optional[float] = None) -> PairCopulaFit:
    """
    One-parameter maximum likelihood by bounded Brent search over the
    admissible range, seeded by Kendall's-tau inversion.

    Args:
        family: family and rotation to fit
        pseudo_obs: n x 2 array of (u, v) pseudo-observations
        tau: precomputed empirical Kendall's tau (optional)

    Raises:
        NumericError: if the optimizer fails to converge
    """
    u, v = _as_pairs(pseudo_obs)
    n = u.size
    if n < 10:
        raise DomainError(f"fit_mle needs at least 10 observations, got {n}")
    if family.kind is FamilyKind.INDEPENDENCE:
        return PairCopulaFit(INDEPENDENCE_COPULA, 0.0, n)

    if tau is None:
        tau = kendall_tau(u, v)
    lo_tau, hi_tau = attainable_tau(family)
    init_tau = float(np.clip(tau, lo_tau, hi_tau))
    theta0 = tau_to_theta(family, init_tau)

    base = _BASE[family.kind]
    lo, hi = base.search_bounds(-init_tau if _tau_sign(family) < 0 else init_tau)

    def negll(theta: float) -> float:
        a, b = _rotated_args(family.rotation, u, v)
        value = -np.sum(base.logpdf(a, b, theta))
        return value if np.isfinite(value) else 1e300

    res = optimize.minimize_scalar(negll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8, "maxiter": 500})
    if not res.success or not np.isfinite(res.fun):
        raise NumericError(f"MLE for {family.label} copula did not converge: {res.message}")

    theta = float(res.x)
    if negll(theta0) < negll(theta):
        theta = theta0
    pc = PairCopula(family, theta)
    return PairCopulaFit(pc, loglik(pc, np.column_stack([u, v])), n)


def independence_pvalue(pseudo_obs: np.ndarray, tau: Optional[float] = None) -> float:
    """Two-sided p-value of the asymptotic Kendall's-tau test of independence."""
    u, v = _as_pairs(pseudo_obs)
    n = u.size
    if tau is None:
        tau = kendall_tau(u, v)
    z = np.sqrt(9.0 * n * (n - 1.0) / (2.0 * (2.0 * n + 5.0))) * abs(tau)
    return float(2.0 * special.ndtr(-z))


def select_aic(
    pseudo_obs: np.ndarray,
    candidates: Optional[Iterable[PairCopulaFamily]] = None,
    independence_level: Optional[float] = 0.01,
) -> PairCopulaFit:
    """
    Fit every candidate and keep the one with the smallest AIC.

    Ties break toward fewer parameters, then family name, then rotation.
    When independence_level is set and the Kendall's-tau independence test
    does not reject at that level, Independence is returned directly.
    Rotations whose tau sign disagrees with the data are not fitted.
    """
    fams = list(candidates) if candidates is not None else candidate_families()
    if not fams:
        raise DomainError("select_aic needs a nonempty candidate set")
    if INDEPENDENCE not in fams:
        raise DomainError("candidate set must contain the independence copula")

    u, v = _as_pairs(pseudo_obs)
    obs = np.column_stack([u, v])
    tau = kendall_tau(u, v)
    if independence_level is not None and independence_pvalue(obs, tau) > independence_level:
        return PairCopulaFit(INDEPENDENCE_COPULA, 0.0, u.size)

    fits: List[PairCopulaFit] = []
    for fam in fams:
        sign = _tau_sign(fam)
        if sign and tau * sign < 0.0:
            continue
        try:
            fits.append(fit_mle(fam, obs, tau=tau))
        except NumericError as e:
            logger.warning("[PairCopula] Warning: skipping %s: %s", fam.label, e)

    return min(fits, key=lambda f: (f.aic,) + f.copula.family.sort_key())


def fit_mle_response(
    family: PairCopulaFamily,
    u: ArrayLike,
    y: ArrayLike,
    prevalence: float,
    tau: Optional[float] = None,
) -> PairCopulaFit:
    """
    Maximum likelihood for a (covariate, binary response) edge.

    The log-likelihood is sum_i log P(y_i | u_i) / P(y_i), so Independence
    scores 0 and the AIC values compare across families as in select_aic.

    Raises:
        NumericError: if the optimizer fails to converge
    """
    ua = _clamp(np.asarray(u, dtype=float).ravel())
    ya = _binary(y, prevalence).ravel()
    n = ua.size
    if n < 10 or ya.size != n:
        raise DomainError(f"fit_mle_response needs at least 10 matched observations, got {n} and {ya.size}")
    if family.kind is FamilyKind.INDEPENDENCE:
        return PairCopulaFit(INDEPENDENCE_COPULA, 0.0, n)

    if tau is None:
        tau = kendall_tau(ua, ya)
    base = _BASE[family.kind]
    lo, hi = base.search_bounds(-tau if _tau_sign(family) < 0 else tau)

    def negll(theta: float) -> float:
        try:
            pc = PairCopula(family, theta)
        except DomainError:
            return 1e300
        value = -np.sum(response_log_density(pc, ua, ya, prevalence))
        return value if np.isfinite(value) else 1e300

    res = optimize.minimize_scalar(negll, bounds=(lo, hi), method="bounded", options={"xatol": 1e-8, "maxiter": 500})
    if not res.success or not np.isfinite(res.fun) or res.fun >= 1e300:
        raise NumericError(f"MLE for {family.label} response edge did not converge: {res.message}")
    theta = float(res.x)
    return PairCopulaFit(PairCopula(family, theta), -negll(theta), n)


def select_aic_response(
    u: ArrayLike,
    y: ArrayLike,
    prevalence: float,
    candidates: Optional[Iterable[PairCopulaFamily]] = None,
    independence_level: Optional[float] = 0.01,
) -> PairCopulaFit:
    """
    AIC selection for a (covariate, binary response) edge.

    Same rules as select_aic; the independence pre-test is the tie-corrected
    Kendall's tau_b test between the covariate and the response.
    """
    fams = list(candidates) if candidates is not None else candidate_families()
    if INDEPENDENCE not in fams:
        raise DomainError("candidate set must contain the independence copula")
    ua = _clamp(np.asarray(u, dtype=float).ravel())
    ya = _binary(y, prevalence).ravel()
    test = stats.kendalltau(ua, ya, variant="b")
    tau = float(test[0]) if np.isfinite(test[0]) else 0.0
    if independence_level is not None and not test[1] <= independence_level:
        return PairCopulaFit(INDEPENDENCE_COPULA, 0.0, ua.size)

    fits: List[PairCopulaFit] = []
    for fam in fams:
        sign = _tau_sign(fam)
        if sign and tau * sign < 0.0:
            continue
        try:
            fits.append(fit_mle_response(fam, ua, ya, prevalence, tau=tau))
        except NumericError as e:
            logger.warning("[PairCopula] Warning: skipping %s response edge: %s", fam.label, e)

    return min(fits, key=lambda f: (f.aic,) + f.copula.family.sort_key())
