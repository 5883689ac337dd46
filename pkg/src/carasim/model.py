"""Response models and covariate distributions for CARA trial simulation.

Each treatment arm follows a one-parameter exponential-family regression with
identity link: logistic (binary response, unit dispersion) or normal-linear
(Gaussian response, variance ``dispersion``).  Coefficient vectors are rows, so
the linear predictor for arm ``k`` at covariate ``x`` is ``theta_k @ x``.
Covariates are i.i.d. draws from a bounded distribution: either an explicit
finite support with probabilities, or a product of independent bounded
one-dimensional coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.random import Generator
from scipy.special import ndtri

__all__ = [
    "Uniform",
    "TwoPoint",
    "Constant",
    "CovariateSpec",
    "ArmModel",
    "TrialModel",
    "sample_covariate",
    "sample_covariates",
    "mean_response",
    "sample_response",
    "response_from_uniform",
    "conditional_variance",
    "conditional_fisher_info",
    "score",
]

_PROB_TOL = 1e-12
# Largest finite support we are willing to enumerate for a product spec.
_ENUM_CAP = 4096


# ---------------------------------------------------------------------------
# Covariate distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    """Continuous uniform coordinate on the bounded interval [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("uniform coordinate bounds must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"uniform coordinate needs lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class TwoPoint:
    """Coordinate taking value ``a`` with probability ``p_a``, else ``b``."""

    a: float
    b: float
    p_a: float = 0.5

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("two-point coordinate values must be finite")
        if not 0.0 < self.p_a < 1.0:
            raise ValueError(f"two-point probability must lie in (0, 1), got {self.p_a}")


@dataclass(frozen=True)
class Constant:
    """Degenerate coordinate equal to ``value``."""

    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("constant coordinate value must be finite")


CoordinateDist = Uniform | TwoPoint | Constant


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CovariateSpec:
    """Distribution of the i.i.d. covariate vector.

    Two kinds are supported.  ``"discrete"`` lists the support points and
    their probabilities explicitly.  ``"continuous-product"`` specifies
    independent coordinates, each uniform, two-point, or constant.  With
    ``intercept=True`` a leading constant-1 coordinate is prepended; ``d`` is
    the final dimension including that intercept.

    Product specs with no uniform coordinate have finite support and are
    enumerated internally, so expectations over them are exact sums.
    """

    kind: Literal["discrete", "continuous-product"]
    d: int
    support: np.ndarray | None = None  # (S, d), includes intercept column
    probs: np.ndarray | None = None  # (S,)
    coords: tuple[CoordinateDist, ...] | None = None
    intercept: bool = False
    # Cached enumeration for product specs with finite support; see __post_init__.
    _enum: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)
    _cum: np.ndarray | None = field(default=None, repr=False, compare=False)
    _cum_small: tuple[float, ...] | None = field(default=None, repr=False, compare=False)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def discrete(points: Sequence[Sequence[float]] | np.ndarray,
                 probs: Sequence[float] | np.ndarray,
                 intercept: bool = False) -> "CovariateSpec":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        pr = np.asarray(probs, dtype=float)
        if pts.ndim != 2:
            raise ValueError("discrete support must be a 2-d array of points")
        if pr.ndim != 1 or pr.shape[0] != pts.shape[0]:
            raise ValueError(
                f"probs has length {pr.shape[0] if pr.ndim == 1 else pr.shape}, "
                f"expected {pts.shape[0]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("discrete support points must be finite")
        if np.any(pr <= 0.0):
            raise ValueError("support probabilities must be strictly positive")
        if abs(pr.sum() - 1.0) > _PROB_TOL:
            raise ValueError(f"support probabilities sum to {pr.sum()!r}, not 1")
        if intercept:
            pts = np.hstack([np.ones((pts.shape[0], 1)), pts])
        return CovariateSpec(kind="discrete", d=pts.shape[1],
                             support=_as_readonly(pts), probs=_as_readonly(pr),
                             intercept=intercept)

    @staticmethod
    def product(coords: Sequence[CoordinateDist], intercept: bool = False) -> "CovariateSpec":
        coords = tuple(coords)
        if not coords:
            raise ValueError("product spec needs at least one coordinate")
        for c in coords:
            if not isinstance(c, (Uniform, TwoPoint, Constant)):
                raise ValueError(f"unsupported coordinate distribution: {c!r}")
        if intercept:
            coords = (Constant(1.0),) + coords
        return CovariateSpec(kind="continuous-product", d=len(coords), coords=coords)

    @staticmethod
    def constant(values: Sequence[float] | float) -> "CovariateSpec":
        """Degenerate spec: the covariate always equals ``values``."""
        v = np.atleast_1d(np.asarray(values, dtype=float))
        return CovariateSpec.discrete(v[None, :], [1.0])

    def __post_init__(self):
        if self.kind == "discrete":
            if self.support is None or self.probs is None:
                raise ValueError("discrete spec requires support and probs")
            enum = (self.support, self.probs)
        elif self.kind == "continuous-product":
            if self.coords is None:
                raise ValueError("product spec requires coordinate distributions")
            enum = _enumerate_product(self.coords)
        else:
            raise ValueError(f"unknown covariate kind: {self.kind!r}")
        object.__setattr__(self, "_enum", enum)
        if enum is not None:
            cum = np.cumsum(enum[1])
            object.__setattr__(self, "_cum", cum)
            if cum.shape[0] <= 32:
                object.__setattr__(self, "_cum_small", tuple(float(c) for c in cum))

    # -- queries ------------------------------------------------------------

    def enumerated(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(points, probs) when the support is finite, else None."""
        return self._enum

    def mass(self, x: np.ndarray) -> float:
        """P(xi = x); zero when x is off-support or the spec is continuous."""
        if self._enum is None:
            return 0.0
        pts, pr = self._enum
        hit = np.all(pts == np.asarray(x, dtype=float), axis=1)
        idx = np.flatnonzero(hit)
        return float(pr[idx[0]]) if idx.size else 0.0

    def has_unit_first_coordinate(self) -> bool:
        if self._enum is not None:
            return bool(np.all(self._enum[0][:, 0] == 1.0))
        return self.coords is not None and self.coords[0] == Constant(1.0)

    # -- sampling -----------------------------------------------------------

    def sample_index(self, rng: Generator) -> int:
        """Draw a support index (finite-support specs only)."""
        u = rng.random()
        if self._cum_small is not None:
            for i, c in enumerate(self._cum_small):
                if u < c:
                    return i
            return len(self._cum_small) - 1
        return min(int(np.searchsorted(self._cum, u, side="right")),
                   self._cum.shape[0] - 1)

    def sample(self, rng: Generator) -> np.ndarray:
        if self._enum is not None:
            return np.array(self._enum[0][self.sample_index(rng)])
        out = np.empty(self.d)
        for i, c in enumerate(self.coords):
            if isinstance(c, Constant):
                out[i] = c.value
            elif isinstance(c, Uniform):
                out[i] = c.lo + (c.hi - c.lo) * rng.random()
            else:
                out[i] = c.a if rng.random() < c.p_a else c.b
        return out

    def sample_batch(self, rng: Generator, size: int) -> np.ndarray:
        if self._enum is not None:
            idx = np.searchsorted(self._cum, rng.random(size), side="right")
            np.minimum(idx, self._cum.shape[0] - 1, out=idx)
            return np.array(self._enum[0][idx])
        out = np.empty((size, self.d))
        for i, c in enumerate(self.coords):
            if isinstance(c, Constant):
                out[:, i] = c.value
            elif isinstance(c, Uniform):
                out[:, i] = c.lo + (c.hi - c.lo) * rng.random(size)
            else:
                out[:, i] = np.where(rng.random(size) < c.p_a, c.a, c.b)
        return out


def _enumerate_product(coords: tuple[CoordinateDist, ...]) -> tuple[np.ndarray, np.ndarray] | None:
    """Tensor-expand a product spec with no uniform coordinate."""
    values: list[np.ndarray] = []
    weights: list[np.ndarray] = []
    size = 1
    for c in coords:
        if isinstance(c, Uniform):
            return None
        if isinstance(c, Constant):
            values.append(np.array([c.value]))
            weights.append(np.array([1.0]))
        else:
            values.append(np.array([c.a, c.b]))
            weights.append(np.array([c.p_a, 1.0 - c.p_a]))
        size *= values[-1].size
        if size > _ENUM_CAP:
            return None
    grids = np.meshgrid(*values, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*weights, indexing="ij")
    pr = np.ones(size)
    for w in wgrids:
        pr = pr * w.ravel()
    return _as_readonly(pts), _as_readonly(pr)


# ---------------------------------------------------------------------------
# Arm response models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArmModel:
    """One treatment arm: logistic or normal-linear regression, identity link.

    ``dispersion`` is the exponential-family dispersion: fixed at 1 for the
    logistic family, equal to the error variance for the normal family.
    """

    family: Literal["logistic", "normal-linear"]
    dispersion: float = 1.0

    def __post_init__(self):
        if self.family not in ("logistic", "normal-linear"):
            raise ValueError(f"unknown family: {self.family!r}")
        if not (math.isfinite(self.dispersion) and self.dispersion > 0.0):
            raise ValueError(f"dispersion must be positive and finite, got {self.dispersion}")
        if self.family == "logistic" and self.dispersion != 1.0:
            raise ValueError("logistic family has dispersion fixed at 1")


def _check_dims(theta_k: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    theta_k = np.asarray(theta_k, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta_k.ndim != 1 or x.ndim != 1 or theta_k.shape != x.shape:
        raise ValueError(
            f"coefficient/covariate shape mismatch: {theta_k.shape} vs {x.shape}")
    return theta_k, x


def _expit(mu: float) -> float:
    if mu >= 0.0:
        return 1.0 / (1.0 + math.exp(-mu))
    e = math.exp(mu)
    return e / (1.0 + e)


def mean_response(arm: ArmModel, theta_k: np.ndarray, x: np.ndarray) -> float:
    """E[Y | xi = x] under arm ``arm`` with coefficients ``theta_k``."""
    theta_k, x = _check_dims(theta_k, x)
    mu = float(theta_k @ x)
    return _expit(mu) if arm.family == "logistic" else mu


def conditional_variance(arm: ArmModel, theta_k: np.ndarray, x: np.ndarray) -> float:
    """Var(Y | xi = x): p(1-p) for logistic, the error variance for normal."""
    if arm.family == "logistic":
        p = mean_response(arm, theta_k, x)
        return p * (1.0 - p)
    _check_dims(theta_k, x)
    return arm.dispersion


def sample_response(arm: ArmModel, theta_k: np.ndarray, x: np.ndarray,
                    rng: Generator) -> float:
    theta_k, x = _check_dims(theta_k, x)
    mu = float(theta_k @ x)
    if arm.family == "logistic":
        return 1.0 if rng.random() < _expit(mu) else 0.0
    return mu + math.sqrt(arm.dispersion) * rng.standard_normal()


# Engine-side response primitive: one uniform per patient, transformed through
# the chosen arm's inverse CDF.  Keeps response streams arm-agnostic so that
# potential responses of unchosen arms are never materialised.
def response_from_uniform(arm: ArmModel, theta_k: np.ndarray, x: np.ndarray,
                          u: float) -> float:
    theta_k, x = _check_dims(theta_k, x)
    mu = float(theta_k @ x)
    if arm.family == "logistic":
        return 1.0 if u < _expit(mu) else 0.0
    u = min(max(u, 2.0 ** -55), 1.0 - 2.0 ** -53)
    return mu + math.sqrt(arm.dispersion) * float(ndtri(u))


def conditional_fisher_info(arm: ArmModel, theta_k: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Fisher information I_k(theta_k | x), a d-by-d outer-product matrix.

    Identity link: p(1-p) x'x for logistic, x'x / sigma^2 for normal-linear.
    """
    theta_k, x = _check_dims(theta_k, x)
    if arm.family == "logistic":
        p = _expit(float(theta_k @ x))
        w = p * (1.0 - p)
    else:
        w = 1.0 / arm.dispersion
    return w * np.outer(x, x)


def score(arm: ArmModel, theta_k: np.ndarray, x: np.ndarray, y: float) -> np.ndarray:
    """Gradient of the log-density in theta_k: (y - E[Y|x]) x / dispersion."""
    theta_k, x = _check_dims(theta_k, x)
    mu = float(theta_k @ x)
    if arm.family == "logistic":
        return (y - _expit(mu)) * x
    return ((y - mu) / arm.dispersion) * x


# ---------------------------------------------------------------------------
# Trial model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialModel:
    """Full data-generating model: K arms, covariate law, truth, parameter box.

    ``true_theta`` is the (K, d) matrix of true coefficient rows and must lie
    strictly inside the per-arm box [box_lo, box_hi].  Estimates are always
    clamped back into the box, which keeps allocation rules evaluated at
    estimated coefficients well defined from the first adaptive patient on.

    ``shared_slopes=True`` declares a homoscedastic normal-linear model whose
    non-intercept coefficients are common across arms; estimation then runs a
    single joint least-squares fit (arm indicators plus shared slopes).
    """

    arms: tuple[ArmModel, ...]
    covariates: CovariateSpec
    true_theta: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    shared_slopes: bool = False

    def __post_init__(self):
        if len(self.arms) < 2:
            raise ValueError("a trial needs at least two arms")
        K, d = len(self.arms), self.covariates.d
        theta = np.ascontiguousarray(np.asarray(self.true_theta, dtype=float))
        if theta.shape != (K, d):
            raise ValueError(f"true_theta has shape {theta.shape}, expected {(K, d)}")
        lo = np.broadcast_to(np.asarray(self.box_lo, dtype=float), (K, d)).copy()
        hi = np.broadcast_to(np.asarray(self.box_hi, dtype=float), (K, d)).copy()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("parameter box must be bounded")
        if not np.all(lo < hi):
            raise ValueError("parameter box needs box_lo < box_hi coordinatewise")
        if not (np.all(lo < theta) and np.all(theta < hi)):
            raise ValueError("true_theta must lie strictly inside the parameter box")
        if self.shared_slopes:
            if any(a.family != "normal-linear" for a in self.arms):
                raise ValueError("shared_slopes requires all arms normal-linear")
            if not self.covariates.has_unit_first_coordinate():
                raise ValueError("shared_slopes requires a leading constant-1 covariate")
            if d >= 2 and not np.allclose(theta[:, 1:], theta[0, 1:]):
                raise ValueError("shared_slopes requires equal non-intercept rows in true_theta")
        object.__setattr__(self, "true_theta", _as_readonly(theta))
        object.__setattr__(self, "box_lo", _as_readonly(lo))
        object.__setattr__(self, "box_hi", _as_readonly(hi))

    @property
    def K(self) -> int:
        return len(self.arms)

    @property
    def d(self) -> int:
        return self.covariates.d


def sample_covariate(spec: CovariateSpec, rng: Generator) -> np.ndarray:
    """Draw one covariate vector."""
    return spec.sample(rng)


def sample_covariates(spec: CovariateSpec, rng: Generator, size: int) -> np.ndarray:
    """Draw ``size`` i.i.d. covariate vectors as a (size, d) array."""
    return spec.sample_batch(rng, size)
