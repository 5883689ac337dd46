"""Allocation rules mapping (coefficients, covariate) to arm probabilities.

A rule evaluates ``pi(theta, x)``, a strictly positive probability vector over
the K arms, from the current coefficient matrix ``theta`` (K rows) and the
incoming patient's covariate ``x``.  All built-in rules are smooth in
``theta``; ``jacobian`` returns the K-by-(K*d) matrix of partial derivatives
with columns ordered row-major over (arm j, coordinate l), i.e. column
``j*d + l`` holds d pi_k / d theta_{j,l}.

Built-in kinds:

* ``ratio-of-g``      pi_k = G(z_k) / sum_j G(z_j) with z_k = theta_k @ x and
                      G one of ``exp`` or ``one-plus-z-squared``.
* ``exponential``     pi_k = exp(T z_k) / sum_j exp(T z_j).
* ``odds-ratio``      two arms, pi_k = exp(z_k) / (exp(z_1) + exp(z_2)).
* ``two-arm-g-difference``  two arms, pi = (G(z_1 - z_2), G(z_2 - z_1)) with
                      G(u) = Phi(u / T), so G(0) = 1/2 and G(-u) = 1 - G(u).
* ``covariate-free-normal`` two arms, ignores x; pi_1 = Phi((theta_{1,1} -
                      theta_{2,1}) / T) using the leading (intercept)
                      coefficients only.

User-supplied rules are wrapped with ``AllocationRule.custom``; their Jacobian
falls back to central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

__all__ = ["AllocationRule", "probabilities", "jacobian", "jacobian_fd"]

_KINDS = ("ratio-of-g", "exponential", "odds-ratio", "two-arm-g-difference",
          "covariate-free-normal", "custom")
_G_NAMES = ("exp", "one-plus-z-squared")
# Floor applied to computed probabilities purely to avoid floating underflow;
# never a policy-level clip.
_FLOOR = 1e-300


@dataclass(frozen=True)
class AllocationRule:
    kind: str
    T: float | None = None
    g_name: str | None = None
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown allocation kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind in ("exponential", "two-arm-g-difference", "covariate-free-normal"):
            if self.T is None or not (math.isfinite(self.T) and self.T > 0.0):
                raise ValueError(f"{self.kind} rule requires a positive spread parameter T")
        if self.kind == "ratio-of-g":
            if self.g_name not in _G_NAMES:
                raise ValueError(f"ratio-of-g requires g_name in {_G_NAMES}, got {self.g_name!r}")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom rule requires a callable fn(theta, x)")

    # -- constructors -------------------------------------------------------

    @staticmethod
    def ratio_of_g(g_name: str) -> "AllocationRule":
        return AllocationRule(kind="ratio-of-g", g_name=g_name)

    @staticmethod
    def exponential(T: float) -> "AllocationRule":
        return AllocationRule(kind="exponential", T=T)

    @staticmethod
    def odds_ratio() -> "AllocationRule":
        return AllocationRule(kind="odds-ratio")

    @staticmethod
    def two_arm_g_difference(T: float) -> "AllocationRule":
        return AllocationRule(kind="two-arm-g-difference", T=T)

    @staticmethod
    def covariate_free_normal(T: float) -> "AllocationRule":
        return AllocationRule(kind="covariate-free-normal", T=T)

    @staticmethod
    def custom(fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "AllocationRule":
        return AllocationRule(kind="custom", fn=fn)


def _check_args(theta: np.ndarray, x: np.ndarray,
                two_arm_kind: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta.ndim != 2:
        raise ValueError(f"theta must be a (K, d) matrix, got shape {theta.shape}")
    if x.ndim != 1 or x.shape[0] != theta.shape[1]:
        raise ValueError(f"covariate has shape {x.shape}, expected ({theta.shape[1]},)")
    if theta.shape[0] < 2:
        raise ValueError("allocation needs at least two arms")
    if two_arm_kind is not None and theta.shape[0] != 2:
        raise ValueError(f"{two_arm_kind} rule is defined for exactly two arms")
    return theta, x


def _normalise(p: np.ndarray) -> np.ndarray:
    p = np.maximum(p, _FLOOR)
    return p / p.sum()


def probabilities(rule: AllocationRule, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate pi(theta, x); strictly positive, sums to 1."""
    two_arm = rule.kind in ("odds-ratio", "two-arm-g-difference", "covariate-free-normal")
    theta, x = _check_args(theta, x, rule.kind if two_arm else None)

    if rule.kind == "custom":
        p = np.asarray(rule.fn(theta, x), dtype=float)
        if p.shape != (theta.shape[0],):
            raise ValueError(f"custom rule returned shape {p.shape}, expected ({theta.shape[0]},)")
        if np.any(p <= 0.0) or abs(p.sum() - 1.0) > 1e-8:
            raise ValueError("custom rule must return a strictly positive probability vector")
        return _normalise(p)

    if rule.kind == "covariate-free-normal":
        p1 = float(ndtr((theta[0, 0] - theta[1, 0]) / rule.T))
        return _normalise(np.array([p1, 1.0 - p1]))

    z = theta @ x
    if rule.kind == "two-arm-g-difference":
        p1 = float(ndtr((z[0] - z[1]) / rule.T))
        return _normalise(np.array([p1, 1.0 - p1]))
    if rule.kind in ("exponential", "odds-ratio"):
        T = 1.0 if rule.kind == "odds-ratio" else rule.T
        zz = T * z
        e = np.exp(zz - zz.max())
        return _normalise(e)
    # ratio-of-g
    if rule.g_name == "exp":
        e = np.exp(z - z.max())
        return _normalise(e)
    g = 1.0 + z * z
    return _normalise(g)


def _phi(u: float) -> float:
    return math.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)


def jacobian(rule: AllocationRule, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """d pi / d theta as a (K, K*d) matrix; rows sum to zero columnwise."""
    two_arm = rule.kind in ("odds-ratio", "two-arm-g-difference", "covariate-free-normal")
    theta, x = _check_args(theta, x, rule.kind if two_arm else None)
    K, d = theta.shape

    if rule.kind == "custom":
        return jacobian_fd(rule, theta, x)

    if rule.kind == "covariate-free-normal":
        u = (theta[0, 0] - theta[1, 0]) / rule.T
        g = _phi(u) / rule.T
        jac = np.zeros((2, 2 * d))
        jac[0, 0] = g
        jac[0, d] = -g
        jac[1, 0] = -g
        jac[1, d] = g
        return jac

    z = theta @ x
    if rule.kind == "two-arm-g-difference":
        u = (z[0] - z[1]) / rule.T
        g = _phi(u) / rule.T
        dpi_dz = np.array([[g, -g], [-g, g]])
        return np.kron(dpi_dz, x)

    if rule.kind in ("exponential", "odds-ratio"):
        T = 1.0 if rule.kind == "odds-ratio" else rule.T
        p = probabilities(rule, theta, x)
        # d pi_k / d z_j = T pi_k (delta_kj - pi_j)
        dpi_dz = T * (np.diag(p) - np.outer(p, p))
        return np.kron(dpi_dz, x)

    # ratio-of-g: d pi_k / d z_j = (delta_kj G'(z_k) - pi_k G'(z_j)) / sum G
    if rule.g_name == "exp":
        p = probabilities(rule, theta, x)
        dpi_dz = np.diag(p) - np.outer(p, p)
        return np.kron(dpi_dz, x)
    g = 1.0 + z * z
    gp = 2.0 * z
    s = g.sum()
    p = g / s
    dpi_dz = (np.diag(gp) - np.outer(p, gp)) / s
    return np.kron(dpi_dz, x)


def jacobian_fd(rule: AllocationRule, theta: np.ndarray, x: np.ndarray,
                step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian, one column per coefficient."""
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    K, d = theta.shape
    jac = np.empty((K, K * d))
    for j in range(K):
        for l in range(d):
            tp = theta.copy()
            tm = theta.copy()
            tp[j, l] += step
            tm[j, l] -= step
            jac[:, j * d + l] = (probabilities(rule, tp, x)
                                 - probabilities(rule, tm, x)) / (2.0 * step)
    return jac
