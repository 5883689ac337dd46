"""Per-arm maximum likelihood / least squares with box-clamped estimates.

Logistic arms are fitted by iteratively reweighted least squares (Newton with
step halving, so the log-likelihood never decreases along the iteration).
Normal-linear arms are fitted by the normal equations.  Final estimates are
always clamped coordinatewise into the arm's parameter box; ``projected``
records whether the clamp moved the point.

``fit_grouped_logistic_mle`` fits from binomial sufficient statistics
(support points, trial counts, success counts); the rowwise
``fit_logistic_mle`` is the unit-trial special case and both share one IRLS
core, so they return identical estimates on equivalent data.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import expit

if TYPE_CHECKING:  # pragma: no cover
    from .engine import TrialHistory
    from .model import TrialModel

__all__ = [
    "ArmSample",
    "FitOptions",
    "FitResult",
    "JointFitResult",
    "EstimatesUpdate",
    "EstimationError",
    "EmptySampleError",
    "fit_logistic_mle",
    "fit_grouped_logistic_mle",
    "fit_linear_lse",
    "fit_shared_slope_lse",
    "update_all_estimates",
]

# Machine-readable failure reasons carried on non-converged fits.
SINGULAR_HESSIAN = "singular-hessian"
DEGENERATE_DESIGN = "degenerate-design"
MAX_ITERATIONS = "max-iterations"


class EstimationError(Exception):
    pass


class EmptySampleError(EstimationError):
    pass


@dataclass(frozen=True)
class ArmSample:
    """Design rows and responses observed on one arm."""

    X: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class FitOptions:
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    max_iter: int = 100
    cond_max: float = 1e12
    max_halvings: int = 30
    check_conditioning: bool = True
    track_objective: bool = False


@dataclass(frozen=True)
class FitResult:
    """Outcome of a single-arm fit.

    ``objective`` is the log-likelihood for logistic fits and the error sum
    of squares for least-squares fits, evaluated at the returned (clamped)
    estimate.  ``reason`` is empty on success.
    """

    theta_hat: np.ndarray
    converged: bool
    projected: bool
    iterations: int
    objective: float
    reason: str = ""
    objective_path: tuple[float, ...] | None = None


@dataclass(frozen=True)
class JointFitResult:
    """Outcome of a shared-slope least-squares fit across all arms."""

    theta: np.ndarray  # (K, d)
    converged: bool
    projected: bool
    objective: float
    reason: str = ""


@dataclass(frozen=True)
class EstimatesUpdate:
    theta: np.ndarray  # (K, d)
    converged: np.ndarray  # (K,) bool
    projected: np.ndarray  # (K,) bool


def _check_box(lo: np.ndarray, hi: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    if lo.shape != (d,) or hi.shape != (d,):
        raise ValueError(f"box bounds must have shape ({d},)")
    if not np.all(lo < hi):
        raise ValueError("box needs lo < hi coordinatewise")
    return lo, hi


def _clamp(theta: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, bool]:
    clipped = np.clip(theta, lo, hi)
    return clipped, bool(np.any(clipped != theta))


def _binomial_loglik(mu: np.ndarray, trials: np.ndarray, successes: np.ndarray) -> float:
    # sum s*mu - t*log(1 + exp(mu)), dropping the mu-free combinatorial term
    return float(successes @ mu - trials @ np.logaddexp(0.0, mu))


def fit_grouped_logistic_mle(points: np.ndarray, trials: np.ndarray,
                             successes: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                             init: np.ndarray | None = None,
                             opts: FitOptions = FitOptions()) -> FitResult:
    """Logistic MLE from binomial counts at distinct covariate points."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    t = np.asarray(trials, dtype=float).ravel()
    s = np.asarray(successes, dtype=float).ravel()
    if X.shape[0] != t.shape[0] or X.shape[0] != s.shape[0]:
        raise ValueError("points, trials and successes must have matching lengths")
    if t.sum() <= 0.0:
        raise EmptySampleError("logistic fit requires at least one observation")
    d = X.shape[1]
    lo, hi = _check_box(lo, hi, d)
    if init is None:
        init = 0.5 * (lo + hi)
    else:
        init = np.asarray(init, dtype=float).ravel()
        if init.shape != (d,):
            raise ValueError(f"init must have shape ({d},)")
        if np.any(init < lo) or np.any(init > hi):
            raise ValueError("init must lie inside the box")

    theta = init.copy()
    ll = _binomial_loglik(X @ theta, t, s)
    path = [ll] if opts.track_objective else None
    converged = False
    reason = MAX_ITERATIONS
    iterations = 0

    for iterations in range(1, opts.max_iter + 1):
        p = expit(X @ theta)
        grad = X.T @ (s - t * p)
        if np.max(np.abs(grad)) <= opts.grad_tol:
            converged, reason = True, ""
            iterations -= 1
            break
        w = t * p * (1.0 - p)
        H = (X * w[:, None]).T @ X
        singular = False
        if opts.check_conditioning and (not np.all(np.isfinite(H))
                                        or np.linalg.cond(H) > opts.cond_max):
            singular = True
        if not singular:
            try:
                delta = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                singular = True
            else:
                singular = not np.all(np.isfinite(delta))
        if singular:
            theta_c, projected = _clamp(init, lo, hi)
            return FitResult(theta_hat=theta_c, converged=False, projected=projected,
                             iterations=iterations, objective=_binomial_loglik(X @ theta_c, t, s),
                             reason=SINGULAR_HESSIAN,
                             objective_path=tuple(path) if path is not None else None)
        scale = 1.0
        for _ in range(opts.max_halvings):
            cand = theta + scale * delta
            llc = _binomial_loglik(X @ cand, t, s)
            if llc >= ll - 1e-12:
                break
            scale *= 0.5
        else:
            scale, cand, llc = 0.0, theta, ll
        step_norm = scale * np.max(np.abs(delta))
        theta, ll = cand, llc
        if path is not None:
            path.append(ll)
        if step_norm <= opts.step_tol:
            converged, reason = True, ""
            break

    theta_c, projected = _clamp(theta, lo, hi)
    return FitResult(theta_hat=theta_c, converged=converged, projected=projected,
                     iterations=iterations,
                     objective=_binomial_loglik(X @ theta_c, t, s), reason=reason,
                     objective_path=tuple(path) if path is not None else None)


def fit_logistic_mle(sample: ArmSample, lo: np.ndarray, hi: np.ndarray,
                     init: np.ndarray | None = None,
                     opts: FitOptions = FitOptions()) -> FitResult:
    """Logistic MLE on per-observation rows (binary y)."""
    if sample.n == 0:
        raise EmptySampleError("logistic fit requires at least one observation")
    return fit_grouped_logistic_mle(sample.X, np.ones(sample.n), sample.y,
                                    lo, hi, init=init, opts=opts)


def fit_linear_lse(sample: ArmSample, lo: np.ndarray, hi: np.ndarray,
                   opts: FitOptions = FitOptions()) -> FitResult:
    """Least squares by the normal equations; degenerate designs fail soft."""
    if sample.n == 0:
        raise EmptySampleError("least-squares fit requires at least one observation")
    d = sample.X.shape[1]
    lo, hi = _check_box(lo, hi, d)
    A = sample.X.T @ sample.X
    rhs = sample.X.T @ sample.y

    def _degenerate() -> FitResult:
        mid = 0.5 * (lo + hi)
        sse = float(np.sum((sample.y - sample.X @ mid) ** 2))
        return FitResult(theta_hat=mid, converged=False, projected=False,
                         iterations=0, objective=sse, reason=DEGENERATE_DESIGN)

    if sample.n < d or np.linalg.cond(A) > opts.cond_max:
        return _degenerate()
    try:
        theta = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return _degenerate()
    theta_c, projected = _clamp(theta, lo, hi)
    sse = float(np.sum((sample.y - sample.X @ theta_c) ** 2))
    return FitResult(theta_hat=theta_c, converged=True, projected=projected,
                     iterations=1, objective=sse)


def fit_shared_slope_lse(X: np.ndarray, y: np.ndarray, arm_idx: np.ndarray, K: int,
                         lo: np.ndarray, hi: np.ndarray,
                         opts: FitOptions = FitOptions()) -> JointFitResult:
    """Joint least squares: per-arm intercepts, slopes shared across arms.

    Rows must carry a leading constant-1 coordinate; the fitted coefficient
    matrix has rows (mu_k, beta) with one intercept per arm and a common
    slope vector beta.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    arm_idx = np.asarray(arm_idx, dtype=int).ravel()
    n, d = X.shape
    if n == 0:
        raise EmptySampleError("least-squares fit requires at least one observation")
    if y.shape[0] != n or arm_idx.shape[0] != n:
        raise ValueError("X, y and arm_idx must have matching lengths")
    if not np.all(X[:, 0] == 1.0):
        raise ValueError("shared-slope fit requires a leading constant-1 column")
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (K, d))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (K, d))

    P = K + (d - 1)
    eta = np.zeros((n, P))
    eta[np.arange(n), arm_idx] = 1.0
    eta[:, K:] = X[:, 1:]
    A = eta.T @ eta
    rhs = eta.T @ y

    def _theta_from(coef: np.ndarray) -> np.ndarray:
        theta = np.empty((K, d))
        theta[:, 0] = coef[:K]
        theta[:, 1:] = coef[K:]
        return theta

    mid = _theta_from(np.concatenate([0.5 * (lo[:, 0] + hi[:, 0]),
                                      0.5 * (lo[0, 1:] + hi[0, 1:])]))
    if n < P or np.linalg.cond(A) > opts.cond_max:
        sse = float(np.sum((y - np.sum(X * mid[arm_idx], axis=1)) ** 2))
        return JointFitResult(theta=mid, converged=False, projected=False,
                              objective=sse, reason=DEGENERATE_DESIGN)
    try:
        coef = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        sse = float(np.sum((y - np.sum(X * mid[arm_idx], axis=1)) ** 2))
        return JointFitResult(theta=mid, converged=False, projected=False,
                              objective=sse, reason=DEGENERATE_DESIGN)
    theta = _theta_from(coef)
    clipped = np.clip(theta, lo, hi)
    projected = bool(np.any(clipped != theta))
    sse = float(np.sum((y - np.sum(X * clipped[arm_idx], axis=1)) ** 2))
    return JointFitResult(theta=clipped, converged=True, projected=projected,
                          objective=sse)


def update_all_estimates(history: "TrialHistory", model: "TrialModel",
                         opts: FitOptions = FitOptions()) -> EstimatesUpdate:
    """Refit every arm from a trial history, warm-starting at its latest
    estimate; arms whose fit fails (or that have no data) keep the previous
    value.  Pure: identical history in, identical estimates out."""
    K, d = model.K, model.d
    prev = history.latest_theta()
    if prev is None:
        prev = 0.5 * (model.box_lo + model.box_hi)
    theta = np.array(prev, dtype=float)
    converged = np.zeros(K, dtype=bool)
    projected = np.zeros(K, dtype=bool)

    X = history.covariates[:history.n]
    y = history.responses[:history.n]
    arms = history.arms[:history.n]

    if model.shared_slopes:
        if history.n == 0:
            return EstimatesUpdate(theta=theta, converged=converged, projected=projected)
        fit = fit_shared_slope_lse(X, y, arms, K, model.box_lo, model.box_hi, opts=opts)
        if fit.converged:
            theta = fit.theta
        converged[:] = fit.converged
        projected[:] = fit.projected
        return EstimatesUpdate(theta=theta, converged=converged, projected=projected)

    for k in range(K):
        mask = arms == k
        if not np.any(mask):
            continue
        sample = ArmSample(X=X[mask], y=y[mask])
        lo, hi = model.box_lo[k], model.box_hi[k]
        if model.arms[k].family == "logistic":
            init = np.clip(theta[k], lo, hi)
            fit = fit_logistic_mle(sample, lo, hi, init=init, opts=opts)
        else:
            fit = fit_linear_lse(sample, lo, hi, opts=opts)
        if fit.reason in (SINGULAR_HESSIAN, DEGENERATE_DESIGN):
            continue  # keep previous estimate
        theta[k] = fit.theta_hat
        converged[k] = fit.converged
        projected[k] = fit.projected
    return EstimatesUpdate(theta=theta, converged=converged, projected=projected)
