"""Asymptotic covariances for CARA designs, and their plug-in estimates.

Notation (row-vector coefficients; K arms, covariate dimension d):

* ``v = E[pi(theta, xi)]`` is the target allocation and ``dg = E[d pi /
  d theta]`` its coefficient sensitivity, a K-by-(K*d) matrix whose column
  ``j*d + l`` differentiates in theta_{j,l}.
* ``I_k = E[pi_k(theta, xi) I_k(theta_k | xi)]`` is the design-weighted
  Fisher information of arm k and ``V_k = I_k^{-1}`` the asymptotic
  covariance of sqrt(n) (theta_hat_k - theta_k) for the maximum-likelihood
  fit.
* sqrt(n) (N_n / n - v) is asymptotically normal with covariance
  ``Sigma = Sigma1 + 2 Sigma2`` where ``Sigma1 = diag(v) - v'v`` and
  ``Sigma2 = sum_k (dg_k) V_k (dg_k)'`` with ``dg_k`` the K-by-d block of
  ``dg`` for arm k's coefficients.
* Conditionally on covariate value x with positive mass,
  sqrt(N_n(x)) (N_{n|x} / N_n(x) - pi(theta, x)) is asymptotically normal
  with covariance ``diag(pi) - pi'pi + 2 P(xi = x) sum_k (d pi / d theta_k)
  V_k (d pi / d theta_k)'``.

Expectations over the covariate distribution are exact finite sums whenever
the support is finite.  Otherwise uniform coordinates are integrated by
tensor Gauss-Legendre quadrature (64 nodes per dimension, up to three
continuous dimensions); beyond that a deterministic Monte Carlo fallback with
a fixed internal seed and a reported standard error is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, PCG64, SeedSequence
from scipy.special import ndtr

from .allocation import AllocationRule, jacobian, probabilities
from .engine import TrialHistory
from .model import (
    Constant,
    CovariateSpec,
    TrialModel,
    TwoPoint,
    Uniform,
    conditional_fisher_info,
    conditional_variance,
)

__all__ = [
    "TheoryOptions",
    "ExpectationMethod",
    "TargetAllocation",
    "InfoMatrices",
    "AllocationCovariance",
    "ConditionalCovariance",
    "TheoryReport",
    "PluginReport",
    "BBClosedForms",
    "LseSandwich",
    "SingularInformationError",
    "ZeroMassCovariateError",
    "target_allocation",
    "info_matrices",
    "sigma",
    "sigma_given_x",
    "theory_report",
    "plugin_estimates",
    "scaled_mle_covariance",
    "iid_mle_covariance",
    "bb_closed_forms",
    "lse_sandwich",
]

_MC_SEED = 902880311  # fixed internal seed; Monte Carlo fallbacks are deterministic
_PSD_TOL = 1e-10


class SingularInformationError(Exception):
    pass


class ZeroMassCovariateError(Exception):
    pass


@dataclass(frozen=True)
class TheoryOptions:
    gl_nodes: int = 64
    max_quadrature_dims: int = 3
    mc_size: int = 1_000_000
    cond_max: float = 1e12
    dispersion: str = "model"  # plug-in dispersion: "model" | "estimated"


@dataclass(frozen=True)
class ExpectationMethod:
    kind: str  # "exact-enumeration" | "quadrature" | "monte-carlo"
    size: int
    stderr: float | None = None


def _assert_psd(name: str, mat: np.ndarray) -> None:
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if w.min() < -_PSD_TOL:
        raise ValueError(f"{name} is not positive semidefinite "
                         f"(minimum eigenvalue {w.min():.3e})")


def _psd_warning(name: str, mat: np.ndarray) -> str | None:
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if w.min() < -_PSD_TOL:
        return f"{name} has negative eigenvalue {w.min():.3e}"
    return None


# ---------------------------------------------------------------------------
# Expectation nodes
# ---------------------------------------------------------------------------


def expectation_nodes(spec: CovariateSpec,
                      opts: TheoryOptions = TheoryOptions()) -> tuple[np.ndarray, np.ndarray, ExpectationMethod]:
    """(points, weights, method) for expectations over the covariate law."""
    enum = spec.enumerated()
    if enum is not None:
        pts, pr = enum
        return pts, pr, ExpectationMethod(kind="exact-enumeration", size=pts.shape[0])
    n_uniform = sum(1 for c in spec.coords if isinstance(c, Uniform))
    if n_uniform <= opts.max_quadrature_dims:
        glx, glw = np.polynomial.legendre.leggauss(opts.gl_nodes)
        values, weights = [], []
        for c in spec.coords:
            if isinstance(c, Constant):
                values.append(np.array([c.value]))
                weights.append(np.array([1.0]))
            elif isinstance(c, TwoPoint):
                values.append(np.array([c.a, c.b]))
                weights.append(np.array([c.p_a, 1.0 - c.p_a]))
            else:
                mid, half = 0.5 * (c.lo + c.hi), 0.5 * (c.hi - c.lo)
                values.append(mid + half * glx)
                weights.append(0.5 * glw)
        grids = np.meshgrid(*values, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        wgrids = np.meshgrid(*weights, indexing="ij")
        w = np.ones(pts.shape[0])
        for g in wgrids:
            w = w * g.ravel()
        return pts, w, ExpectationMethod(kind="quadrature", size=pts.shape[0])
    rng = Generator(PCG64(SeedSequence(_MC_SEED)))
    pts = spec.sample_batch(rng, opts.mc_size)
    w = np.full(opts.mc_size, 1.0 / opts.mc_size)
    return pts, w, ExpectationMethod(kind="monte-carlo", size=opts.mc_size)


def _mc_stderr(values: np.ndarray, weights: np.ndarray) -> float:
    """Worst-case componentwise standard error of the weighted mean."""
    mean = np.tensordot(weights, values, axes=(0, 0))
    var = np.tensordot(weights, (values - mean) ** 2, axes=(0, 0))
    return float(np.sqrt(var / values.shape[0]).max())


# ---------------------------------------------------------------------------
# Theory-side reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TargetAllocation:
    v: np.ndarray  # (K,)
    dg: np.ndarray  # (K, K*d)
    method: ExpectationMethod


@dataclass(frozen=True)
class InfoMatrices:
    info: np.ndarray  # (K, d, d)
    V: np.ndarray  # (K, d, d)
    method: ExpectationMethod


@dataclass(frozen=True)
class AllocationCovariance:
    sigma1: np.ndarray  # (K, K)
    sigma2: np.ndarray  # (K, K)
    sigma: np.ndarray  # (K, K)


@dataclass(frozen=True)
class ConditionalCovariance:
    x: np.ndarray
    mass: float
    pi: np.ndarray  # (K,)
    sigma: np.ndarray  # (K, K)


@dataclass(frozen=True)
class TheoryReport:
    v: np.ndarray
    dg: np.ndarray
    info: np.ndarray
    V: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    sigma: np.ndarray
    conditional: tuple[ConditionalCovariance, ...]
    method: ExpectationMethod


def target_allocation(model: TrialModel, rule: AllocationRule,
                      opts: TheoryOptions = TheoryOptions()) -> TargetAllocation:
    """Target allocation v = E[pi(theta, xi)] and its coefficient Jacobian."""
    pts, w, method = expectation_nodes(model.covariates, opts)
    K, d = model.K, model.d
    theta = model.true_theta
    pis = np.empty((pts.shape[0], K))
    jacs = np.empty((pts.shape[0], K, K * d))
    for i in range(pts.shape[0]):
        pis[i] = probabilities(rule, theta, pts[i])
        jacs[i] = jacobian(rule, theta, pts[i])
    v = w @ pis
    dg = np.tensordot(w, jacs, axes=(0, 0))
    if method.kind == "monte-carlo":
        method = ExpectationMethod(kind=method.kind, size=method.size,
                                   stderr=_mc_stderr(pis, w))
    return TargetAllocation(v=v, dg=dg, method=method)


def info_matrices(model: TrialModel, rule: AllocationRule,
                  opts: TheoryOptions = TheoryOptions()) -> InfoMatrices:
    """Design-weighted Fisher information I_k and V_k = I_k^{-1} per arm."""
    pts, w, method = expectation_nodes(model.covariates, opts)
    K, d = model.K, model.d
    theta = model.true_theta
    info = np.zeros((K, d, d))
    for i in range(pts.shape[0]):
        x = pts[i]
        pi = probabilities(rule, theta, x)
        for k in range(K):
            info[k] += w[i] * pi[k] * conditional_fisher_info(model.arms[k], theta[k], x)
    V = np.empty_like(info)
    for k in range(K):
        if np.linalg.cond(info[k]) > opts.cond_max:
            raise SingularInformationError(
                f"design-weighted information for arm {k + 1} is singular "
                f"(condition number exceeds {opts.cond_max:.1e})")
        V[k] = np.linalg.inv(info[k])
        _assert_psd(f"V_{k + 1}", V[k])
    return InfoMatrices(info=info, V=V, method=method)


def sigma(model: TrialModel, rule: AllocationRule,
          opts: TheoryOptions = TheoryOptions()) -> AllocationCovariance:
    """Asymptotic covariance of sqrt(n) (N_n / n - v)."""
    ta = target_allocation(model, rule, opts)
    im = info_matrices(model, rule, opts)
    K, d = model.K, model.d
    s1 = np.diag(ta.v) - np.outer(ta.v, ta.v)
    s2 = np.zeros((K, K))
    for k in range(K):
        block = ta.dg[:, k * d:(k + 1) * d]
        s2 += block @ im.V[k] @ block.T
    total = s1 + 2.0 * s2
    _assert_psd("Sigma1", s1)
    _assert_psd("Sigma2", s2)
    _assert_psd("Sigma", total)
    return AllocationCovariance(sigma1=s1, sigma2=s2, sigma=total)


def sigma_given_x(model: TrialModel, rule: AllocationRule, x,
                  opts: TheoryOptions = TheoryOptions()) -> ConditionalCovariance:
    """Asymptotic covariance of sqrt(N_n(x)) (N_{n|x} / N_n(x) - pi(theta, x))."""
    x = np.asarray(x, dtype=float)
    mass = model.covariates.mass(x)
    if mass <= 0.0:
        raise ZeroMassCovariateError(
            f"covariate value {x.tolist()} has zero probability mass")
    K, d = model.K, model.d
    theta = model.true_theta
    im = info_matrices(model, rule, opts)
    pi = probabilities(rule, theta, x)
    jac = jacobian(rule, theta, x)
    s = np.diag(pi) - np.outer(pi, pi)
    for k in range(K):
        block = jac[:, k * d:(k + 1) * d]
        s = s + 2.0 * mass * (block @ im.V[k] @ block.T)
    _assert_psd(f"Sigma|x={x.tolist()}", s)
    return ConditionalCovariance(x=x, mass=mass, pi=pi, sigma=s)


def theory_report(model: TrialModel, rule: AllocationRule, x_list=(),
                  opts: TheoryOptions = TheoryOptions()) -> TheoryReport:
    """Bundle of all limit-theorem quantities for one (model, rule) pair."""
    ta = target_allocation(model, rule, opts)
    im = info_matrices(model, rule, opts)
    cov = sigma(model, rule, opts)
    conditional = tuple(sigma_given_x(model, rule, x, opts) for x in x_list)
    return TheoryReport(v=ta.v, dg=ta.dg, info=im.info, V=im.V,
                        sigma1=cov.sigma1, sigma2=cov.sigma2, sigma=cov.sigma,
                        conditional=conditional, method=ta.method)


def scaled_mle_covariance(model: TrialModel, rule: AllocationRule,
                          opts: TheoryOptions = TheoryOptions()) -> np.ndarray:
    """Asymptotic covariance of sqrt(N_{n,k}) (theta_hat_k - theta_k): v_k V_k."""
    ta = target_allocation(model, rule, opts)
    im = info_matrices(model, rule, opts)
    return np.array([ta.v[k] * im.V[k] for k in range(model.K)])


def iid_mle_covariance(model: TrialModel,
                       opts: TheoryOptions = TheoryOptions()) -> np.ndarray:
    """I.i.d.-sample comparator {E[I_k(theta_k | xi)]}^{-1} per arm.

    For covariate-free rules this coincides with
    :func:`scaled_mle_covariance`: adaptivity then costs the coefficient
    estimates nothing asymptotically."""
    pts, w, _ = expectation_nodes(model.covariates, opts)
    K, d = model.K, model.d
    out = np.empty((K, d, d))
    for k in range(K):
        acc = np.zeros((d, d))
        for i in range(pts.shape[0]):
            acc += w[i] * conditional_fisher_info(model.arms[k], model.true_theta[k], pts[i])
        if np.linalg.cond(acc) > opts.cond_max:
            raise SingularInformationError(
                f"expected information for arm {k + 1} is singular")
        out[k] = np.linalg.inv(acc)
    return out


# ---------------------------------------------------------------------------
# Plug-in estimates from a realised trial
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PluginReport:
    theta_hat: np.ndarray  # (K, d)
    counts: np.ndarray  # (K,)
    dispersion_hat: np.ndarray  # (K,)
    info_hat: np.ndarray  # (K, d, d)
    V_hat: np.ndarray  # (K, d, d)
    dg_hat: np.ndarray  # (K, K*d)
    sigma1_hat: np.ndarray
    sigma2_hat: np.ndarray
    sigma_hat: np.ndarray
    conditional: tuple[ConditionalCovariance, ...]
    warnings: tuple[str, ...]


def plugin_estimates(history: TrialHistory, model: TrialModel, rule: AllocationRule,
                     x_list=(), opts: TheoryOptions = TheoryOptions()) -> PluginReport:
    """Sample analogues of the theory report from one realised trial.

    Expectations become averages over the n observed covariates, the true
    coefficients are replaced by the final estimates, and V_k inverts the
    sample information.  With ``opts.dispersion == "estimated"`` the normal
    arms' error variance is replaced by the residual mean square
    (RSS_k / (N_k - d), falling back to RSS_k / N_k when N_k <= d).
    Positive semidefiniteness is only warned about here, never enforced.
    """
    n = history.n
    if n == 0:
        raise ValueError("plug-in estimates require a non-empty history")
    K, d = model.K, model.d
    theta = np.asarray(history.current_theta, dtype=float)
    arms_arr = history.arms[:n]
    X = history.covariates[:n]
    y = history.responses[:n]
    counts = history.counts()
    warnings: list[str] = []

    # Dispersion per arm.
    phi = np.array([a.dispersion for a in model.arms])
    if opts.dispersion == "estimated":
        for k in range(K):
            if model.arms[k].family != "normal-linear":
                continue
            mask = arms_arr == k
            nk = int(mask.sum())
            if nk == 0:
                warnings.append(f"arm {k + 1} has no observations; kept model dispersion")
                continue
            resid = y[mask] - X[mask] @ theta[k]
            rss = float(resid @ resid)
            phi[k] = rss / (nk - d) if nk > d else rss / nk
            if phi[k] <= 0.0:
                warnings.append(f"arm {k + 1} residual mean square is zero; kept model dispersion")
                phi[k] = model.arms[k].dispersion
    elif opts.dispersion != "model":
        raise ValueError(f"unknown dispersion mode {opts.dispersion!r}")

    arms_eff = tuple(
        model.arms[k] if model.arms[k].family == "logistic" or phi[k] == model.arms[k].dispersion
        else type(model.arms[k])(family=model.arms[k].family, dispersion=float(phi[k]))
        for k in range(K))

    # Sample information and rule Jacobian, grouped by support point when the
    # covariate law has finite support.
    info_hat = np.zeros((K, d, d))
    dg_hat = np.zeros((K, K * d))
    if history.support_idx is not None:
        support = model.covariates.enumerated()[0]
        S = support.shape[0]
        node_counts = np.bincount(history.support_idx[:n], minlength=S)
        arm_node = np.zeros((K, S), dtype=int)
        for k in range(K):
            arm_node[k] = np.bincount(history.support_idx[:n][arms_arr == k], minlength=S)
        for s in range(S):
            if node_counts[s] == 0:
                continue
            xs = support[s]
            dg_hat += (node_counts[s] / n) * jacobian(rule, theta, xs)
            for k in range(K):
                if arm_node[k, s]:
                    info_hat[k] += (arm_node[k, s] / n) * conditional_fisher_info(
                        arms_eff[k], theta[k], xs)
    else:
        for m in range(n):
            xm = X[m]
            dg_hat += jacobian(rule, theta, xm)
            k = int(arms_arr[m])
            info_hat[k] += conditional_fisher_info(arms_eff[k], theta[k], xm)
        dg_hat /= n
        info_hat /= n

    V_hat = np.empty_like(info_hat)
    for k in range(K):
        try:
            V_hat[k] = np.linalg.inv(info_hat[k])
        except np.linalg.LinAlgError:
            warnings.append(f"sample information for arm {k + 1} is singular; used pseudo-inverse")
            V_hat[k] = np.linalg.pinv(info_hat[k])

    frac = counts / n
    sigma1_hat = np.diag(frac) - np.outer(frac, frac)
    sigma2_hat = np.zeros((K, K))
    for k in range(K):
        block = dg_hat[:, k * d:(k + 1) * d]
        sigma2_hat += block @ V_hat[k] @ block.T
    sigma_hat = sigma1_hat + 2.0 * sigma2_hat

    conditional = []
    for x in x_list:
        x = np.asarray(x, dtype=float)
        mask = np.all(X == x, axis=1)
        mass_hat = float(mask.sum()) / n
        if mass_hat == 0.0:
            raise ZeroMassCovariateError(
                f"covariate value {x.tolist()} never occurred in the history")
        pi_hat = probabilities(rule, theta, x)
        jac = jacobian(rule, theta, x)
        s = np.diag(pi_hat) - np.outer(pi_hat, pi_hat)
        for k in range(K):
            block = jac[:, k * d:(k + 1) * d]
            s = s + 2.0 * mass_hat * (block @ V_hat[k] @ block.T)
        conditional.append(ConditionalCovariance(x=x, mass=mass_hat, pi=pi_hat, sigma=s))

    for name, mat in (("Sigma1_hat", sigma1_hat), ("Sigma_hat", sigma_hat)):
        msg = _psd_warning(name, mat)
        if msg:
            warnings.append(msg)
    for c in conditional:
        msg = _psd_warning(f"Sigma_hat|x={c.x.tolist()}", c.sigma)
        if msg:
            warnings.append(msg)

    return PluginReport(theta_hat=theta, counts=counts, dispersion_hat=phi,
                        info_hat=info_hat, V_hat=V_hat, dg_hat=dg_hat,
                        sigma1_hat=sigma1_hat, sigma2_hat=sigma2_hat, sigma_hat=sigma_hat,
                        conditional=tuple(conditional), warnings=tuple(warnings))


# ---------------------------------------------------------------------------
# Closed forms for the covariate-free normal (two-arm, shared-slope) design
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BBClosedForms:
    v: np.ndarray  # (2,)
    mu_cov: np.ndarray  # (2, 2) covariance of sqrt(n) (mu_hat - mu)
    beta_cov: np.ndarray  # (d-1, d-1) covariance of sqrt(n) (beta_hat - beta)
    alloc_var: float  # variance of sqrt(n) (N_{n,1}/n - v_1)
    a: np.ndarray  # E[xi_tilde]
    info_tilde: np.ndarray  # Var(xi_tilde)


def bb_closed_forms(model: TrialModel, rule: AllocationRule,
                    opts: TheoryOptions = TheoryOptions()) -> BBClosedForms:
    """Closed-form limits for the two-arm covariate-free normal design.

    Requires a shared-slope homoscedastic normal model (leading intercept
    coordinate) allocated by the covariate-free normal rule: pi_1 =
    Phi((mu_hat_1 - mu_hat_2) / T).  With a = E[xi_tilde], J = Var(xi_tilde)
    over the non-intercept covariate block and Delta = mu_1 - mu_2:

        v_1 = Phi(Delta / T)
        Cov sqrt(n) (mu_hat - mu) = sigma^2 [[1/v_1 + c, c], [c, 1/v_2 + c]]
            with c = a J^{-1} a'
        Cov sqrt(n) (beta_hat - beta) = sigma^2 J^{-1}
        Var sqrt(n) (N_{n,1}/n - v_1)
            = v_1 v_2 + 2 sigma^2 (phi(Delta / T) / T)^2 / (v_1 v_2)

    The last term applies the chain rule through Delta / T, so the density
    factor carries a 1/T; at T = 1 this is the familiar phi(Delta)^2 form.
    """
    if model.K != 2:
        raise ValueError("closed forms are for exactly two arms")
    if not model.shared_slopes:
        raise ValueError("closed forms require a shared-slope normal model")
    if rule.kind != "covariate-free-normal":
        raise ValueError("closed forms require the covariate-free normal rule")
    sigma2 = model.arms[0].dispersion
    if model.arms[1].dispersion != sigma2:
        raise ValueError("closed forms require a common error variance")
    T = rule.T
    mu = model.true_theta[:, 0]
    delta = float(mu[0] - mu[1])

    pts, w, _ = expectation_nodes(model.covariates, opts)
    tilde = pts[:, 1:]
    a = w @ tilde
    centred = tilde - a
    J = (centred * w[:, None]).T @ centred
    dt = model.d - 1
    if dt > 0:
        if np.linalg.cond(J) > opts.cond_max:
            raise SingularInformationError("Var(xi_tilde) is singular")
        Jinv = np.linalg.inv(J)
        c = float(a @ Jinv @ a)
        beta_cov = sigma2 * Jinv
    else:
        Jinv = np.empty((0, 0))
        c = 0.0
        beta_cov = np.empty((0, 0))

    v1 = float(ndtr(delta / T))
    v2 = 1.0 - v1
    v = np.array([v1, v2])
    mu_cov = sigma2 * np.array([[1.0 / v1 + c, c], [c, 1.0 / v2 + c]])
    dens = math.exp(-0.5 * (delta / T) ** 2) / math.sqrt(2.0 * math.pi) / T
    alloc_var = v1 * v2 + 2.0 * sigma2 * dens * dens / (v1 * v2)
    return BBClosedForms(v=v, mu_cov=mu_cov, beta_cov=beta_cov,
                         alloc_var=alloc_var, a=a, info_tilde=J)


# ---------------------------------------------------------------------------
# Sandwich covariance for least-squares working fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LseSandwich:
    V: np.ndarray  # (K, d, d)
    info_x: np.ndarray  # (K, d, d)  E[pi_k xi'xi]
    info_y: np.ndarray  # (K, d, d)  E[pi_k Var(Y_k | xi) xi'xi]
    method: ExpectationMethod


def lse_sandwich(model: TrialModel, rule: AllocationRule,
                 conditional_variance_fn=None,
                 opts: TheoryOptions = TheoryOptions()) -> LseSandwich:
    """Asymptotic covariance of the per-arm least-squares working estimate.

    V_k = (E[pi_k xi'xi])^{-1} E[pi_k Var(Y_k | xi) xi'xi] (E[pi_k xi'xi])^{-1}.
    ``conditional_variance_fn(k, x)`` overrides the model's response variance
    (useful for heteroscedastic what-if analyses); by default the model's own
    conditional variance is used, so for normal arms V_k reduces to
    sigma_k^2 (E[pi_k xi'xi])^{-1}.
    """
    pts, w, method = expectation_nodes(model.covariates, opts)
    K, d = model.K, model.d
    theta = model.true_theta
    info_x = np.zeros((K, d, d))
    info_y = np.zeros((K, d, d))
    for i in range(pts.shape[0]):
        x = pts[i]
        pi = probabilities(rule, theta, x)
        outer = np.outer(x, x)
        for k in range(K):
            if conditional_variance_fn is None:
                var_y = conditional_variance(model.arms[k], theta[k], x)
            else:
                var_y = float(conditional_variance_fn(k, x))
            info_x[k] += w[i] * pi[k] * outer
            info_y[k] += w[i] * pi[k] * var_y * outer
    V = np.empty_like(info_x)
    for k in range(K):
        if np.linalg.cond(info_x[k]) > opts.cond_max:
            raise SingularInformationError(
                f"E[pi_k xi'xi] for arm {k + 1} is singular")
        inv = np.linalg.inv(info_x[k])
        V[k] = inv @ info_y[k] @ inv
        _assert_psd(f"LSE V_{k + 1}", V[k])
    return LseSandwich(V=V, info_x=info_x, info_y=info_y, method=method)
