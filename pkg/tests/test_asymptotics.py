import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ndtr

from carasim.allocation import AllocationRule, jacobian, probabilities
from carasim.asymptotics import (
    SingularInformationError,
    TheoryOptions,
    ZeroMassCovariateError,
    bb_closed_forms,
    iid_mle_covariance,
    info_matrices,
    lse_sandwich,
    plugin_estimates,
    scaled_mle_covariance,
    sigma_given_x,
    target_allocation,
    theory_report,
)
from carasim.engine import TrialHistory, replicate_root, run_trial
from carasim.fixtures import (
    F1_EXACT,
    bb_config,
    coincidence_configs,
    f1_config,
    two_point_config,
)
from carasim.harness import parse_config
from carasim.model import (
    ArmModel,
    Constant,
    CovariateSpec,
    TrialModel,
    TwoPoint,
    Uniform,
    conditional_fisher_info,
)


def _pair(raw):
    cfg = parse_config(raw)
    return cfg.model, cfg.rule


def _one_trial(raw, index=0):
    cfg = parse_config(raw)
    hist = run_trial(cfg.model, cfg.rule, cfg.n, cfg.m0,
                     replicate_root(cfg.seed, index), cfg.engine_options())
    return cfg, hist


def _f1_pair():
    return _pair(f1_config(n=100, replicates=1, seed=0))


def _two_point_pair():
    return _pair(two_point_config(n=100, replicates=1, seed=0))


def _bb_pair():
    return _pair(bb_config(n=100, replicates=1, seed=0))


# ---------------------------------------------------------------------------
# Hand-derived exact values on F1
# ---------------------------------------------------------------------------


def test_f1_report_reproduces_hand_values():
    model, rule = _f1_pair()
    rep = theory_report(model, rule)
    assert rep.method.kind == "exact-enumeration"
    for key in ("v", "dg", "info", "V", "sigma1", "sigma2", "sigma"):
        np.testing.assert_allclose(getattr(rep, key), F1_EXACT[key],
                                   rtol=0.0, atol=1e-10)


def test_f1_conditional_at_the_sure_point_equals_sigma():
    # The covariate is 1 with probability one, so conditioning changes nothing.
    model, rule = _f1_pair()
    cond = sigma_given_x(model, rule, [1.0])
    assert cond.mass == 1.0
    np.testing.assert_allclose(cond.pi, F1_EXACT["v"], atol=1e-10)
    np.testing.assert_allclose(cond.sigma, F1_EXACT["sigma"], atol=1e-10)


# ---------------------------------------------------------------------------
# Target allocation
# ---------------------------------------------------------------------------


def test_covariate_free_rule_target_is_the_constant_probability():
    model, rule = _bb_pair()
    ta = target_allocation(model, rule)
    v1 = ndtr(1.0)  # mu_1 - mu_2 = 1, T = 1
    np.testing.assert_allclose(ta.v, [v1, 1.0 - v1], atol=1e-12)


def test_two_point_target_matches_naive_enumeration():
    model, rule = _two_point_pair()
    pts, pr = model.covariates.enumerated()
    v = sum(pr[s] * probabilities(rule, model.true_theta, pts[s])
            for s in range(pts.shape[0]))
    dg = sum(pr[s] * jacobian(rule, model.true_theta, pts[s])
             for s in range(pts.shape[0]))
    ta = target_allocation(model, rule)
    np.testing.assert_allclose(ta.v, v, atol=1e-12)
    np.testing.assert_allclose(ta.dg, dg, atol=1e-12)


def test_product_enumeration_matches_explicit_discrete_support():
    model_prod, rule = _bb_pair()
    pts, pr = model_prod.covariates.enumerated()
    raw = bb_config(n=100, replicates=1, seed=0)
    raw["model"]["covariates"] = {"kind": "discrete", "support": pts.tolist(),
                                  "probs": pr.tolist()}
    model_disc, _ = _pair(raw)
    ta_p = target_allocation(model_prod, rule)
    ta_d = target_allocation(model_disc, rule)
    np.testing.assert_allclose(ta_p.v, ta_d.v, atol=1e-12)
    np.testing.assert_allclose(ta_p.dg, ta_d.dg, atol=1e-12)
    im_p = info_matrices(model_prod, rule)
    im_d = info_matrices(model_disc, rule)
    np.testing.assert_allclose(im_p.info, im_d.info, atol=1e-12)


def _uniform_model():
    arm = ArmModel(family="logistic")
    spec = CovariateSpec.product([Constant(1.0), Uniform(0.0, 1.0)])
    theta = np.array([[0.5, -1.0], [-0.25, 0.75]])
    return TrialModel(arms=(arm, arm), covariates=spec, true_theta=theta,
                      box_lo=-4.0, box_hi=4.0)


def test_quadrature_matches_adaptive_integration_oracle():
    model = _uniform_model()
    rule = AllocationRule.odds_ratio()
    ta = target_allocation(model, rule)
    assert ta.method.kind == "quadrature"
    oracle, err = quad(
        lambda u: probabilities(rule, model.true_theta, np.array([1.0, u]))[0],
        0.0, 1.0, epsabs=1e-12)
    assert err < 1e-9
    np.testing.assert_allclose(ta.v[0], oracle, rtol=1e-8)
    np.testing.assert_allclose(ta.v.sum(), 1.0, atol=1e-12)


def test_monte_carlo_fallback_is_deterministic_and_close():
    model = _uniform_model()
    rule = AllocationRule.odds_ratio()
    opts = TheoryOptions(max_quadrature_dims=0, mc_size=20000)
    mc1 = target_allocation(model, rule, opts)
    mc2 = target_allocation(model, rule, opts)
    assert mc1.method.kind == "monte-carlo"
    assert mc1.method.size == 20000
    assert mc1.method.stderr is not None and mc1.method.stderr > 0.0
    np.testing.assert_array_equal(mc1.v, mc2.v)
    exact = target_allocation(model, rule)
    assert abs(mc1.v[0] - exact.v[0]) <= 5.0 * mc1.method.stderr


# ---------------------------------------------------------------------------
# Information matrices
# ---------------------------------------------------------------------------


def test_covariate_free_information_factorises():
    # Under a covariate-free rule I_k = v_k E[I_k(theta_k | xi)].
    raw = coincidence_configs(0)[1]
    model, rule = _pair(raw)
    ta = target_allocation(model, rule)
    im = info_matrices(model, rule)
    pts, pr = model.covariates.enumerated()
    for k in range(model.K):
        bare = sum(pr[s] * conditional_fisher_info(model.arms[k],
                                                   model.true_theta[k], pts[s])
                   for s in range(pts.shape[0]))
        np.testing.assert_allclose(im.info[k], ta.v[k] * bare, atol=1e-12)


def test_equal_allocation_unit_covariate_normal_information_is_half():
    arm = ArmModel(family="normal-linear", dispersion=1.0)
    model = TrialModel(arms=(arm, arm), covariates=CovariateSpec.constant([1.0]),
                       true_theta=np.array([[0.3], [0.3]]),
                       box_lo=-3.0, box_hi=3.0)
    im = info_matrices(model, AllocationRule.covariate_free_normal(T=1.0))
    np.testing.assert_allclose(im.info, np.full((2, 1, 1), 0.5), atol=1e-12)
    np.testing.assert_allclose(im.V, np.full((2, 1, 1), 2.0), atol=1e-12)


def test_degenerate_covariate_direction_raises_singular_information():
    arm = ArmModel(family="logistic")
    model = TrialModel(arms=(arm, arm),
                       covariates=CovariateSpec.constant([1.0, 0.0]),
                       true_theta=np.zeros((2, 2)), box_lo=-4.0, box_hi=4.0)
    with pytest.raises(SingularInformationError, match="arm 1"):
        info_matrices(model, AllocationRule.odds_ratio())


# ---------------------------------------------------------------------------
# Allocation covariance and its conditional version
# ---------------------------------------------------------------------------


def test_report_matrices_are_psd_with_zero_row_sums():
    fixtures = [f1_config(n=100, replicates=1, seed=0),
                two_point_config(n=100, replicates=1, seed=0),
                bb_config(n=100, replicates=1, seed=0)]
    x_lists = [[[1.0]], [[1.0, 0.0], [1.0, 1.0]], []]
    for raw, x_list in zip(fixtures, x_lists):
        model, rule = _pair(raw)
        rep = theory_report(model, rule, x_list=x_list)
        assert np.array_equal(rep.sigma, rep.sigma1 + 2.0 * rep.sigma2)
        assert np.all(rep.v > 0.0) and np.all(rep.v < 1.0)
        np.testing.assert_allclose(rep.v.sum(), 1.0, atol=1e-12)
        for mat in (rep.sigma1, rep.sigma2, rep.sigma):
            assert np.linalg.eigvalsh(mat).min() >= -1e-10
        for mat in (rep.sigma1, rep.sigma):
            np.testing.assert_allclose(mat.sum(axis=1), 0.0, atol=1e-10)
        for k in range(model.K):
            assert np.linalg.eigvalsh(rep.V[k]).min() > 0.0
        for cond in rep.conditional:
            assert cond.mass > 0.0
            assert np.linalg.eigvalsh(cond.sigma).min() >= -1e-10
            np.testing.assert_allclose(cond.sigma.sum(axis=1), 0.0, atol=1e-10)


def test_conditional_covariance_assembled_from_parts():
    model, rule = _two_point_pair()
    im = info_matrices(model, rule)
    x = np.array([1.0, 1.0])
    pi = probabilities(rule, model.true_theta, x)
    jac = jacobian(rule, model.true_theta, x)
    expect = np.diag(pi) - np.outer(pi, pi)
    d = model.d
    for k in range(model.K):
        block = jac[:, k * d:(k + 1) * d]
        expect = expect + 2.0 * 0.5 * (block @ im.V[k] @ block.T)
    cond = sigma_given_x(model, rule, x)
    assert cond.mass == 0.5
    np.testing.assert_allclose(cond.pi, pi, atol=1e-12)
    np.testing.assert_allclose(cond.sigma, expect, atol=1e-12)


def test_covariate_free_conditional_reduces_to_scaled_sigma():
    # With a covariate-free rule pi(theta, x) = v and d pi / d theta = dg,
    # so conditioning only rescales the feedback term by the point's mass.
    raw = coincidence_configs(0)[1]
    model, rule = _pair(raw)
    rep = theory_report(model, rule)
    pts, pr = model.covariates.enumerated()
    for s in range(pts.shape[0]):
        cond = sigma_given_x(model, rule, pts[s])
        np.testing.assert_allclose(cond.pi, rep.v, atol=1e-12)
        np.testing.assert_allclose(cond.sigma,
                                   rep.sigma1 + 2.0 * pr[s] * rep.sigma2,
                                   atol=1e-12)


def test_zero_mass_covariate_value_is_rejected():
    model, rule = _two_point_pair()
    with pytest.raises(ZeroMassCovariateError):
        sigma_given_x(model, rule, [0.0, 5.0])


def test_swapping_arms_permutes_the_report():
    raw = two_point_config(n=100, replicates=1, seed=0)
    model, rule = _pair(raw)
    swapped = two_point_config(n=100, replicates=1, seed=0)
    swapped["model"]["true_theta"] = raw["model"]["true_theta"][::-1]
    model_sw, _ = _pair(swapped)
    x = [1.0, 0.0]
    rep = theory_report(model, rule, x_list=[x])
    rep_sw = theory_report(model_sw, rule, x_list=[x])
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(rep_sw.v, rep.v[::-1], atol=1e-12)
    np.testing.assert_allclose(rep_sw.info, rep.info[::-1], atol=1e-12)
    np.testing.assert_allclose(rep_sw.sigma, P @ rep.sigma @ P.T, atol=1e-12)
    np.testing.assert_allclose(rep_sw.conditional[0].sigma,
                               P @ rep.conditional[0].sigma @ P.T, atol=1e-12)


# ---------------------------------------------------------------------------
# Adaptive versus i.i.d. estimator covariance
# ---------------------------------------------------------------------------


def test_covariate_free_adaptive_and_iid_covariances_coincide():
    for raw in coincidence_configs(0):
        model, rule = _pair(raw)
        np.testing.assert_allclose(scaled_mle_covariance(model, rule),
                                   iid_mle_covariance(model),
                                   rtol=0.0, atol=1e-10)


def test_covariate_dependent_rule_breaks_the_coincidence():
    model, rule = _two_point_pair()
    gap = np.abs(scaled_mle_covariance(model, rule) - iid_mle_covariance(model))
    assert gap.max() > 1e-3


# ---------------------------------------------------------------------------
# Plug-in estimates from a realised trial
# ---------------------------------------------------------------------------


def test_plugin_covariances_approach_the_limits():
    raw = f1_config(n=4000, replicates=1, seed=11)
    cfg = parse_config(raw)
    devs = []
    for i in range(6):
        hist = run_trial(cfg.model, cfg.rule, cfg.n, cfg.m0,
                         replicate_root(cfg.seed, i), cfg.engine_options())
        rep = plugin_estimates(hist, cfg.model, cfg.rule)
        num = np.abs(rep.sigma_hat - F1_EXACT["sigma"]).max()
        devs.append(num / np.abs(F1_EXACT["sigma"]).max())
    assert np.median(devs) <= 0.15


def test_plugin_structural_invariants():
    raw = two_point_config(n=600, replicates=1, seed=4)
    cfg, hist = _one_trial(raw)
    rep = plugin_estimates(hist, cfg.model, cfg.rule,
                           x_list=[[1.0, 0.0], [1.0, 1.0]])
    np.testing.assert_array_equal(rep.counts, hist.counts())
    np.testing.assert_array_equal(rep.theta_hat, hist.current_theta)
    np.testing.assert_allclose(rep.sigma1_hat.sum(axis=1), 0.0, atol=1e-15)
    assert np.array_equal(rep.sigma_hat, rep.sigma1_hat + 2.0 * rep.sigma2_hat)
    np.testing.assert_allclose(sum(c.mass for c in rep.conditional), 1.0,
                               atol=1e-12)
    for cond in rep.conditional:
        np.testing.assert_allclose(cond.sigma.sum(axis=1), 0.0, atol=1e-12)


def test_covariate_free_plugin_jacobian_has_zero_slope_columns():
    raw = bb_config(n=400, replicates=1, seed=5)
    cfg, hist = _one_trial(raw)
    rep = plugin_estimates(hist, cfg.model, cfg.rule)
    d = cfg.model.d
    for k in range(cfg.model.K):
        block = rep.dg_hat[:, k * d:(k + 1) * d]
        np.testing.assert_array_equal(block[:, 1:], 0.0)


def test_estimated_dispersion_is_the_residual_mean_square():
    raw = bb_config(n=2000, replicates=1, seed=7)
    cfg, hist = _one_trial(raw)
    rep = plugin_estimates(hist, cfg.model, cfg.rule,
                           opts=TheoryOptions(dispersion="estimated"))
    theta = hist.current_theta
    for k in range(2):
        mask = hist.arms[:hist.n] == k
        resid = hist.responses[:hist.n][mask] - hist.covariates[:hist.n][mask] @ theta[k]
        expected = float(resid @ resid) / (mask.sum() - cfg.model.d)
        np.testing.assert_allclose(rep.dispersion_hat[k], expected, rtol=1e-12)
        assert abs(rep.dispersion_hat[k] - 1.0) < 0.25


def test_unknown_dispersion_mode_is_rejected():
    raw = bb_config(n=200, replicates=1, seed=1)
    cfg, hist = _one_trial(raw)
    with pytest.raises(ValueError, match="dispersion"):
        plugin_estimates(hist, cfg.model, cfg.rule,
                         opts=TheoryOptions(dispersion="bootstrap"))


def test_singular_sample_information_warns_and_uses_pseudo_inverse():
    # Arm 2 only ever sees x = (1, 0): its sample information is singular.
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 1.0],
                  [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    arms = np.array([0, 0, 0, 1, 1, 1])
    y = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    hist = TrialHistory.from_arrays(X, arms, y, K=2,
                                    current_theta=np.zeros((2, 2)))
    arm = ArmModel(family="logistic")
    model = TrialModel(arms=(arm, arm),
                       covariates=CovariateSpec.discrete(
                           [[1.0, 0.0], [1.0, 1.0]], [0.5, 0.5]),
                       true_theta=np.zeros((2, 2)), box_lo=-4.0, box_hi=4.0)
    rep = plugin_estimates(hist, model, AllocationRule.odds_ratio())
    assert any("arm 2" in w for w in rep.warnings)
    assert np.all(np.isfinite(rep.V_hat))


def test_plugin_requires_a_non_empty_history():
    hist = TrialHistory.from_arrays(np.empty((0, 1)), np.empty(0, dtype=int),
                                    np.empty(0), K=2,
                                    current_theta=np.zeros((2, 1)))
    model, rule = _f1_pair()
    with pytest.raises(ValueError, match="non-empty"):
        plugin_estimates(hist, model, rule)


# ---------------------------------------------------------------------------
# Closed forms for the covariate-free normal design
# ---------------------------------------------------------------------------


def test_bb_closed_forms_hand_values():
    model, rule = _bb_pair()
    bb = bb_closed_forms(model, rule)
    v1 = ndtr(1.0)
    v2 = 1.0 - v1
    dens = math.exp(-0.5) / math.sqrt(2.0 * math.pi)
    c = 0.5 ** 2 / 0.25 + 0.2 ** 2 / 2.16
    np.testing.assert_allclose(bb.v, [v1, v2], atol=1e-12)
    np.testing.assert_allclose(bb.a, [0.5, 0.2], atol=1e-12)
    np.testing.assert_allclose(bb.info_tilde, np.diag([0.25, 2.16]), atol=1e-12)
    np.testing.assert_allclose(bb.alloc_var,
                               v1 * v2 + 2.0 * dens * dens / (v1 * v2),
                               atol=1e-12)
    np.testing.assert_allclose(bb.mu_cov,
                               [[1.0 / v1 + c, c], [c, 1.0 / v2 + c]],
                               atol=1e-12)
    np.testing.assert_allclose(bb.beta_cov, np.diag([4.0, 1.0 / 2.16]),
                               atol=1e-12)


def test_bb_equal_means_allocate_half():
    raw = bb_config(n=100, replicates=1, seed=0)
    raw["model"]["true_theta"] = [[0.5, 1.0, -0.7], [0.5, 1.0, -0.7]]
    model, rule = _pair(raw)
    bb = bb_closed_forms(model, rule)
    np.testing.assert_allclose(bb.v, [0.5, 0.5], atol=1e-12)


def test_bb_centred_covariates_give_diagonal_mean_covariance():
    raw = bb_config(n=100, replicates=1, seed=0)
    raw["model"]["covariates"]["coords"] = [
        {"kind": "constant", "value": 1.0},
        {"kind": "two-point", "a": -1.0, "b": 1.0, "p_a": 0.5},
        {"kind": "two-point", "a": -2.0, "b": 2.0, "p_a": 0.5},
    ]
    model, rule = _pair(raw)
    bb = bb_closed_forms(model, rule)
    v1 = ndtr(1.0)
    np.testing.assert_array_equal(bb.a, 0.0)
    assert bb.mu_cov[0, 1] == 0.0 and bb.mu_cov[1, 0] == 0.0
    np.testing.assert_allclose(np.diag(bb.mu_cov),
                               [1.0 / v1, 1.0 / (1.0 - v1)], atol=1e-12)


def test_bb_closed_forms_reject_wrong_shapes():
    model, rule = _bb_pair()
    raw = bb_config(n=100, replicates=1, seed=0)
    raw["model"]["shared_slopes"] = False
    flat, _ = _pair(raw)
    with pytest.raises(ValueError, match="shared-slope"):
        bb_closed_forms(flat, rule)
    with pytest.raises(ValueError, match="covariate-free normal"):
        bb_closed_forms(model, AllocationRule.odds_ratio())
    raw = bb_config(n=100, replicates=1, seed=0)
    raw["model"]["arms"][1]["dispersion"] = 2.0
    mixed, _ = _pair(raw)
    with pytest.raises(ValueError, match="common error variance"):
        bb_closed_forms(mixed, rule)


def test_bb_degenerate_covariate_block_is_singular():
    arm = ArmModel(family="normal-linear", dispersion=1.0)
    model = TrialModel(arms=(arm, arm),
                       covariates=CovariateSpec.constant([1.0, 0.5]),
                       true_theta=np.array([[0.5, 0.2], [-0.5, 0.2]]),
                       box_lo=-4.0, box_hi=4.0, shared_slopes=True)
    with pytest.raises(SingularInformationError):
        bb_closed_forms(model, AllocationRule.covariate_free_normal(T=1.0))


# ---------------------------------------------------------------------------
# Least-squares sandwich covariance
# ---------------------------------------------------------------------------


def test_lse_sandwich_homoscedastic_reduces_to_scaled_inverse():
    model, rule = _bb_pair()
    ls = lse_sandwich(model, rule)
    for k in range(model.K):
        np.testing.assert_allclose(ls.V[k], np.linalg.inv(ls.info_x[k]),
                                   rtol=0.0, atol=1e-10)


def test_lse_sandwich_equal_allocation_hand_value():
    arm = ArmModel(family="normal-linear", dispersion=2.0)
    model = TrialModel(arms=(arm, arm), covariates=CovariateSpec.constant([1.0]),
                       true_theta=np.array([[0.1], [0.1]]),
                       box_lo=-3.0, box_hi=3.0)
    ls = lse_sandwich(model, AllocationRule.covariate_free_normal(T=1.0))
    np.testing.assert_allclose(ls.info_x, np.full((2, 1, 1), 0.5), atol=1e-12)
    np.testing.assert_allclose(ls.info_y, np.full((2, 1, 1), 1.0), atol=1e-12)
    np.testing.assert_allclose(ls.V, np.full((2, 1, 1), 4.0), atol=1e-12)


def test_lse_sandwich_zero_variance_override_gives_zero():
    model, rule = _bb_pair()
    ls = lse_sandwich(model, rule, conditional_variance_fn=lambda k, x: 0.0)
    np.testing.assert_array_equal(ls.V, 0.0)


def test_lse_sandwich_logistic_moments_match_enumeration():
    model, rule = _two_point_pair()
    ls = lse_sandwich(model, rule)
    pts, pr = model.covariates.enumerated()
    theta = model.true_theta
    for k in range(model.K):
        info_x = np.zeros((2, 2))
        info_y = np.zeros((2, 2))
        for s in range(pts.shape[0]):
            x = pts[s]
            pi_k = probabilities(rule, theta, x)[k]
            p = 1.0 / (1.0 + math.exp(-float(theta[k] @ x)))
            info_x += pr[s] * pi_k * np.outer(x, x)
            info_y += pr[s] * pi_k * p * (1.0 - p) * np.outer(x, x)
        np.testing.assert_allclose(ls.info_x[k], info_x, atol=1e-12)
        np.testing.assert_allclose(ls.info_y[k], info_y, atol=1e-12)
        inv = np.linalg.inv(info_x)
        np.testing.assert_allclose(ls.V[k], inv @ info_y @ inv, atol=1e-12)


def test_lse_sandwich_degenerate_design_is_singular():
    arm = ArmModel(family="normal-linear", dispersion=1.0)
    model = TrialModel(arms=(arm, arm),
                       covariates=CovariateSpec.constant([1.0, 0.0]),
                       true_theta=np.zeros((2, 2)), box_lo=-3.0, box_hi=3.0)
    with pytest.raises(SingularInformationError):
        lse_sandwich(model, AllocationRule.covariate_free_normal(T=1.0))
