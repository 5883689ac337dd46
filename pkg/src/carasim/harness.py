"""Experiment configuration, Monte Carlo replication, verification, reports.

The harness turns a JSON experiment document into validated objects, fans
replicated trials out over workers with per-replicate seed derivation
(replicate ``i`` of master seed ``s`` uses the stream rooted at
``SeedSequence(s, spawn_key=(i,))``), aggregates empirical moments against
the asymptotic theory, and emits deterministic reports: byte-identical for
the same (config, master seed) at any worker count.

Covariances are sample covariances (denominator R - 1) computed over the
successfully completed replicates in replicate-index order.
"""

from __future__ import annotations

import concurrent.futures
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fixtures
from .allocation import AllocationRule
from .asymptotics import (
    TheoryOptions,
    TheoryReport,
    bb_closed_forms,
    iid_mle_covariance,
    plugin_estimates,
    scaled_mle_covariance,
    theory_report,
)
from .engine import EngineOptions, TrialHistory, replicate_root, run_trial
from .estimation import ArmSample, FitOptions, fit_linear_lse, fit_logistic_mle
from .model import ArmModel, Constant, CovariateSpec, TrialModel, TwoPoint, Uniform

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ReplicationSummary",
    "PluginAggregates",
    "CriterionCheck",
    "VerificationReport",
    "parse_config",
    "run_replications",
    "emit_reports",
    "report_json_bytes",
    "verification_json_bytes",
    "verify",
    "verify_config",
    "CRITERIA",
    "CRITERIA_ALIASES",
]


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def _need(doc: dict, key: str, ctx: str):
    if key not in doc:
        raise ConfigError(f"missing key '{ctx}.{key}'" if ctx else f"missing key '{key}'")
    return doc[key]


def _as_mapping(value, ctx: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"key '{ctx}' must be an object")
    return value


def _as_int(value, ctx: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"key '{ctx}' must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"key '{ctx}' must be >= {minimum}, got {value}")
    return value


def _as_number(value, ctx: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"key '{ctx}' must be a number")
    return float(value)


def _parse_coord(doc, ctx: str):
    doc = _as_mapping(doc, ctx)
    kind = _need(doc, "kind", ctx)
    try:
        if kind == "uniform":
            return Uniform(_as_number(_need(doc, "lo", ctx), f"{ctx}.lo"),
                           _as_number(_need(doc, "hi", ctx), f"{ctx}.hi"))
        if kind == "two-point":
            return TwoPoint(_as_number(_need(doc, "a", ctx), f"{ctx}.a"),
                            _as_number(_need(doc, "b", ctx), f"{ctx}.b"),
                            _as_number(doc.get("p_a", 0.5), f"{ctx}.p_a"))
        if kind == "constant":
            return Constant(_as_number(_need(doc, "value", ctx), f"{ctx}.value"))
    except ValueError as exc:
        raise ConfigError(f"invalid coordinate at '{ctx}': {exc}") from exc
    raise ConfigError(f"key '{ctx}.kind' must be one of uniform, two-point, constant; got {kind!r}")


def _parse_covariates(doc, ctx: str) -> CovariateSpec:
    doc = _as_mapping(doc, ctx)
    kind = _need(doc, "kind", ctx)
    try:
        if kind == "discrete":
            return CovariateSpec.discrete(_need(doc, "support", ctx),
                                          _need(doc, "probs", ctx),
                                          intercept=bool(doc.get("intercept", False)))
        if kind == "continuous-product":
            coords = _need(doc, "coords", ctx)
            if not isinstance(coords, list) or not coords:
                raise ConfigError(f"key '{ctx}.coords' must be a non-empty array")
            parsed = [_parse_coord(c, f"{ctx}.coords[{i}]") for i, c in enumerate(coords)]
            return CovariateSpec.product(parsed, intercept=bool(doc.get("intercept", False)))
        if kind == "constant":
            return CovariateSpec.constant(_need(doc, "values", ctx))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid covariate spec at '{ctx}': {exc}") from exc
    raise ConfigError(
        f"key '{ctx}.kind' must be one of discrete, continuous-product, constant; got {kind!r}")


def _parse_model(doc, ctx: str = "model") -> TrialModel:
    doc = _as_mapping(doc, ctx)
    arms_doc = _need(doc, "arms", ctx)
    if not isinstance(arms_doc, list) or len(arms_doc) < 2:
        raise ConfigError(f"key '{ctx}.arms' must be an array of at least two arms")
    arms = []
    for i, a in enumerate(arms_doc):
        a = _as_mapping(a, f"{ctx}.arms[{i}]")
        family = _need(a, "family", f"{ctx}.arms[{i}]")
        try:
            arms.append(ArmModel(family=family,
                                 dispersion=_as_number(a.get("dispersion", 1.0),
                                                       f"{ctx}.arms[{i}].dispersion")))
        except ValueError as exc:
            raise ConfigError(f"invalid arm at '{ctx}.arms[{i}]': {exc}") from exc
    covariates = _parse_covariates(_need(doc, "covariates", ctx), f"{ctx}.covariates")
    theta = np.asarray(_need(doc, "true_theta", ctx), dtype=float)
    try:
        return TrialModel(arms=tuple(arms), covariates=covariates, true_theta=theta,
                          box_lo=np.asarray(_need(doc, "box_lo", ctx), dtype=float),
                          box_hi=np.asarray(_need(doc, "box_hi", ctx), dtype=float),
                          shared_slopes=bool(doc.get("shared_slopes", False)))
    except ValueError as exc:
        raise ConfigError(f"invalid model at '{ctx}': {exc}") from exc


def _parse_rule(doc, ctx: str = "rule") -> AllocationRule:
    doc = _as_mapping(doc, ctx)
    kind = _need(doc, "kind", ctx)
    T = doc.get("T")
    if T is not None:
        T = _as_number(T, f"{ctx}.T")
    try:
        return AllocationRule(kind=kind, T=T, g_name=doc.get("g"))
    except ValueError as exc:
        raise ConfigError(f"invalid rule at '{ctx}': {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    model: TrialModel
    rule: AllocationRule
    n: int
    m0: int
    refit_interval: int
    theta_stride: int
    replicates: int
    seed: int
    workers: int
    x_list: tuple[np.ndarray, ...]
    plugins: bool
    dispersion: str
    criteria: tuple[str, ...]
    tolerance_overrides: dict
    raw: dict

    def engine_options(self) -> EngineOptions:
        return EngineOptions(refit_interval=self.refit_interval,
                             theta_stride=self.theta_stride,
                             fit=FitOptions(check_conditioning=False))


def parse_config(document: dict | str | Path) -> ExperimentConfig:
    """Validate a JSON experiment document (mapping, JSON text, or file path)."""
    if isinstance(document, (str, Path)):
        path = Path(document)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            document = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError("config document must be a JSON object")

    model = _parse_model(_need(document, "model", ""))
    rule = _parse_rule(_need(document, "rule", ""))
    if rule.kind in ("odds-ratio", "two-arm-g-difference", "covariate-free-normal") \
            and model.K != 2:
        raise ConfigError(f"key 'rule.kind' = {rule.kind!r} requires exactly two arms, "
                          f"got K = {model.K}")
    if rule.kind == "covariate-free-normal" and not model.covariates.has_unit_first_coordinate():
        raise ConfigError("key 'rule.kind' = 'covariate-free-normal' requires a leading "
                          "constant-1 covariate coordinate (arm means as intercepts)")

    trial = _as_mapping(document.get("trial", {}), "trial")
    n = _as_int(_need(trial, "n", "trial"), "trial.n", minimum=1)
    m0 = _as_int(trial.get("m0", model.d + 1), "trial.m0", minimum=1)
    if m0 < model.d + 1:
        raise ConfigError(f"key 'trial.m0' must be at least d + 1 = {model.d + 1}, got {m0}")
    if n < model.K * m0:
        raise ConfigError(f"key 'trial.n' = {n} is smaller than the burn-in size "
                          f"K * m0 = {model.K * m0}")
    refit_interval = _as_int(trial.get("refit_interval", 1), "trial.refit_interval", minimum=1)
    theta_stride = _as_int(trial.get("theta_stride", 1), "trial.theta_stride", minimum=1)

    rep = _as_mapping(document.get("replication", {}), "replication")
    replicates = _as_int(rep.get("replicates", 1), "replication.replicates", minimum=1)
    seed = _as_int(rep.get("seed", 0), "replication.seed", minimum=0)
    workers = _as_int(rep.get("workers", 1), "replication.workers", minimum=1)
    plugins = bool(rep.get("plugins", False))
    dispersion = rep.get("dispersion", "model")
    if dispersion not in ("model", "estimated"):
        raise ConfigError("key 'replication.dispersion' must be 'model' or 'estimated', "
                          f"got {dispersion!r}")
    x_raw = rep.get("x_list", [])
    if not isinstance(x_raw, list):
        raise ConfigError("key 'replication.x_list' must be an array of covariate points")
    x_list = []
    for j, xv in enumerate(x_raw):
        x = np.asarray(xv, dtype=float).ravel()
        if x.shape != (model.d,):
            raise ConfigError(f"key 'replication.x_list[{j}]' has dimension {x.shape[0]}, "
                              f"expected {model.d}")
        if model.covariates.mass(x) <= 0.0:
            raise ConfigError(f"key 'replication.x_list[{j}]' = {x.tolist()} is not a "
                              "support point of the covariate distribution")
        x.setflags(write=False)
        x_list.append(x)

    criteria = document.get("criteria", [])
    if not isinstance(criteria, list) or not all(isinstance(c, str) for c in criteria):
        raise ConfigError("key 'criteria' must be an array of criterion names")
    overrides = document.get("tolerance_overrides", {})
    if not isinstance(overrides, dict):
        raise ConfigError("key 'tolerance_overrides' must be an object")

    return ExperimentConfig(model=model, rule=rule, n=n, m0=m0,
                            refit_interval=refit_interval, theta_stride=theta_stride,
                            replicates=replicates, seed=seed, workers=workers,
                            x_list=tuple(x_list), plugins=plugins, dispersion=dispersion,
                            criteria=tuple(criteria), tolerance_overrides=dict(overrides),
                            raw=json.loads(json.dumps(document)))


# ---------------------------------------------------------------------------
# Replication driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PluginAggregates:
    sigma_hat_median: np.ndarray
    sigma1_hat_median: np.ndarray
    V_hat_median: np.ndarray
    cond_sigma_median: np.ndarray  # (nx, K, K)
    rel_dev_sigma_median: float
    rel_dev_V_median: np.ndarray  # (K,)
    warning_count: int


@dataclass(frozen=True)
class ReplicationSummary:
    n: int
    K: int
    d: int
    replicates: int
    master_seed: int
    theory: TheoryReport
    counts: np.ndarray  # (R, K)
    theta_hat: np.ndarray  # (R, K, d)
    cond_totals: np.ndarray  # (R, nx)
    cond_counts: np.ndarray  # (R, nx, K)
    ok: np.ndarray  # (R,) bool
    failures: tuple[int, ...]
    x_list: tuple[np.ndarray, ...]
    alloc_dev_mean: np.ndarray  # (K,)
    alloc_dev_cov: np.ndarray  # (K, K)
    theta_dev_mean: np.ndarray  # (K, d)
    theta_dev_cov: np.ndarray  # (K*d, K*d)
    cond_dev_mean: np.ndarray  # (nx, K)
    cond_dev_cov: np.ndarray  # (nx, K, K)
    cond_valid: np.ndarray  # (nx,)
    var_ratio_alloc: np.ndarray  # (K,)
    var_ratio_theta: np.ndarray  # (K, d)
    plugins: PluginAggregates | None
    config: dict


def _sample_cov(devs: np.ndarray) -> np.ndarray:
    """Two-pass sample covariance (denominator R - 1) of (R, p) deviations."""
    R = devs.shape[0]
    if R < 2:
        return np.zeros((devs.shape[1], devs.shape[1]))
    centred = devs - devs.mean(axis=0)
    return centred.T @ centred / (R - 1)


def _replicate_block(raw: dict, indices: list[int]) -> dict:
    cfg = parse_config(raw)
    model, rule = cfg.model, cfg.rule
    K, d, nx = model.K, model.d, len(cfg.x_list)
    B = len(indices)
    out = {
        "indices": indices,
        "counts": np.zeros((B, K), dtype=np.int64),
        "theta": np.zeros((B, K, d)),
        "cond_totals": np.zeros((B, nx), dtype=np.int64),
        "cond_counts": np.zeros((B, nx, K), dtype=np.int64),
        "ok": np.zeros(B, dtype=bool),
        "plugin_sigma": np.zeros((B, K, K)) if cfg.plugins else None,
        "plugin_sigma1": np.zeros((B, K, K)) if cfg.plugins else None,
        "plugin_V": np.zeros((B, K, d, d)) if cfg.plugins else None,
        "plugin_cond": np.zeros((B, nx, K, K)) if cfg.plugins else None,
        "plugin_warnings": 0,
    }
    opts = cfg.engine_options()
    theory_opts = TheoryOptions(dispersion=cfg.dispersion)
    for j, i in enumerate(indices):
        try:
            hist = run_trial(model, rule, cfg.n, cfg.m0, replicate_root(cfg.seed, i), opts)
            out["counts"][j] = hist.counts()
            out["theta"][j] = hist.current_theta
            for q, x in enumerate(cfg.x_list):
                total, per_arm = hist.counts_given_x(x)
                out["cond_totals"][j, q] = total
                out["cond_counts"][j, q] = per_arm
            if cfg.plugins:
                rep = plugin_estimates(hist, model, rule, cfg.x_list, theory_opts)
                out["plugin_sigma"][j] = rep.sigma_hat
                out["plugin_sigma1"][j] = rep.sigma1_hat
                out["plugin_V"][j] = rep.V_hat
                for q in range(nx):
                    out["plugin_cond"][j, q] = rep.conditional[q].sigma
                out["plugin_warnings"] += len(rep.warnings)
            out["ok"][j] = True
        except Exception:
            out["ok"][j] = False
    return out


def _split_blocks(R: int, workers: int) -> list[list[int]]:
    workers = max(1, min(workers, R))
    base, rem = divmod(R, workers)
    blocks, start = [], 0
    for w in range(workers):
        size = base + (1 if w < rem else 0)
        if size:
            blocks.append(list(range(start, start + size)))
        start += size
    return blocks


def run_replications(config: ExperimentConfig, workers: int | None = None) -> ReplicationSummary:
    """Run R independent trials and aggregate them against the theory report.

    Replicate ``i`` always uses the stream rooted at ``(master seed, i)``, so
    the summary is identical for any worker count.  Per-replicate failures
    are recorded and skipped in the aggregates; the run continues.
    """
    if workers is None:
        workers = config.workers
    model, rule = config.model, config.rule
    K, d, nx = model.K, model.d, len(config.x_list)
    R = config.replicates
    theory = theory_report(model, rule, config.x_list,
                           TheoryOptions(dispersion=config.dispersion))

    counts = np.zeros((R, K), dtype=np.int64)
    theta_hat = np.zeros((R, K, d))
    cond_totals = np.zeros((R, nx), dtype=np.int64)
    cond_counts = np.zeros((R, nx, K), dtype=np.int64)
    ok = np.zeros(R, dtype=bool)
    p_sigma = np.zeros((R, K, K)) if config.plugins else None
    p_sigma1 = np.zeros((R, K, K)) if config.plugins else None
    p_V = np.zeros((R, K, d, d)) if config.plugins else None
    p_cond = np.zeros((R, nx, K, K)) if config.plugins else None
    warning_count = 0

    blocks = _split_blocks(R, workers)
    if len(blocks) == 1:
        results = [_replicate_block(config.raw, blocks[0])]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=len(blocks)) as pool:
            results = list(pool.map(_replicate_block, [config.raw] * len(blocks), blocks))

    for res in results:
        idx = np.asarray(res["indices"], dtype=int)
        counts[idx] = res["counts"]
        theta_hat[idx] = res["theta"]
        cond_totals[idx] = res["cond_totals"]
        cond_counts[idx] = res["cond_counts"]
        ok[idx] = res["ok"]
        if config.plugins:
            p_sigma[idx] = res["plugin_sigma"]
            p_sigma1[idx] = res["plugin_sigma1"]
            p_V[idx] = res["plugin_V"]
            p_cond[idx] = res["plugin_cond"]
            warning_count += res["plugin_warnings"]

    failures = tuple(int(i) for i in np.flatnonzero(~ok))
    good = np.flatnonzero(ok)
    sqrt_n = math.sqrt(config.n)

    alloc_dev = sqrt_n * (counts[good] / config.n - theory.v)
    alloc_dev_mean = alloc_dev.mean(axis=0) if good.size else np.zeros(K)
    alloc_dev_cov = _sample_cov(alloc_dev)

    theta_dev = sqrt_n * (theta_hat[good] - model.true_theta)
    theta_flat = theta_dev.reshape(good.size, K * d) if good.size else np.zeros((0, K * d))
    theta_dev_mean = theta_dev.mean(axis=0) if good.size else np.zeros((K, d))
    theta_dev_cov = _sample_cov(theta_flat)

    cond_dev_mean = np.zeros((nx, K))
    cond_dev_cov = np.zeros((nx, K, K))
    cond_valid = np.zeros(nx, dtype=int)
    for q in range(nx):
        totals = cond_totals[good, q].astype(float)
        valid = totals > 0
        cond_valid[q] = int(valid.sum())
        if not np.any(valid):
            continue
        frac = cond_counts[good, q][valid] / totals[valid, None]
        dev = np.sqrt(totals[valid, None]) * (frac - theory.conditional[q].pi)
        cond_dev_mean[q] = dev.mean(axis=0)
        cond_dev_cov[q] = _sample_cov(dev)

    sig_diag = np.diag(theory.sigma)
    var_ratio_alloc = np.where(sig_diag > 0, np.diag(alloc_dev_cov) / np.where(sig_diag > 0, sig_diag, 1.0), np.nan)
    v_diag = np.array([[theory.V[k, j, j] for j in range(d)] for k in range(K)])
    emp_theta_var = np.array([[theta_dev_cov[k * d + j, k * d + j] for j in range(d)]
                              for k in range(K)])
    var_ratio_theta = np.where(v_diag > 0, emp_theta_var / np.where(v_diag > 0, v_diag, 1.0), np.nan)

    plugins = None
    if config.plugins:
        norm_inf = lambda m: float(np.max(np.abs(m)))
        denom_sigma = norm_inf(theory.sigma)
        rel_sigma = np.array([norm_inf(p_sigma[i] - theory.sigma) / denom_sigma for i in good])
        rel_V = np.array([[norm_inf(p_V[i, k] - theory.V[k]) / norm_inf(theory.V[k])
                           for k in range(K)] for i in good])
        plugins = PluginAggregates(
            sigma_hat_median=np.median(p_sigma[good], axis=0),
            sigma1_hat_median=np.median(p_sigma1[good], axis=0),
            V_hat_median=np.median(p_V[good], axis=0),
            cond_sigma_median=np.median(p_cond[good], axis=0) if nx else np.zeros((0, K, K)),
            rel_dev_sigma_median=float(np.median(rel_sigma)) if good.size else math.nan,
            rel_dev_V_median=np.median(rel_V, axis=0) if good.size else np.full(K, math.nan),
            warning_count=warning_count,
        )

    return ReplicationSummary(
        n=config.n, K=K, d=d, replicates=R, master_seed=config.seed, theory=theory,
        counts=counts, theta_hat=theta_hat, cond_totals=cond_totals,
        cond_counts=cond_counts, ok=ok, failures=failures, x_list=config.x_list,
        alloc_dev_mean=alloc_dev_mean, alloc_dev_cov=alloc_dev_cov,
        theta_dev_mean=theta_dev_mean, theta_dev_cov=theta_dev_cov,
        cond_dev_mean=cond_dev_mean, cond_dev_cov=cond_dev_cov, cond_valid=cond_valid,
        var_ratio_alloc=var_ratio_alloc, var_ratio_theta=var_ratio_theta,
        plugins=plugins, config=config.raw)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _mat(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": [int(s) for s in a.shape],
            "data": [float(v) for v in a.ravel(order="C")]}


def _theory_payload(t: TheoryReport) -> dict:
    return {
        "method": {"kind": t.method.kind, "size": int(t.method.size),
                   "stderr": None if t.method.stderr is None else float(t.method.stderr)},
        "v": _mat(t.v),
        "dg": _mat(t.dg),
        "info": _mat(t.info),
        "V": _mat(t.V),
        "sigma1": _mat(t.sigma1),
        "sigma2": _mat(t.sigma2),
        "sigma": _mat(t.sigma),
        "conditional": [
            {"x": _mat(c.x), "mass": float(c.mass), "pi": _mat(c.pi), "sigma": _mat(c.sigma)}
            for c in t.conditional
        ],
    }


def summary_payload(s: ReplicationSummary) -> dict:
    payload = {
        "version": __version__,
        "config": s.config,
        "master_seed": int(s.master_seed),
        "n": int(s.n),
        "replicates": int(s.replicates),
        "failures": [int(i) for i in s.failures],
        "theory": _theory_payload(s.theory),
        "empirical": {
            "alloc_dev_mean": _mat(s.alloc_dev_mean),
            "alloc_dev_cov": _mat(s.alloc_dev_cov),
            "theta_dev_mean": _mat(s.theta_dev_mean),
            "theta_dev_cov": _mat(s.theta_dev_cov),
            "var_ratio_alloc": _mat(s.var_ratio_alloc),
            "var_ratio_theta": _mat(s.var_ratio_theta),
            "conditional": [
                {"x": _mat(s.x_list[q]), "replicates_with_mass": int(s.cond_valid[q]),
                 "dev_mean": _mat(s.cond_dev_mean[q]), "dev_cov": _mat(s.cond_dev_cov[q])}
                for q in range(len(s.x_list))
            ],
        },
        "plugins": None,
    }
    if s.plugins is not None:
        p = s.plugins
        payload["plugins"] = {
            "sigma_hat_median": _mat(p.sigma_hat_median),
            "sigma1_hat_median": _mat(p.sigma1_hat_median),
            "V_hat_median": _mat(p.V_hat_median),
            "cond_sigma_median": _mat(p.cond_sigma_median),
            "rel_dev_sigma_median": float(p.rel_dev_sigma_median),
            "rel_dev_V_median": _mat(p.rel_dev_V_median),
            "warning_count": int(p.warning_count),
        }
    return payload


def report_json_bytes(s: ReplicationSummary) -> bytes:
    return (json.dumps(summary_payload(s), indent=2, sort_keys=True) + "\n").encode()


def replicate_csv_lines(s: ReplicationSummary) -> list[str]:
    K, d, nx = s.K, s.d, len(s.x_list)
    cols = ["replicate", "seed"]
    cols += [f"N_{k + 1}" for k in range(K)]
    cols += [f"theta_{k + 1}_{j + 1}" for k in range(K) for j in range(d)]
    for q in range(nx):
        cols.append(f"n_x{q + 1}")
        cols += [f"p_x{q + 1}_{k + 1}" for k in range(K)]
    lines = [",".join(cols)]
    for i in range(s.replicates):
        if not s.ok[i]:
            continue
        row = [str(i), str(i)]
        row += [str(int(c)) for c in s.counts[i]]
        row += [f"{v:.17g}" for v in s.theta_hat[i].ravel(order="C")]
        for q in range(nx):
            total = int(s.cond_totals[i, q])
            row.append(str(total))
            if total > 0:
                row += [f"{s.cond_counts[i, q, k] / total:.17g}" for k in range(K)]
            else:
                row += ["nan"] * K
        lines.append(",".join(row))
    return lines


def emit_reports(summary: ReplicationSummary, out_dir, history: TrialHistory | None = None) -> dict:
    """Write the JSON report and per-replicate CSV (and optionally one
    trial's per-patient CSV) into ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        report = out / "report.json"
        report.write_bytes(report_json_bytes(summary))
        paths["report"] = str(report)
        csv_path = out / "replicates.csv"
        with open(csv_path, "w", newline="\n") as f:
            f.write("\n".join(replicate_csv_lines(summary)) + "\n")
        paths["replicates"] = str(csv_path)
        if history is not None:
            patients = out / "patients.csv"
            history.to_patient_csv(patients)
            paths["patients"] = str(patients)
            trial_summary = out / "trial.json"
            history.to_json(trial_summary)
            paths["trial"] = str(trial_summary)
        return paths
    except OSError as exc:
        raise OSError(f"failed writing reports under {out}: {exc}") from exc


# ---------------------------------------------------------------------------
# Verification criteria
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriterionCheck:
    criterion: str
    check: str
    observed: float
    target: float
    band: tuple[float, float]
    passed: bool

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} {self.criterion}/{self.check}: observed {self.observed:.6g}, "
                f"target {self.target:.6g}, band [{self.band[0]:.6g}, {self.band[1]:.6g}]")


@dataclass(frozen=True)
class VerificationReport:
    master_seed: int
    criteria: tuple[str, ...]
    checks: tuple[CriterionCheck, ...]
    passed: bool


def verification_json_bytes(report: VerificationReport) -> bytes:
    payload = {
        "master_seed": int(report.master_seed),
        "criteria": list(report.criteria),
        "passed": bool(report.passed),
        "checks": [
            {"criterion": c.criterion, "check": c.check, "observed": float(c.observed),
             "target": float(c.target), "band": [float(c.band[0]), float(c.band[1])],
             "passed": bool(c.passed)}
            for c in report.checks
        ],
    }
    return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode()


def _apply_override(ov: dict, cid: str, target: float,
                    band: tuple[float, float], proportional: bool):
    o = ov.get(cid, {})
    scale = float(o.get("target_scale", 1.0))
    target = target * scale
    if "band" in o:
        lo, hi = float(o["band"][0]), float(o["band"][1])
        band = (lo * target, hi * target) if proportional else (lo, hi)
    elif proportional:
        band = (band[0] * scale, band[1] * scale)
    return target, band


def _ratio_check(ov: dict, criterion: str, check: str, observed: float, target: float,
                 lo: float, hi: float) -> CriterionCheck:
    cid = f"{criterion}/{check}"
    target, band = _apply_override(ov, cid, target, (lo * target, hi * target), True)
    return CriterionCheck(criterion=criterion, check=check, observed=float(observed),
                          target=float(target), band=band,
                          passed=band[0] <= observed <= band[1])


def _abs_check(ov: dict, criterion: str, check: str, observed: float,
               lo: float, hi: float, target: float = 0.0) -> CriterionCheck:
    cid = f"{criterion}/{check}"
    target, band = _apply_override(ov, cid, target, (lo, hi), False)
    return CriterionCheck(criterion=criterion, check=check, observed=float(observed),
                          target=float(target), band=band,
                          passed=band[0] <= observed <= band[1])


def _cached_summary(cache: dict, key: tuple, raw: dict, workers: int) -> ReplicationSummary:
    if key not in cache:
        cache[key] = run_replications(parse_config(raw), workers=workers)
    return cache[key]


def _c_theory_exact(seed, cache, workers, ov):
    cfg = parse_config(fixtures.f1_config(n=100, replicates=1, seed=seed))
    rep = theory_report(cfg.model, cfg.rule)
    exact = fixtures.F1_EXACT
    out = []
    for name, got in (("v", rep.v), ("info", rep.info), ("V", rep.V),
                      ("sigma1", rep.sigma1), ("sigma2", rep.sigma2), ("sigma", rep.sigma)):
        dev = float(np.max(np.abs(np.asarray(got) - exact[name])))
        out.append(_abs_check(ov, "theory-exact", f"max-dev-{name}", dev, 0.0, 1e-10))
    return out


def _f1_clt_summary(seed, cache, workers):
    raw = fixtures.f1_config(n=1000, replicates=2000, seed=seed)
    return _cached_summary(cache, ("f1-clt", seed), raw, workers)


def _c_allocation_clt(seed, cache, workers, ov):
    s = _f1_clt_summary(seed, cache, workers)
    return [
        _ratio_check(ov, "allocation-clt", "var-sqrt-n-N1", s.alloc_dev_cov[0, 0],
                     s.theory.sigma[0, 0], 0.85, 1.15),
        _abs_check(ov, "allocation-clt", "mean-sqrt-n-N1", s.alloc_dev_mean[0],
                   -0.09, 0.09),
    ]


def _c_estimator_clt(seed, cache, workers, ov):
    s = _f1_clt_summary(seed, cache, workers)
    out = []
    for k in range(s.K):
        out.append(_ratio_check(ov, "estimator-clt", f"var-sqrt-n-theta{k + 1}",
                                s.theta_dev_cov[k * s.d, k * s.d],
                                s.theory.V[k, 0, 0], 0.85, 1.15))
    return out


def _c_conditional_clt(seed, cache, workers, ov):
    raw = fixtures.two_point_config(n=2000, replicates=2000, seed=seed)
    s = _cached_summary(cache, ("two-point-clt", seed), raw, workers)
    out = []
    for q in range(len(s.x_list)):
        out.append(_ratio_check(ov, "conditional-clt", f"var-arm1-x{q + 1}",
                                s.cond_dev_cov[q, 0, 0],
                                s.theory.conditional[q].sigma[0, 0], 0.8, 1.2))
    return out


def _c_plugin_consistency(seed, cache, workers, ov):
    raw = fixtures.f1_config(n=5000, replicates=100, seed=seed, plugins=True)
    s = _cached_summary(cache, ("f1-plugin", seed), raw, workers)
    out = [_abs_check(ov, "plugin-consistency", "median-rel-dev-sigma",
                      s.plugins.rel_dev_sigma_median, 0.0, 0.10)]
    for k in range(s.K):
        out.append(_abs_check(ov, "plugin-consistency", f"median-rel-dev-V{k + 1}",
                              s.plugins.rel_dev_V_median[k], 0.0, 0.10))
    return out


def _c_bb_closed_forms(seed, cache, workers, ov):
    raw = fixtures.bb_config(n=2000, replicates=2000, seed=seed)
    s = _cached_summary(cache, ("bb-clt", seed), raw, workers)
    cfg = parse_config(raw)
    bb = bb_closed_forms(cfg.model, cfg.rule)
    return [
        _ratio_check(ov, "bb-closed-forms", "var-sqrt-n-N1", s.alloc_dev_cov[0, 0],
                     bb.alloc_var, 0.85, 1.15),
        _ratio_check(ov, "bb-closed-forms", "var-sqrt-n-mu1", s.theta_dev_cov[0, 0],
                     bb.mu_cov[0, 0], 0.85, 1.15),
    ]


def _c_coincidence(seed, cache, workers, ov):
    out = []
    for i, raw in enumerate(fixtures.coincidence_configs(seed)):
        cfg = parse_config(raw)
        adaptive = scaled_mle_covariance(cfg.model, cfg.rule)
        iid = iid_mle_covariance(cfg.model)
        dev = float(np.max(np.abs(adaptive - iid)))
        out.append(_abs_check(ov, "covariate-free-coincidence", f"fixture{i + 1}",
                              dev, 0.0, 1e-10))
    return out


def _c_mle_lse_oracle(seed, cache, workers, ov):
    x, y = fixtures.MLE_X, fixtures.MLE_Y
    grid = np.arange(-5.0, 5.0 + 5e-5, 1e-4)
    mu = np.outer(grid, x)
    ll = (y * mu - np.logaddexp(0.0, mu)).sum(axis=1)
    theta_grid = float(grid[int(np.argmax(ll))])
    fit = fit_logistic_mle(ArmSample(X=x[:, None], y=y), np.array([-5.0]), np.array([5.0]))
    mle_dev = abs(float(fit.theta_hat[0]) - theta_grid)

    rng = np.random.default_rng(seed)
    Xl = np.column_stack([np.ones(50), rng.normal(size=50)])
    yl = Xl @ np.array([0.7, -1.2]) + rng.normal(size=50)
    A = Xl.T @ Xl
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    Ainv = np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]]) / det
    theta_closed = Ainv @ (Xl.T @ yl)
    lfit = fit_linear_lse(ArmSample(X=Xl, y=yl), np.array([-5.0, -5.0]), np.array([5.0, 5.0]))
    lse_dev = float(np.max(np.abs(lfit.theta_hat - theta_closed)))
    return [
        _abs_check(ov, "mle-lse-oracle", "logistic-vs-grid", mle_dev, 0.0, 1e-3),
        _abs_check(ov, "mle-lse-oracle", "lse-vs-closed-form", lse_dev, 0.0, 1e-10),
    ]


def _c_consistency_rate(seed, cache, workers, ov):
    medians = {}
    for n in (500, 2000, 10000):
        raw = fixtures.f1_config(n=n, replicates=200, seed=seed)
        s = _cached_summary(cache, ("f1-rate", n, seed), raw, workers)
        good = np.flatnonzero(s.ok)
        err = np.linalg.norm(
            (s.theta_hat[good] - parse_config(raw).model.true_theta).reshape(good.size, -1),
            axis=1)
        medians[n] = float(np.median(err))
    return [
        _abs_check(ov, "consistency-rate", "median-err-2000-over-500",
                   medians[2000] / medians[500], 0.0, 1.0 - 1e-12, target=1.0),
        _abs_check(ov, "consistency-rate", "median-err-10000-over-2000",
                   medians[10000] / medians[2000], 0.0, 1.0 - 1e-12, target=1.0),
    ]


def _c_determinism(seed, cache, workers, ov):
    raw = fixtures.f1_config(n=200, replicates=32, seed=seed)
    cfg = parse_config(raw)
    b1 = report_json_bytes(run_replications(cfg, workers=1))
    b2 = report_json_bytes(run_replications(cfg, workers=1))
    b8 = report_json_bytes(run_replications(cfg, workers=8))
    v1 = verification_json_bytes(verify(("theory-exact",), seed=seed))
    v2 = verification_json_bytes(verify(("theory-exact",), seed=seed))
    return [
        _abs_check(ov, "determinism", "rerun-report-bytes", float(b1 != b2), 0.0, 0.0),
        _abs_check(ov, "determinism", "workers-1-vs-8-bytes", float(b1 != b8), 0.0, 0.0),
        _abs_check(ov, "determinism", "verify-rerun-bytes", float(v1 != v2), 0.0, 0.0),
    ]


CRITERIA = {
    "theory-exact": _c_theory_exact,
    "allocation-clt": _c_allocation_clt,
    "estimator-clt": _c_estimator_clt,
    "conditional-clt": _c_conditional_clt,
    "plugin-consistency": _c_plugin_consistency,
    "bb-closed-forms": _c_bb_closed_forms,
    "covariate-free-coincidence": _c_coincidence,
    "mle-lse-oracle": _c_mle_lse_oracle,
    "consistency-rate": _c_consistency_rate,
    "determinism": _c_determinism,
}

CRITERIA_ALIASES = {
    "all": tuple(CRITERIA),
    "f1": ("theory-exact", "allocation-clt", "estimator-clt",
           "plugin-consistency", "consistency-rate"),
    "smoke": ("theory-exact", "mle-lse-oracle", "covariate-free-coincidence"),
}


def _resolve_criteria(names) -> tuple[str, ...]:
    resolved: list[str] = []
    for name in names:
        expansion = CRITERIA_ALIASES.get(name, (name,))
        for item in expansion:
            if item not in CRITERIA:
                known = sorted(set(CRITERIA) | set(CRITERIA_ALIASES))
                raise ValueError(f"unknown criterion {item!r}; known names: {', '.join(known)}")
            if item not in resolved:
                resolved.append(item)
    if not resolved:
        raise ValueError("empty criteria set: nothing to verify")
    return tuple(resolved)


def verify(criteria=("all",), seed: int | None = None, workers: int = 1,
           overrides: dict | None = None, cache: dict | None = None) -> VerificationReport:
    """Run the named verification criteria and report per-check verdicts.

    ``criteria`` accepts criterion slugs or aliases ("all", "f1", "smoke").
    ``seed`` defaults to the documented verification seed.  ``cache`` may be
    supplied to share heavy Monte Carlo runs across calls.
    """
    names = _resolve_criteria(criteria)
    if seed is None:
        seed = fixtures.DEFAULT_SEED
    if cache is None:
        cache = {}
    ov = overrides or {}
    checks: list[CriterionCheck] = []
    for name in names:
        checks.extend(CRITERIA[name](seed, cache, workers, ov))
    return VerificationReport(master_seed=seed, criteria=names, checks=tuple(checks),
                              passed=all(c.passed for c in checks))


def verify_config(config: ExperimentConfig, workers: int | None = None) -> VerificationReport:
    """Run the verification criteria named in a parsed config document."""
    if not config.criteria:
        raise ValueError("config names an empty criteria set: nothing to verify")
    return verify(config.criteria, seed=config.seed,
                  workers=config.workers if workers is None else workers,
                  overrides=config.tolerance_overrides)
