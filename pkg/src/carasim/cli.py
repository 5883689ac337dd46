"""Command-line interface.

Subcommands
-----------
simulate   run one adaptive trial and emit its per-patient CSV
theory     print the asymptotic theory report for a configuration
replicate  run Monte Carlo replications and store summary outputs
verify     run verification criteria; exits nonzero if any check fails
report     re-render stored replication results as text

All commands read the same JSON configuration document (``--config``); the
``--seed`` and ``--workers`` flags override the values stored in it.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .asymptotics import TheoryOptions, theory_report
from .engine import replicate_root, run_trial
from .harness import (
    ConfigError,
    emit_reports,
    parse_config,
    report_json_bytes,
    run_replications,
    verification_json_bytes,
    verify,
    verify_config,
)


def _load_config(args, need_config: bool = True):
    if args.config is None:
        if need_config:
            raise ConfigError("a configuration file is required (--config <path>)")
        return None
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_config(args)
    hist = run_trial(cfg.model, cfg.rule, cfg.n, cfg.m0,
                     replicate_root(cfg.seed, 0), cfg.engine_options())
    if args.out is None:
        sys.stdout.write(hist.to_patient_csv())
        return 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hist.to_patient_csv(out / "patients.csv")
    hist.to_json(out / "trial.json")
    counts = ", ".join(f"N_{k + 1}={c}" for k, c in enumerate(hist.counts()))
    print(f"simulated n={cfg.n} patients (seed {cfg.seed}): {counts}")
    print(f"wrote {out / 'patients.csv'} and {out / 'trial.json'}")
    return 0


def _cmd_theory(args) -> int:
    cfg = _load_config(args)
    rep = theory_report(cfg.model, cfg.rule, cfg.x_list,
                        TheoryOptions(dispersion=cfg.dispersion))
    from .harness import _theory_payload  # same serialisation as report.json

    text = json.dumps(_theory_payload(rep), indent=2, sort_keys=True) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "theory.json").write_text(text)
        print(f"wrote {out / 'theory.json'}")
    return 0


def _cmd_replicate(args) -> int:
    cfg = _load_config(args)
    summary = run_replications(cfg)
    if args.out is not None:
        paths = emit_reports(summary, args.out)
        print(f"wrote {paths['report']} and {paths['replicates']}")
    _print_summary(summary_dict(summary))
    return 0


def summary_dict(summary) -> dict:
    return json.loads(report_json_bytes(summary).decode())


def _fmt_matrix(m: dict) -> str:
    a = np.asarray(m["data"], dtype=float).reshape(m["shape"])
    return np.array2string(a, precision=5, suppress_small=False)


def _print_summary(payload: dict) -> None:
    emp, theory = payload["empirical"], payload["theory"]
    print(f"replicates: {payload['replicates']} (failures: {len(payload['failures'])}), "
          f"n = {payload['n']}, master seed = {payload['master_seed']}")
    print(f"target allocation v: {_fmt_matrix(theory['v'])}")
    print(f"allocation deviation mean: {_fmt_matrix(emp['alloc_dev_mean'])}")
    print(f"allocation variance / Sigma diagonal: {_fmt_matrix(emp['var_ratio_alloc'])}")
    print(f"estimator variance / V diagonal:\n{_fmt_matrix(emp['var_ratio_theta'])}")
    for cond in emp["conditional"]:
        x = _fmt_matrix(cond["x"])
        print(f"conditional at x = {x}: mass in {cond['replicates_with_mass']} replicates, "
              f"deviation mean {_fmt_matrix(cond['dev_mean'])}")
    if payload.get("plugins"):
        p = payload["plugins"]
        print(f"plug-in median relative deviation: Sigma {p['rel_dev_sigma_median']:.4g}, "
              f"V {_fmt_matrix(p['rel_dev_V_median'])}")


def _cmd_verify(args) -> int:
    if args.config is not None:
        cfg = _load_config(args)
        if args.criteria:
            report = verify(tuple(args.criteria), seed=cfg.seed, workers=cfg.workers,
                            overrides=cfg.tolerance_overrides)
        else:
            report = verify_config(cfg)
    else:
        criteria = tuple(args.criteria) if args.criteria else ("all",)
        report = verify(criteria, seed=args.seed,
                        workers=args.workers if args.workers is not None else 1)
    for check in report.checks:
        print(check.line())
    n_pass = sum(c.passed for c in report.checks)
    print(f"{'PASS' if report.passed else 'FAIL'}: {n_pass}/{len(report.checks)} checks passed")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verification.json").write_bytes(verification_json_bytes(report))
        print(f"wrote {out / 'verification.json'}")
    return 0 if report.passed else 1


def _cmd_report(args) -> int:
    if args.out is None:
        raise ConfigError("report needs the directory that holds report.json (--out <dir>)")
    path = Path(args.out) / "report.json"
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read stored results at {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"stored results at {path} are not valid JSON: {exc}") from exc
    _print_summary(payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carasim",
        description="Simulate and verify covariate-adjusted response-adaptive designs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None,
                       help="path to a JSON experiment configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides the configuration)")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (overrides the configuration)")
        p.add_argument("--out", type=str, default=None,
                       help="output directory")
        p.add_argument("--criteria", action="append", default=None, metavar="NAME",
                       help="verification criterion or alias; repeatable")
        p.set_defaults(fn=fn)
        return p

    add("simulate", _cmd_simulate, "run one adaptive trial")
    add("theory", _cmd_theory, "print the asymptotic theory report")
    add("replicate", _cmd_replicate, "run Monte Carlo replications")
    add("verify", _cmd_verify, "run verification criteria")
    add("report", _cmd_report, "re-render stored replication results")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
