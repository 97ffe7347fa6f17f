"""Command-line interface: estimate on observed data, simulate, verify.

Exit codes: 0 success, 1 failed verification checks, 2 schema or
configuration errors, 3 numeric errors (singular leverage, rank deficiency,
enumeration guards), each with a diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np
import yaml

from . import __version__
from .dataset import build_dataset
from .design import Assignment, CompleteDesign, SimpleDesign
from .estimators import LambdaRule, Method, ObservedSample
from .exceptions import (
    InvalidInput,
    InvalidSpec,
    LeverageSingular,
    LooraError,
    ParameterOutOfRange,
    RankDeficient,
    SchemaError,
    SpecMismatch,
    TooLarge,
)
from .inference import estimate_with_ci
from .oracle import Population
from .reporting import (
    RunManifest,
    config_hash,
    format_table,
    write_manifest,
    write_records,
)
from .simulation import DESIGN_CHOICES, StudyConfig, run_study, synth_population
from .verify import CORE_CHECKS, OPTIONAL_CHECKS, run_checks

CONFIG_SCHEMA_VERSION = 1

_SCHEMA_ERRORS = (SchemaError, InvalidSpec, InvalidInput, SpecMismatch)
_NUMERIC_ERRORS = (LeverageSingular, RankDeficient, TooLarge, ParameterOutOfRange)


def parse_lambda(text: str) -> LambdaRule:
    """Parse 'fixed:<value>' or 'auto:<c>' into a penalty rule."""
    kind, sep, value = text.partition(":")
    if not sep:
        raise SchemaError(f"lambda rule must look like fixed:<v> or auto:<c>, got {text!r}")
    try:
        number = float(value)
    except ValueError as exc:
        raise SchemaError(f"lambda rule value {value!r} is not a number") from exc
    if kind == "fixed":
        return LambdaRule.fixed(number)
    if kind == "auto":
        return LambdaRule.auto(number)
    raise SchemaError(f"lambda rule kind must be fixed or auto, got {kind!r}")


def _split_csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: config must be a mapping")
    version = data.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: schema_version must be {CONFIG_SCHEMA_VERSION}, got {version!r}"
        )
    return data


def _setting(args, config, key, default=None):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _default_threads(value):
    if value is not None:
        return int(value)
    env = os.environ.get("LOORA_THREADS")
    return int(env) if env else 1


def _emit(out_path, records, command, cfg_dict, seed, started):
    outputs = []
    if out_path:
        write_records(out_path, records)
        outputs.append(out_path)
        manifest = RunManifest(
            command=command,
            config_hash=config_hash(cfg_dict),
            seed=seed,
            version=__version__,
            wall_time_s=time.monotonic() - started,
            outputs=tuple(outputs),
        )
        outputs.append(write_manifest(out_path, manifest))
    return outputs


def cmd_estimate(args) -> int:
    started = time.monotonic()
    config = load_config(args.config) if args.config else {}
    delimiter = _setting(args, config, "delimiter", ",")
    dataset = build_dataset(
        args.data,
        covariates=_split_csv_list(_setting(args, config, "covariates", "")),
        categorical=_split_csv_list(_setting(args, config, "categorical", "")),
        y_col=_setting(args, config, "y-col"),
        d_col=_setting(args, config, "d-col"),
        p_col=_setting(args, config, "p-col"),
        delimiter=delimiter,
        has_header=not args.no_header,
        drop_first=bool(_setting(args, config, "drop-first", False)),
    )
    if dataset.mode != "observed":
        raise SchemaError("estimate needs an observed-mode dataset (y and d columns)")

    design = _setting(args, config, "design")
    if design == "simple":
        if dataset.p is not None:
            p = dataset.p
        else:
            p_value = _setting(args, config, "p")
            if p_value is None:
                raise SchemaError("simple design needs --p <value> or --p-col <column>")
            p = np.full(dataset.n, float(p_value))
        spec = SimpleDesign(p)
    elif design == "complete":
        n_t = _setting(args, config, "nt")
        if n_t is None:
            raise SchemaError("complete design needs --nt <count>")
        spec = CompleteDesign(dataset.n, int(n_t))
        if int(dataset.d.sum()) != spec.n_t:
            raise SchemaError(
                f"dataset treats {int(dataset.d.sum())} units but --nt is {spec.n_t}"
            )
    else:
        raise SchemaError(f"design must be simple or complete, got {design!r}")

    d = dataset.d
    z = 2.0 * d - 1.0
    q = spec.p * d + (1.0 - spec.p) * (1.0 - d) if isinstance(spec, SimpleDesign) else None
    sample = ObservedSample(dataset.x, dataset.y, Assignment(d=d, z=z, q=q), spec)

    method = Method(_setting(args, config, "method", "LOORA_HT"))
    rule = parse_lambda(_setting(args, config, "lambda", "auto:2"))
    level = float(_setting(args, config, "level", 0.95))
    if args.allow_design_mismatch and isinstance(spec, SimpleDesign):
        print(
            "warning: applying a fixed-count method under simple assignment; "
            "using the realized treated count",
            file=sys.stderr,
        )
    report = estimate_with_ci(
        method, sample, rule, level, allow_design_mismatch=args.allow_design_mismatch
    )

    print(
        format_table(
            ["Method", "Estimate", "Variance", "CI low", "CI high", "Level", "Lambda"],
            [
                [
                    report.method.value,
                    f"{report.tau_hat:.6g}",
                    f"{report.var_hat:.6g}",
                    f"{report.ci_low:.6g}",
                    f"{report.ci_high:.6g}",
                    f"{report.level:g}",
                    f"{report.lambda_used:.6g}",
                ]
            ],
        )
    )
    cfg_dict = {
        "command": "estimate",
        "data": str(args.data),
        "design": design,
        "method": report.method.value,
        "level": level,
        "lambda": _setting(args, config, "lambda", "auto:2"),
    }
    record = {
        "record_type": "estimate",
        "method": report.method.value,
        "n": dataset.n,
        "design": design,
        "tau_hat": report.tau_hat,
        "var_hat": report.var_hat,
        "ci_low": report.ci_low,
        "ci_high": report.ci_high,
        "level": report.level,
        "lambda_used": report.lambda_used,
    }
    _emit(args.out, [record], "estimate", cfg_dict, None, started)
    return 0


def cmd_simulate(args) -> int:
    started = time.monotonic()
    config = load_config(args.config) if args.config else {}

    if args.data:
        dataset = build_dataset(
            args.data,
            covariates=_split_csv_list(_setting(args, config, "covariates", "")),
            categorical=_split_csv_list(_setting(args, config, "categorical", "")),
            y1_col=_setting(args, config, "y1-col"),
            y0_col=_setting(args, config, "y0-col"),
            delimiter=_setting(args, config, "delimiter", ","),
            has_header=not args.no_header,
            drop_first=bool(_setting(args, config, "drop-first", False)),
        )
        if dataset.mode != "population":
            raise SchemaError("simulate needs a population-mode dataset (y1 and y0 columns)")
        pop = Population(dataset.x, dataset.y1, dataset.y0)
    else:
        kind = _setting(args, config, "synth")
        if kind is None:
            raise SchemaError("simulate needs --data <csv> or --synth <kind>")
        pop = synth_population(
            kind,
            int(_setting(args, config, "n", 100)),
            int(_setting(args, config, "k", 5)),
            int(_setting(args, config, "pop-seed", 0)),
        )

    reps_raw = _setting(args, config, "reps", 10000)
    reps = reps_raw if reps_raw == "enumerate" else int(reps_raw)
    methods = _setting(args, config, "methods", "LOORA_HT")
    if isinstance(methods, str):
        methods = _split_csv_list(methods)
    seed = int(_setting(args, config, "seed", 0))
    n_t = _setting(args, config, "nt")
    cfg = StudyConfig(
        design=_setting(args, config, "design", "simple-half"),
        methods=tuple(methods),
        reps=reps,
        level=float(_setting(args, config, "level", 0.95)),
        seed=seed,
        n_t=int(n_t) if n_t is not None else None,
        lambda_rule=parse_lambda(_setting(args, config, "lambda", "auto:2")),
        allow_design_mismatch=bool(args.allow_design_mismatch),
        threads=_default_threads(_setting(args, config, "threads")),
    )
    if cfg.allow_design_mismatch and cfg.design.startswith("simple"):
        print(
            "warning: fixed-count methods run under simple assignment; "
            "each replicate uses its realized treated count",
            file=sys.stderr,
        )
    report = run_study(pop, cfg)

    headers = ["Method", "Bias", "STD", "RMSE", "CI coverage", "CI average length"]
    rows = [
        [
            s.method,
            f"{s.bias:.6f}",
            f"{s.std:.6f}",
            f"{s.rmse:.6f}",
            f"{s.coverage:.4f}",
            f"{s.avg_ci_length:.4f}",
        ]
        for s in report.stats
    ]
    print(f"design: {report.design}   reps: {report.reps}   level: {report.level}")
    print(format_table(headers, rows))

    cfg_dict = {
        "command": "simulate",
        "design": cfg.design,
        "methods": list(cfg.methods),
        "reps": cfg.reps,
        "level": cfg.level,
        "seed": cfg.seed,
        "nt": cfg.n_t,
        "lambda": [cfg.lambda_rule.mode, cfg.lambda_rule.value],
        "allow_design_mismatch": cfg.allow_design_mismatch,
    }
    records = [
        {
            "record_type": "simulation",
            "design": report.design,
            "method": s.method,
            "bias": s.bias,
            "std": s.std,
            "rmse": s.rmse,
            "coverage": s.coverage,
            "avg_ci_length": s.avg_ci_length,
            "reps_used": s.reps_used,
            "failed": s.failed,
            "tau": report.tau,
            "level": report.level,
            "seed": report.seed,
        }
        for s in report.stats
    ]
    _emit(args.out, records, "simulate", cfg_dict, seed, started)
    return 0


def cmd_verify(args) -> int:
    names = args.check if args.check else list(CORE_CHECKS)
    results = run_checks(names, seed=args.seed, n=args.n, corrupt_q=args.corrupt_q)
    all_passed = True
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        all_passed &= result.passed
        print(
            f"{status} {result.name}: worst discrepancy {result.worst:.3e} "
            f"(tolerance {result.tolerance:.3e}; {result.detail})"
        )
    return 0 if all_passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loora",
        description="Design-based ATE estimation with leave-one-out ridge adjustment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate an ATE from an observed-mode CSV")
    est.add_argument("--data", required=True)
    est.add_argument("--config", help="YAML config file (flags override it)")
    est.add_argument("--delimiter")
    est.add_argument("--no-header", action="store_true")
    est.add_argument("--covariates", help="comma-separated numeric covariate columns")
    est.add_argument("--categorical", help="comma-separated categorical columns (one-hot)")
    est.add_argument("--y-col")
    est.add_argument("--d-col")
    est.add_argument("--p-col")
    est.add_argument("--drop-first", action="store_const", const=True, default=None)
    est.add_argument("--design", choices=["simple", "complete"])
    est.add_argument("--p", type=float, help="shared treatment probability (simple design)")
    est.add_argument("--nt", type=int, help="treated count (complete design)")
    est.add_argument("--method", choices=[m.value for m in Method])
    est.add_argument("--lambda", dest="lambda_", help="fixed:<v> or auto:<c>")
    est.add_argument("--level", type=float)
    est.add_argument("--out", help="machine-readable report path (JSON lines)")
    est.add_argument("--allow-design-mismatch", action="store_true")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="run a Monte Carlo study over a population")
    sim.add_argument("--data", help="population-mode CSV (y1 and y0 columns)")
    sim.add_argument("--config", help="YAML config file (flags override it)")
    sim.add_argument("--delimiter")
    sim.add_argument("--no-header", action="store_true")
    sim.add_argument("--covariates")
    sim.add_argument("--categorical")
    sim.add_argument("--y1-col")
    sim.add_argument("--y0-col")
    sim.add_argument("--drop-first", action="store_const", const=True, default=None)
    sim.add_argument("--synth", choices=["linear-heterogeneous", "leverage-stress", "binary-outcome"])
    sim.add_argument("--n", type=int)
    sim.add_argument("--k", type=int)
    sim.add_argument("--pop-seed", type=int)
    sim.add_argument("--design", choices=list(DESIGN_CHOICES))
    sim.add_argument("--nt", type=int)
    sim.add_argument("--methods", help="comma-separated method names")
    sim.add_argument("--reps", help="replicate count or 'enumerate'")
    sim.add_argument("--level", type=float)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--lambda", dest="lambda_", help="fixed:<v> or auto:<c>")
    sim.add_argument("--threads", type=int, help="worker threads (or LOORA_THREADS)")
    sim.add_argument("--out", help="machine-readable report path (JSON lines)")
    sim.add_argument("--allow-design-mismatch", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="run certification suites")
    ver.add_argument(
        "--check",
        action="append",
        choices=list(CORE_CHECKS) + list(OPTIONAL_CHECKS),
        help="run a single named check (repeatable); default runs the core suite",
    )
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--n", type=int, default=5000, help="sample size for lin-equivalence")
    ver.add_argument("--corrupt-q", action="store_true", help="negative-control hook")
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # argparse stores --lambda under lambda_; expose it under the lookup name.
    if hasattr(args, "lambda_"):
        setattr(args, "lambda", args.lambda_)
    try:
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        message = f"numeric error: {exc}"
        if isinstance(exc, RankDeficient) and getattr(args, "categorical", None):
            message += (
                " (one-hot expanded columns are exactly collinear at lambda = 0; "
                "consider --drop-first or a positive penalty)"
            )
        print(message, file=sys.stderr)
        return 3
    except _SCHEMA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LooraError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
