"""Command-line entry point.

Exit status: 0 success, 1 a verification found violations, 2 usage or
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .. import __version__
from ..caliblab import (
    LemmaBound,
    example31_sweep,
    theorem31_rhs,
    theorem41_rhs,
    transfer_bound,
    verify_lemma_level_set,
    verify_theorem31,
    verify_theorem_strong,
    ViolationReport,
)
from ..losses import LOSS_NAMES, loss_from_name
from ..predictors import ModelKind, TrainConfig, from_text, init_predictor, predict, to_text, train
from ..regions import FeasibleRegion, NonDifferentiableError, OracleError, RegionError, geometry_constants
from ..synthdata import (
    CLASSIFICATION_DIM,
    GenParams,
    conditional_mean,
    gen_classification,
    gen_portfolio,
    gen_weight_matrix,
    gen_weight_vector,
    load_dataset,
    save_dataset,
)
from .config import ConfigError, ExperimentConfig, default_config, load_config
from .experiments import plot_records, run_experiment, write_outputs
from .metrics import MetricsRecord, excess_spo_risk_known_mean, mean_spo_loss, normalized_spo_loss, write_records

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
NUMERIC_ERRORS = (OracleError, ArithmeticError, FloatingPointError, NonDifferentiableError)

log = logging.getLogger("spoplus")

REGION_ALIASES = {"entropy": "entropy_simplex", "log_barrier": "log_barrier_simplex", "barrier": "log_barrier_simplex",
                  "simplex": "unit_simplex", "l1": "l1_ball"}


class UsageError(Exception):
    pass


# options that may come from either the command line or --config
REQUIRED = {"gen-data": ("out",), "train": ("data", "out"), "eval": ("model", "data", "out"),
            "transfer": ("excess",)}


# manifests --------------------------------------------------------------------------

def file_digest(path) -> dict:
    data = Path(path).read_bytes()
    blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
    return {"sha256": hashlib.sha256(data).hexdigest(), "git_blob": blob, "bytes": len(data)}


def write_manifest(out: Path, argv: Sequence[str], config: dict, outputs: Sequence[Path]) -> Path:
    manifest = {
        "tool": "spoplus",
        "version": __version__,
        "argv": list(argv),
        "config": config,
        "outputs": {str(p): file_digest(p) for p in outputs},
    }
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


# region flags -----------------------------------------------------------------------

def _add_region_flags(p, kind=None, dim=None, level_r=None):
    p.add_argument("--region", default=kind, help="unit_simplex | l1_ball | entropy_simplex | log_barrier_simplex")
    p.add_argument("--dim", type=int, default=dim)
    p.add_argument("--level-r", type=float, default=level_r, help="level-set threshold r")
    p.add_argument("--radius", type=float, default=1.0, help="l1-ball radius")


def _region_from_args(args) -> FeasibleRegion:
    if args.region is None or args.dim is None:
        raise UsageError("--region and --dim are required")
    kind = REGION_ALIASES.get(args.region, args.region)
    block = {"kind": kind, "dim": args.dim}
    if kind == "l1_ball":
        block["radius"] = args.radius
    if kind in ("entropy_simplex", "log_barrier_simplex"):
        if args.level_r is None and kind == "entropy_simplex":
            raise UsageError("entropy_simplex needs --level-r")
        block["level_r"] = args.level_r
    try:
        return FeasibleRegion.from_config(block)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=200)


# subcommands --------------------------------------------------------------------------

def cmd_gen_data(args, argv):
    d = CLASSIFICATION_DIM if args.problem == "classification" else args.d
    params = GenParams(n=args.n, d=d, p=args.p, deg=args.deg, noise_halfwidth=args.noise, seed=args.seed)
    if args.problem == "portfolio":
        ds = gen_portfolio(params, gen_weight_matrix(d, args.p, args.weights_seed))
    else:
        ds = gen_classification(params, gen_weight_vector(args.p, args.weights_seed))
    out = save_dataset(ds, args.out)
    write_manifest(out, argv, vars_clean(args), [out, Path(str(out) + ".meta")])
    print(f"wrote {ds.n} rows to {out}")
    return EXIT_OK


def _default_region_for(ds, args) -> FeasibleRegion:
    if args.region is not None:
        if args.dim is None:
            args.dim = ds.costs.shape[1]
        return _region_from_args(args)
    if ds.meta.get("kind") == "classification":
        return FeasibleRegion.unit_simplex(ds.costs.shape[1])
    raise UsageError("portfolio data needs --region (for example --region entropy --level-r -3.9)")


def cmd_train(args, argv):
    ds = load_dataset(args.data)
    region = _default_region_for(ds, args)
    loss = loss_from_name(args.loss, region)
    bias = ds.costs.mean(axis=0) if args.loss == "spo" else None
    model = init_predictor(args.model, ds.features.shape[1], ds.costs.shape[1], seed=args.seed, bias=bias)
    result = train(model, ds.features, ds.costs, loss, _train_config(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_text(result.model))
    trace = Path(str(out) + ".trace.csv")
    trace.write_text("epoch,mean_loss\n" + "".join(f"{i + 1},{v:.17g}\n" for i, v in enumerate(result.trace)))
    write_manifest(out, argv, vars_clean(args), [out, trace])
    print(f"trained {args.model} with {args.loss}: final epoch loss {result.trace[-1]:.6g}")
    return EXIT_OK


def cmd_eval(args, argv):
    ds = load_dataset(args.data)
    model = from_text(Path(args.model).read_text())
    region = _default_region_for(ds, args)
    pred = predict(model, ds.features)
    values = {"spo": mean_spo_loss(region, pred, ds.costs),
              "normalized_spo": normalized_spo_loss(region, pred, ds.costs)}
    if "weights" in ds.meta:
        values["excess_risk"] = excess_spo_risk_known_mean(region, pred, conditional_mean(ds))
    key = (0, int(ds.meta.get("seed", 0)), region.kind.value, "model", ds.n,
           int(ds.meta.get("deg", 0)), float(ds.meta.get("noise_halfwidth", 0.0)))
    rows = [MetricsRecord(*key, name, v) for name, v in values.items() if v is not None]
    out = write_records(args.out, rows)
    write_manifest(out, argv, vars_clean(args), [out])
    for r in rows:
        print(f"{r.metric_name} = {r.value:.6g}")
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else default_config(args.problem)
    if config.problem != args.problem:
        raise ConfigError(f"config is for {config.problem!r}, command asked for {args.problem!r}")
    changes = {}
    for flag, key in (("deg", "degs"), ("noise", "noises"), ("n_train", "n_train"), ("losses", "losses")):
        if getattr(args, flag) is not None:
            changes[key] = tuple(getattr(args, flag))
    for flag, key in (("trials", "trials"), ("n_test", "n_test"), ("seed", "master_seed"),
                      ("workers", "workers"), ("out", "output")):
        if getattr(args, flag) is not None:
            changes[key] = getattr(args, flag)
    if args.model is not None:
        changes["model"] = ModelKind(args.model)
    if args.epochs is not None:
        changes["train"] = TrainConfig(**{**config.train.__dict__, "epochs": args.epochs})
    if args.level_r is not None:
        region = config.region
        changes["region"] = FeasibleRegion.from_config({**region.to_config(), "level_r": args.level_r})
    try:
        return config.replace(**changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_experiment(args, argv):
    config = _experiment_config(args)
    result = run_experiment(config)
    out, timings = write_outputs(result, config.output)
    outputs = [out, timings]
    if args.plot:
        outputs.append(plot_records(result.records, config.problem, args.plot))
    write_manifest(out, argv, config.to_dict(), outputs)
    print(f"{config.problem}: {len(result.records)} records from {config.trials} trials -> {out}")
    for failure in result.failures:
        print(failure, file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_NUMERIC


def _finish_report(report: ViolationReport, label: str, out, argv, args) -> int:
    outputs = []
    if out:
        outputs.append(report.to_csv(out))
        write_manifest(Path(out), argv, vars_clean(args), outputs)
    print(report.summary(label))
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_verify_lemmas(args, argv):
    region = _region_from_args(args)
    bounds = list(LemmaBound) if args.bound == "all" else [LemmaBound(args.bound)]
    reports = []
    for i, b in enumerate(bounds):
        rep = verify_lemma_level_set(region, b, args.pairs, args.seed + i, mu_scale=args.mu_scale,
                                     keep_rows=bool(args.out))
        for row in rep.rows:
            row["bound"] = b.value
        print(rep.summary(b.value))
        reports.append(rep)
    return _finish_report(ViolationReport.merge(reports), "all bounds", args.out, argv, args)


def cmd_verify_theorem31(args, argv):
    region = _region_from_args(args)
    rep = verify_theorem31(region, args.eps, args.trials, args.mc_samples, args.seed)
    return _finish_report(rep, "polyhedral calibration bound", args.out, argv, args)


def cmd_verify_theorem41(args, argv):
    region = _region_from_args(args)
    rep = verify_theorem_strong(region, args.sigma_over_mean, args.eps, args.trials, args.mc_samples, args.seed)
    return _finish_report(rep, "level-set calibration bound", args.out, argv, args)


def check_example31(rows, epsilon: float) -> list[str]:
    """Problems with a sweep: flat excess SPO, non-increasing SPO+ (within 3 stderr), small tail."""
    problems = []
    rows = sorted(rows, key=lambda r: -r.sigma)
    for r in rows:
        if not math.isclose(r.excess_spo, epsilon, rel_tol=1e-12, abs_tol=1e-15):
            problems.append(f"excess SPO {r.excess_spo!r} != {epsilon!r} at sigma {r.sigma:g}")
    for a, b in zip(rows, rows[1:]):
        if b.excess_spoplus > a.excess_spoplus + 3.0 * math.hypot(a.stderr, b.stderr):
            problems.append(f"excess SPO+ rises from sigma {a.sigma:g} to {b.sigma:g}")
    if rows and not rows[-1].excess_spoplus < 0.1 * epsilon:
        problems.append(f"smallest-sigma excess SPO+ {rows[-1].excess_spoplus:.3e} is not below {0.1 * epsilon:g}")
    return problems


def cmd_example31(args, argv):
    sigmas = args.sigmas or [args.epsilon * f for f in (1.0, 1e-1, 1e-2, 1e-3)]
    rows = example31_sweep(args.epsilon, sigmas, args.samples, args.seed)
    out = Path(args.out) if args.out else None
    if out:
        with out.open("w") as fh:
            fh.write("sigma,excess_spoplus,stderr,excess_spo\n")
            for r in rows:
                fh.write(f"{r.sigma:.17g},{r.excess_spoplus:.17g},{r.stderr:.17g},{r.excess_spo:.17g}\n")
        write_manifest(out, argv, vars_clean(args), [out])
    for r in rows:
        print(f"sigma {r.sigma:.3g}: excess SPO+ {r.excess_spoplus:.4e} +- {r.stderr:.1e}, excess SPO {r.excess_spo:.6g}")
    problems = check_example31(rows, args.epsilon)
    for p in problems:
        print("FAIL", p)
    if not problems:
        print("PASS sweep")
    return EXIT_VIOLATION if problems else EXIT_OK


def cmd_transfer(args, argv):
    region = _region_from_args(args)
    geo = geometry_constants(region)
    bound = transfer_bound(args.excess, geo, args.alpha, args.beta, args.M)
    if geo.mu is not None:
        mu, L, _ = geo.require_level()
        slope = theorem41_rhs(args.alpha, args.beta, mu, L, 1.0)
        detail = f"linear calibration slope {slope:.6g}"
    else:
        detail = f"calibration at eps=1: {theorem31_rhs(args.alpha, args.beta, args.M, geo, 1.0):.6g}"
    print(f"excess SPO+ {args.excess:g} -> excess SPO <= {bound:.6g} ({detail})")
    if args.out:
        out = Path(args.out)
        out.write_text(f"excess_surrogate,bound\n{args.excess:.17g},{bound:.17g}\n")
        write_manifest(out, argv, vars_clean(args), [out])
    return EXIT_OK


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",)}


# parser --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spoplus", description="SPO+ training and calibration toolkit")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", help="YAML file of option values")
    p.add_argument("--problem", choices=("portfolio", "classification"), default="portfolio")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=50)
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--deg", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights-seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a predictor on a dataset CSV")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--loss", choices=LOSS_NAMES, default="spo_plus")
    p.add_argument("--model", choices=[m.value for m in ModelKind], default="affine")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    _add_region_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved predictor")
    p.add_argument("--config")
    p.add_argument("--model")
    p.add_argument("--data")
    _add_region_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a multi-trial experiment")
    p.add_argument("problem", choices=("portfolio", "classification", "convergence"))
    p.add_argument("--config", help="experiment YAML (see configs/)")
    p.add_argument("--deg", type=int, nargs="+")
    p.add_argument("--noise", type=float, nargs="+")
    p.add_argument("--n-train", type=int, nargs="+")
    p.add_argument("--losses", nargs="+", choices=LOSS_NAMES)
    p.add_argument("--model", choices=[m.value for m in ModelKind])
    p.add_argument("--trials", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--level-r", type=float)
    p.add_argument("--out")
    p.add_argument("--plot", help="also write an SVG summary here")
    p.set_defaults(func=cmd_experiment)

    cal = sub.add_parser("calibrate", help="numerical checks of the calibration theory")
    csub = cal.add_subparsers(dest="check", required=True)

    p = csub.add_parser("verify-lemmas", help="level-set optimality and Lipschitz inequalities")
    p.add_argument("--config")
    _add_region_flags(p, "entropy_simplex", 3, -1.05)
    p.add_argument("--pairs", type=int, default=10000)
    p.add_argument("--bound", choices=["all"] + [b.value for b in LemmaBound], default="all")
    p.add_argument("--mu-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_lemmas)

    for name, func, kind, dim, r in (("verify-theorem31", cmd_verify_theorem31, "l1_ball", 2, None),
                                     ("verify-theorem41", cmd_verify_theorem41, "entropy_simplex", 3, -1.05)):
        p = csub.add_parser(name, help="randomized search against a calibration lower bound")
        p.add_argument("--config")
        _add_region_flags(p, kind, dim, r)
        p.add_argument("--eps", type=float, nargs="+", default=[0.01, 0.02, 0.05])
        p.add_argument("--trials", type=int, default=200)
        p.add_argument("--mc-samples", type=int, default=2000)
        p.add_argument("--seed", type=int, default=0)
        if func is cmd_verify_theorem41:
            p.add_argument("--sigma-over-mean", type=float, default=0.5)
        p.add_argument("--out")
        p.set_defaults(func=func)

    p = csub.add_parser("example31", help="mixture counterexample on the 2-d l1 ball")
    p.add_argument("--config")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--sigmas", type=float, nargs="+")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_example31)

    p = csub.add_parser("transfer", help="excess SPO bound implied by an excess SPO+ risk")
    p.add_argument("--config")
    _add_region_flags(p, "l1_ball", 2, None)
    p.add_argument("--excess", type=float)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_transfer)
    return parser


def _subparser_for(parser, argv):
    """The innermost subparser selected by argv (for applying config-file defaults)."""
    node = parser
    for tok in argv:
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions or tok not in actions[0].choices:
            continue
        node = actions[0].choices[tok]
    return node


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "experiment" and getattr(args, "config", None):
        try:
            values = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("option config must be a mapping")
        node = _subparser_for(parser, argv)
        dests = {a.dest for a in node._actions}
        unknown = set(k.replace("-", "_") for k in values) - dests
        if unknown:
            raise ConfigError(f"unknown options in config: {sorted(unknown)}")
        node.set_defaults(**{k.replace("-", "_"): v for k, v in values.items()})
        args = parser.parse_args(argv)
    missing = [f"--{name.replace('_', '-')}" for name in REQUIRED.get(args.command if args.command != "calibrate"
                                                                     else args.check, ())
               if getattr(args, name, None) is None]
    if missing:
        raise ConfigError(f"missing required option(s): {' '.join(missing)}")
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    except ConfigError as exc:
        print(f"spoplus: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore", under="ignore"):
            return args.func(args, argv)
    except NUMERIC_ERRORS as exc:
        print(f"spoplus: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, RegionError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"spoplus: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
