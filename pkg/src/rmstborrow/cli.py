"""Command-line driver: ``simulate``, ``estimate``, ``benchmark`` and ``prss``.

Every subcommand reads from ``--input`` (``-`` for stdin) where it needs data
and writes to ``--out`` (``-`` for stdout), so runs compose with pipes::

    rmstborrow simulate --setting 1 --seed 3 | rmstborrow estimate --kind adapt
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from dataclasses import replace

from .benchmark import BenchmarkConfig, BenchmarkError, run_benchmark, run_prss
from .data import DataError, load_dataset, write_dataset
from .eif import ContractError
from .estimator import ESTIMATORS, EstimatorOptions, ResampleError, estimate, run_pipeline, write_influence
from .nuisance.errors import FitError
from .nuisance.fit import NuisanceOptions
from .selector import KINDS as PENALTIES
from .simulation import SETTINGS, ConfigError, SimulationConfig, parse_config, simulate

FULL_REPLICATIONS = 500


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _common(p: argparse.ArgumentParser, tau: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    if tau:
        p.add_argument("--tau", type=float, default=2.0, help="RMST horizon (default 2)")
    p.add_argument("--out", default="-", help="output path, '-' for stdout")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file with simulation settings; flags override it")
    p.add_argument("--setting", type=int, choices=sorted(SETTINGS))
    p.add_argument("--n-trial", type=int)
    p.add_argument("--n-external", type=int)
    p.add_argument("--n-treated", type=int)
    p.add_argument("--p", type=int, help="number of covariates")
    p.add_argument("--beta-c", type=float, help="censoring intensity coefficient")
    p.add_argument("--log-hr", type=float, help="treatment log hazard ratio")


def _estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--folds", type=int, default=2)
    p.add_argument("--mode", choices=("swap", "single"), default="swap",
                   help="cross-fitting: swap folds or evaluate one split")
    p.add_argument("--penalty", choices=PENALTIES, default="adaptive_lasso")
    p.add_argument("--weight-power", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, help="fix the penalty level instead of BIC")
    p.add_argument("--n-boot", type=int, default=50, help="bootstrap resamples, 0 to skip")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--refit-lambda", action="store_true", help="re-tune lambda on every resample")
    p.add_argument("--propensity", choices=("logistic", "intercept"), default="logistic")
    p.add_argument("--no-outcome-covariates", action="store_true",
                   help="fit covariate-free survival curves")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmstborrow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw one dataset and write it as CSV")
    _common(p)
    _sim_flags(p)

    p = sub.add_parser("estimate", help="estimate the RMST difference from a dataset CSV")
    _common(p)
    p.add_argument("--input", default="-", help="dataset CSV, '-' for stdin")
    p.add_argument("--kind", choices=ESTIMATORS, default="adapt")
    p.add_argument("--influence", help="also write per-subject influence values to this CSV")
    p.add_argument("--selection-report", help="also write the selector's per-external report (adapt)")
    _estimator_flags(p)

    p = sub.add_parser("benchmark", help="Monte Carlo study; writes the metrics CSV")
    _common(p)
    _sim_flags(p)
    _estimator_flags(p)
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--full", action="store_true", help=f"use {FULL_REPLICATIONS} replications")
    p.add_argument("--n0", type=_ints, default=(200,), help="comma-separated trial control sizes")
    p.add_argument("--estimators", default=",".join(ESTIMATORS))
    p.add_argument("--threshold", type=float, default=-0.3, help="power margin: alternative theta > margin")
    p.add_argument("--alpha", type=float, default=0.05, help="one-sided test level")

    p = sub.add_parser("prss", help="probability of study success under control-arm subsampling")
    _common(p, tau=False)
    _estimator_flags(p)
    p.add_argument("--input", default="-", help="dataset CSV, '-' for stdin")
    p.add_argument("--sizes", type=_ints, required=True, help="comma-separated control subsample sizes")
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--thresholds", type=_floats, default=(0.0,))
    p.add_argument("--taus", type=_floats, default=(2.0,))
    return parser


@contextlib.contextmanager
def _open_out(path: str):
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _read_input(path: str):
    if path == "-":
        return load_dataset(sys.stdin)
    return load_dataset(path)


def _sim_config(args) -> SimulationConfig:
    base = SimulationConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = parse_config(fh.read())
    over = {"seed": args.seed, "tau": args.tau}
    for key in ("setting", "n_trial", "n_external", "n_treated", "p", "beta_c", "log_hr"):
        val = getattr(args, key)
        if val is not None:
            over[key] = val
    return replace(base, **over)


def _options(args, tau: float) -> EstimatorOptions:
    nuis = NuisanceOptions(outcome_covariates=not args.no_outcome_covariates, propensity=args.propensity)
    return EstimatorOptions(tau=tau, n_folds=args.folds, mode=args.mode, penalty=args.penalty,
                            weight_power=args.weight_power, lam=args.lam, nuisance=nuis,
                            n_boot=args.n_boot, level=args.level, refit_lambda=args.refit_lambda)


def _cmd_simulate(args) -> None:
    ds = simulate(_sim_config(args))
    with _open_out(args.out) as out:
        write_dataset(ds, out)


def _cmd_estimate(args) -> None:
    ds = _read_input(args.input)
    options = _options(args, args.tau)
    report = estimate(ds, args.kind, options, args.seed)
    if args.influence or args.selection_report:
        source = ds.trial_only() if args.kind == "aipw" else ds
        res = run_pipeline(source, options, args.seed, (args.kind,), options.lam)
        if args.influence:
            with open(args.influence, "w", encoding="utf-8", newline="") as fh:
                write_influence(res, args.kind, fh)
        if args.selection_report and res.selection is not None:
            with open(args.selection_report, "w", encoding="utf-8", newline="") as fh:
                res.selection.write_report(fh)
    with _open_out(args.out) as out:
        out.write(report.to_json() + "\n")


def _cmd_benchmark(args) -> None:
    kinds = tuple(k.strip() for k in args.estimators.split(",") if k.strip())
    sim = _sim_config(args)
    config = BenchmarkConfig(
        base=sim, replications=FULL_REPLICATIONS if args.full else args.replications,
        estimators=kinds, n0_grid=args.n0, n_boot=args.n_boot, threshold=args.threshold,
        alpha=args.alpha, options=_options(args, sim.tau), threads=args.threads)
    table = run_benchmark(config)
    with _open_out(args.out) as out:
        table.write_csv(out)


def _cmd_prss(args) -> None:
    ds = _read_input(args.input)
    table = run_prss(ds, args.sizes, args.repeats, args.thresholds, args.taus, args.seed,
                     args.n_boot, _options(args, max(args.taus)), threads=args.threads)
    with _open_out(args.out) as out:
        out.write(table.to_csv())


COMMANDS = {"simulate": _cmd_simulate, "estimate": _cmd_estimate,
            "benchmark": _cmd_benchmark, "prss": _cmd_prss}
RUNTIME_ERRORS = (DataError, ConfigError, ContractError, FitError, ResampleError,
                  BenchmarkError, ValueError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except RUNTIME_ERRORS as err:
        print(f"rmstborrow {args.command}: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
