"""Monte Carlo benchmark and subsampling probability of study success."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.stats import norm

from .data import DataError, Dataset
from .eif import ContractError
from .estimator import ESTIMATORS, EstimatorOptions, ResampleError, estimate_all
from .nuisance.errors import FitError
from .simulation import ConfigError, SimulationConfig, simulate, true_theta

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("setting", "estimator", "n0", "bias", "se", "rmse", "coverage", "type1",
                  "power", "borrow_frac", "rel_ci_width")


class BenchmarkError(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchmarkConfig:
    """One benchmark study.

    ``n0_grid`` lists trial control-arm sizes; each cell simulates
    ``n_treated + n0`` trial subjects. ``threshold`` is the margin of the
    one-sided power test (the alternative is ``theta > threshold``).
    """

    base: SimulationConfig = field(default_factory=SimulationConfig)
    replications: int = 200
    estimators: tuple = ESTIMATORS
    n0_grid: tuple = (200,)
    n_boot: int = 50
    threshold: float = -0.3
    alpha: float = 0.05
    options: EstimatorOptions = field(default_factory=EstimatorOptions)
    threads: int = 1
    max_failure_rate: float = 0.05
    truth_draws: int = 1_000_000
    out_dir: str | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replication count must be at least 1")
        if not math.isfinite(self.threshold):
            raise ConfigError("power threshold must be finite")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad or not self.estimators:
            raise ConfigError(f"unknown estimators {sorted(bad)}")
        if any(n0 < 1 for n0 in self.n0_grid) or not self.n0_grid:
            raise ConfigError("n0 values must be positive")

    def cell_config(self, n0: int) -> SimulationConfig:
        return replace(self.base, n_trial=self.base.n_treated + int(n0))


@dataclass(frozen=True)
class Replicates:
    """Per-replication estimates for one ``(n0, estimator)`` cell."""

    theta: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    borrow_frac: np.ndarray


@dataclass
class MetricsTable:
    rows: list
    truth: dict
    replicates: dict
    failures: int = 0

    def row(self, estimator: str, n0: int) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and r["n0"] == n0:
                return r
        raise KeyError((estimator, n0))

    def write_csv(self, stream) -> None:
        w = csv.DictWriter(stream, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def replication_seed(master: int, *keys: int) -> int:
    """Counter-derived 63-bit seed for one task."""
    state = np.random.SeedSequence([int(master), *[int(k) for k in keys]]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@lru_cache(maxsize=64)
def _truth(config: SimulationConfig, n_mc: int) -> float:
    return true_theta(config, n_mc=n_mc)


def _one_replication(task):
    sim, options, kinds, n_boot, seed = task
    ds = simulate(replace(sim, seed=seed))
    try:
        reports = estimate_all(ds, replace(options, n_boot=n_boot, tau=sim.tau), seed, kinds)
    except (FitError, ContractError, DataError, ResampleError) as err:
        return None, f"{type(err).__name__}: {err}"
    return {k: (r.theta_hat, r.se, r.ci, r.n_borrowed / max(r.n_external, 1))
            for k, r in reports.items()}, None


def _map(fn, tasks, threads):
    if threads <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def run_benchmark(config: BenchmarkConfig) -> MetricsTable:
    """Simulate, estimate and aggregate every ``(n0, estimator)`` cell."""
    kinds = tuple(k for k in ESTIMATORS if k in config.estimators)
    z = float(norm.ppf(1 - config.alpha))
    n_boot = config.n_boot
    rows, truths, reps = [], {}, {}
    failures = 0
    for n0 in config.n0_grid:
        sim = config.cell_config(n0)
        truth = _truth(sim, config.truth_draws)
        truths[n0] = truth
        tasks = [(sim, config.options, kinds, n_boot,
                  replication_seed(config.base.seed, sim.setting, n0, rep))
                 for rep in range(config.replications)]
        results = _map(_one_replication, tasks, config.threads)
        ok = [res for res, err in results if res is not None]
        errs = [err for res, err in results if err is not None]
        for err in errs:
            log.warning("replication failed: %s", err)
        failures += len(errs)
        if len(errs) > config.max_failure_rate * len(results):
            raise BenchmarkError(f"{len(errs)} of {len(results)} replications failed in cell n0={n0}; "
                                 f"first error: {errs[0]}")
        cell = {}
        for k in kinds:
            theta = np.array([res[k][0] for res in ok])
            se = np.array([np.nan if res[k][1] is None else res[k][1] for res in ok])
            lo = np.array([np.nan if res[k][2] is None else res[k][2][0] for res in ok])
            hi = np.array([np.nan if res[k][2] is None else res[k][2][1] for res in ok])
            cell[k] = Replicates(theta, se, lo, hi, np.array([res[k][3] for res in ok]))
        reps[n0] = cell
        base_width = np.mean(cell["aipw"].upper - cell["aipw"].lower) if "aipw" in cell else np.nan
        for k in kinds:
            rows.append(_metrics(config.base.setting, k, n0, cell[k], truth, config.threshold, z, base_width))
    return MetricsTable(rows, truths, reps, failures)


def _metrics(setting, kind, n0, rep: Replicates, truth, threshold, z, base_width) -> dict:
    err = rep.theta - truth
    bias = float(np.mean(err))
    se = float(np.std(rep.theta))
    have_se = bool(np.all(np.isfinite(rep.se)))
    nan = float("nan")
    coverage = type1 = power = rel = nan
    if have_se:
        coverage = float(np.mean((rep.lower <= truth) & (truth <= rep.upper)))
        # one-sided Wald test of theta > threshold: a size check when the truth
        # violates the alternative, power otherwise (size then uses the
        # boundary null at the truth)
        at_margin = float(np.mean((rep.theta - threshold) / rep.se > z))
        if truth <= threshold:
            type1 = at_margin
        else:
            power = at_margin
            type1 = float(np.mean((rep.theta - truth) / rep.se > z))
        rel = float(np.mean(rep.upper - rep.lower) / base_width) if base_width > 0 else nan
    return {
        "setting": setting, "estimator": kind, "n0": int(n0), "bias": bias, "se": se,
        "rmse": float(math.sqrt(bias**2 + se**2)), "coverage": coverage, "type1": type1,
        "power": power, "borrow_frac": float(np.mean(rep.borrow_frac)), "rel_ci_width": rel,
    }


# ---------------------------------------------------------------------------
# probability of study success


@dataclass
class PrssTable:
    """Detection rates keyed by ``(estimator, size, tau, threshold)``."""

    rates: dict
    sizes: tuple
    taus: tuple
    thresholds: tuple
    estimators: tuple

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "n0", "tau", "threshold", "prss"])
        for (k, n0, tau, thr), v in sorted(self.rates.items()):
            w.writerow([k, n0, repr(tau), repr(thr), repr(v)])
        return buf.getvalue()


def _prss_task(task):
    ds, options, kinds, n_boot, seed, tau = task
    reports = estimate_all(ds, replace(options, tau=tau, n_boot=n_boot), seed, kinds)
    return {k: r.ci[1] for k, r in reports.items()}


def run_prss(ds: Dataset, sizes, repeats: int, thresholds, taus, seed: int = 0,
             n_boot: int = 50, options: EstimatorOptions = EstimatorOptions(),
             estimators=("aipw", "adapt"), threads: int = 1) -> PrssTable:
    """Subsample the trial control arm and record how often each estimator detects an effect.

    An analysis detects ``theta < threshold`` when the upper end of its
    Wald interval lies below ``threshold``.
    """
    controls = ds.cell(1, 0)
    sizes = tuple(int(s) for s in sizes)
    if any(s > len(controls) or s < 1 for s in sizes):
        raise ConfigError(f"subsample sizes must lie in [1, {len(controls)}] (trial control arm size)")
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    if n_boot < 2:
        raise ConfigError("PrSS needs a bootstrap of at least 2 resamples")
    if not np.any(ds.r == 0) or not np.any(ds.cell(1, 1)):
        raise ConfigError("PrSS needs treated, control and external subjects")
    taus, thresholds = tuple(float(t) for t in taus), tuple(float(t) for t in thresholds)
    keep_other = np.flatnonzero(~((ds.r == 1) & (ds.a == 0)))
    tasks, keys = [], []
    for size in sizes:
        for rep in range(repeats):
            rng = np.random.default_rng([seed, size, rep])
            pick = np.sort(np.concatenate([keep_other, rng.choice(controls, size, replace=False)]))
            sub = ds.subset(pick)
            for tau in taus:
                tasks.append((sub, options, tuple(estimators), n_boot,
                              replication_seed(seed, size, rep), tau))
                keys.append((size, tau))
    upper = _map(_prss_task, tasks, threads)
    rates = {}
    for k in estimators:
        for size in sizes:
            for tau in taus:
                ups = np.array([u[k] for u, key in zip(upper, keys) if key == (size, tau)])
                for thr in thresholds:
                    rates[(k, size, tau, thr)] = float(np.mean(ups < thr))
    return PrssTable(rates, sizes, taus, thresholds, tuple(estimators))
