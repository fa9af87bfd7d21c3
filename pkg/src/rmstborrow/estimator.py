"""Trial-only, full-borrowing and selective-borrowing RMST estimators.

All three share one cross-fitted pipeline: split the subjects into folds
within each ``(r, a)`` cell, fit nuisances on the complement of each fold,
evaluate influence functions on the held-out fold, and average. The
selective estimator additionally computes pseudo-outcomes for the held-out
externals, thresholds them, and borrows only the comparable ones.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .data import DataError, Dataset, TimeGrid
from .eif import EPS, ContractError, evaluate_fold
from .nuisance.errors import FitError, FoldError
from .nuisance.fit import NuisanceOptions, fit_nuisances
from .selector import KINDS as PENALTIES
from .selector import ConstantProbability, fit_selection_model, refine_biases, select_lambda

ESTIMATORS = ("aipw", "acw", "adapt")
CELLS = ((1, 1), (1, 0), (0, 0))
MAX_RETRIES = 10


class ResampleError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimatorOptions:
    """Pipeline settings shared by all estimators.

    ``force_selection`` is ``"all"`` or ``"none"`` to bypass the selector
    (borrow every external, or none, with selection probability 1 or 0).
    ``lam`` fixes the penalty level; otherwise it is chosen by BIC over
    ``lambda_grid`` (default grid when ``None``).
    """

    tau: float = 2.0
    n_folds: int = 2
    mode: str = "swap"
    penalty: str = "adaptive_lasso"
    weight_power: float = 1.0
    scad_a: float = 3.7
    mcp_gamma: float = 3.0
    lam: float | None = None
    lambda_grid: tuple | None = None
    force_selection: str | None = None
    nuisance: NuisanceOptions = field(default_factory=NuisanceOptions)
    eps: float = EPS
    n_boot: int = 50
    level: float = 0.95
    refit_lambda: bool = False

    def __post_init__(self):
        if self.mode not in ("swap", "single"):
            raise ValueError(f"unknown cross-fitting mode {self.mode!r}")
        if self.n_folds < 2:
            raise ValueError("cross-fitting needs at least 2 folds")
        if self.penalty not in PENALTIES:
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if self.force_selection not in (None, "all", "none"):
            raise ValueError(f"force_selection must be 'all', 'none' or None, got {self.force_selection!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0 < self.level < 1:
            raise ValueError("confidence level must lie in (0, 1)")


@dataclass(frozen=True)
class FoldPlan:
    folds: np.ndarray
    n_folds: int
    mode: str

    @property
    def evaluated(self) -> list[int]:
        """Fold labels whose subjects enter the estimate."""
        return list(range(self.n_folds)) if self.mode == "swap" else [0]


def make_fold_plan(ds: Dataset, n_folds: int = 2, mode: str = "swap", seed: int = 0) -> FoldPlan:
    """Balanced random folds within each ``(r, a)`` cell.

    Each cell draws from its own stream, so the folds of trial subjects do
    not depend on which externals are present.
    """
    folds = np.zeros(len(ds), dtype=int)
    for r, a in CELLS:
        idx = ds.cell(r, a)
        rng = np.random.default_rng([seed, r, a])
        folds[idx] = rng.permutation(len(idx)) % n_folds
    return FoldPlan(folds, n_folds, mode)


@dataclass(frozen=True)
class PipelineResult:
    """Point estimates of every requested estimator from one pipeline pass."""

    theta: dict
    n_borrowed: int
    lam: float | None
    selection: object
    influence: dict


@dataclass(frozen=True)
class EstimateReport:
    kind: str
    theta_hat: float
    se: float | None
    ci: tuple | None
    tau: float
    n_trial: int
    n_external: int
    n_borrowed: int
    lam: float | None
    seed: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "theta_hat": self.theta_hat,
            "se": self.se,
            "ci": None if self.ci is None else list(self.ci),
            "tau": self.tau,
            "n_trial": self.n_trial,
            "n_external": self.n_external,
            "n_borrowed": self.n_borrowed,
            "lambda": self.lam,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _check_design(ds: Dataset, kinds) -> None:
    trial = ds.r == 1
    if not (np.any(trial & (ds.a == 1)) and np.any(trial & (ds.a == 0))):
        raise ContractError("estimation needs both trial arms")
    if set(kinds) - {"aipw"} and not np.any(ds.r == 0):
        raise ContractError("borrowing estimators need external controls")


def _selection(ds, evals, options, lam):
    """Comparable-set membership and selection probabilities for every evaluated row."""
    ext_rows = [np.flatnonzero(ev.r == 0) for ev in evals]
    if options.force_selection is not None:
        share = 1.0 if options.force_selection == "all" else 0.0
        member = [np.full(len(ev.r), share) for ev in evals]
        return member, [np.full(len(ev.r), share) for ev in evals], None, None
    parts = [ev.pseudo_outcomes() for ev in evals]
    xi = np.concatenate([k1 - k0 for _, k1, k0 in parts])
    x_ext = np.concatenate([ev.x[rows] for ev, rows in zip(evals, ext_rows)])
    ids = np.concatenate([ds.ids[ev.index[rows]] for ev, rows in zip(evals, ext_rows)])
    if lam is None:
        lam = select_lambda(xi, options.lambda_grid, options.penalty, options.weight_power,
                            options.scad_a, options.mcp_gamma)
    sel = refine_biases(xi, lam, options.penalty, x_ext, ids, options.weight_power,
                        options.scad_a, options.mcp_gamma)
    flags = sel.selected.astype(float)
    member, p_keep, start = [], [], 0
    for ev, rows in zip(evals, ext_rows):
        m = np.zeros(len(ev.r))
        m[rows] = flags[start:start + len(rows)]
        start += len(rows)
        member.append(m)
        p_keep.append(sel.model.predict(ev.x))
    return member, p_keep, lam, sel


def run_pipeline(ds: Dataset, options: EstimatorOptions = EstimatorOptions(), seed: int = 0,
                 kinds=ESTIMATORS, lam: float | None = None) -> PipelineResult:
    """Cross-fit nuisances once and evaluate every estimator in ``kinds``.

    ``lam`` overrides ``options.lam``; when both are ``None`` the penalty
    level is chosen by BIC.
    """
    kinds = tuple(kinds)
    lam = options.lam if lam is None else lam
    bad = set(kinds) - set(ESTIMATORS)
    if bad:
        raise ValueError(f"unknown estimator kind(s) {sorted(bad)}")
    _check_design(ds, kinds)
    plan = make_fold_plan(ds, options.n_folds, options.mode, seed)
    try:
        nuis = fit_nuisances(ds, plan.folds, options.nuisance)
    except FoldError as err:
        raise FoldError(f"{err}; try single-split mode or fewer folds") from err
    grid = TimeGrid.from_times(ds.y, options.tau)
    rows = [np.flatnonzero(plan.folds == k) for k in plan.evaluated]
    n_eval = sum(len(i) for i in rows)
    p_r1 = sum(int(ds.r[i].sum()) for i in rows) / n_eval
    evals = [evaluate_fold(ds, idx, nuis[k], grid, p_r1, options.eps)
             for k, idx in zip(plan.evaluated, rows)]

    order = np.concatenate(rows)
    phi1 = np.concatenate([ev.phi1 for ev in evals])
    phi0 = {"aipw": np.concatenate([ev.phi0_trial_only() for ev in evals])}
    n_borrowed, sel = 0, None
    if "acw" in kinds:
        phi0["acw"] = np.concatenate([ev.phi0_full() for ev in evals])
    if "adapt" in kinds:
        member, p_keep, lam, sel = _selection(ds, evals, options, lam)
        phi0["adapt"] = np.concatenate([ev.phi0_selective(m, p) for ev, m, p in zip(evals, member, p_keep)])
        n_borrowed = int(sum(m[ev.r == 0].sum() for ev, m in zip(evals, member)))
    theta = {k: float(np.mean(phi1 - phi0[k])) for k in kinds}
    influence = {"ids": ds.ids[order], "phi1": phi1, **{f"phi0_{k}": v for k, v in phi0.items()}}
    return PipelineResult(theta, n_borrowed, lam if "adapt" in kinds else None, sel, influence)


def write_influence(result: PipelineResult, kind: str, stream) -> None:
    """Per-subject integrated influence values; ``psi`` is centred for ``kind``."""
    inf = result.influence
    nan = np.full(len(inf["ids"]), np.nan)
    cols = [inf["phi1"], inf.get("phi0_acw", nan), inf["phi0_aipw"], inf.get("phi0_adapt", nan)]
    psi = inf["phi1"] - inf[f"phi0_{kind}"] - result.theta[kind]
    stream.write("id,phi1,phi0_full,phi0_rct,phi0_sel,psi\n")
    for i, row in enumerate(zip(*cols, psi)):
        stream.write(",".join([str(inf["ids"][i])] + [repr(float(v)) for v in row]) + "\n")


# ---------------------------------------------------------------------------
# bootstrap


def resample(ds: Dataset, seed: int, replicate: int, attempt: int = 0) -> Dataset:
    """Resample with replacement within each ``(r, a)`` cell, keeping cell sizes."""
    parts = []
    for r, a in CELLS:
        idx = ds.cell(r, a)
        if len(idx):
            rng = np.random.default_rng([seed, replicate, attempt, r, a])
            parts.append(idx[rng.integers(0, len(idx), len(idx))])
    idx = np.concatenate(parts)
    ids = np.char.add(np.char.add(ds.ids[idx], "#"), np.arange(len(idx)).astype(str))
    return Dataset(ids, ds.y[idx], ds.delta[idx], ds.a[idx], ds.r[idx], ds.x[idx], ds.covariate_names)


def bootstrap_estimates(ds: Dataset, options: EstimatorOptions, seed: int, n_boot: int,
                        kinds=ESTIMATORS, lam: float | None = None) -> dict:
    """Estimates of every kind on ``n_boot`` stratified resamples.

    A resample on which the pipeline cannot be fit is redrawn, up to
    ``MAX_RETRIES`` times.
    """
    if n_boot < 2:
        raise ValueError("bootstrap needs at least 2 resamples")
    out = {k: np.empty(n_boot) for k in kinds}
    for b in range(n_boot):
        for attempt in range(MAX_RETRIES + 1):
            try:
                res = run_pipeline(resample(ds, seed, b, attempt), options, seed, kinds, lam)
                break
            except (FitError, ContractError, DataError) as err:
                last = err
        else:
            raise ResampleError(f"bootstrap resample {b} failed {MAX_RETRIES + 1} times: {last}")
        for k in kinds:
            out[k][b] = res.theta[k]
    return out


def wald(theta: float, se: float, level: float = 0.95) -> tuple[float, float]:
    z = float(norm.ppf(0.5 + level / 2))
    return (theta - z * se, theta + z * se)


def bootstrap(ds: Dataset, kind: str, n_boot: int = 50, tau: float = 2.0, seed: int = 0,
              options: EstimatorOptions = EstimatorOptions()) -> tuple[float, tuple[float, float]]:
    """Bootstrap standard error and Wald interval for one estimator."""
    options = replace(options, tau=tau)
    base = run_pipeline(ds, options, seed, (kind,), options.lam)
    lam = None if options.refit_lambda else base.lam
    draws = bootstrap_estimates(ds, options, seed, n_boot, (kind,), lam)[kind]
    se = float(np.std(draws, ddof=1))
    return se, wald(base.theta[kind], se, options.level)


def estimate_all(ds: Dataset, options: EstimatorOptions = EstimatorOptions(), seed: int = 0,
                 kinds=ESTIMATORS) -> dict:
    """Reports for every kind in ``kinds``, sharing fits and bootstrap resamples."""
    kinds = tuple(kinds)
    base = run_pipeline(ds, options, seed, kinds, options.lam)
    draws = None
    if options.n_boot:
        lam = None if options.refit_lambda else base.lam
        draws = bootstrap_estimates(ds, options, seed, options.n_boot, kinds, lam)
    reports = {}
    for k in kinds:
        theta = base.theta[k]
        se = ci = None
        if draws is not None:
            se = float(np.std(draws[k], ddof=1))
            ci = wald(theta, se, options.level)
        borrowed = {"aipw": 0, "acw": ds.n_external, "adapt": base.n_borrowed}[k]
        reports[k] = EstimateReport(k, theta, se, ci, options.tau, ds.n_trial, ds.n_external,
                                    borrowed, base.lam if k == "adapt" else None, seed)
    return reports


def estimate(ds: Dataset, kind: str, options: EstimatorOptions = EstimatorOptions(), seed: int = 0) -> EstimateReport:
    if kind == "aipw":
        # externals play no role in the trial-only estimator
        rep = estimate_all(ds.trial_only(), options, seed, ("aipw",))["aipw"]
        return replace(rep, n_external=ds.n_external)
    return estimate_all(ds, options, seed, (kind,))[kind]


def estimate_aipw(ds: Dataset, options: EstimatorOptions = EstimatorOptions(), seed: int = 0) -> EstimateReport:
    return estimate(ds, "aipw", options, seed)


def estimate_acw(ds: Dataset, options: EstimatorOptions = EstimatorOptions(), seed: int = 0) -> EstimateReport:
    return estimate(ds, "acw", options, seed)


def estimate_adapt(ds: Dataset, options: EstimatorOptions = EstimatorOptions(), seed: int = 0) -> EstimateReport:
    return estimate(ds, "adapt", options, seed)
