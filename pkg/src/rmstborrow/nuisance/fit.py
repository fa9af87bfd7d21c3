"""Cross-fitted nuisance models for one dataset."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..data import Dataset
from .cox import CoxModel, constant_survival_model, fit_cox
from .errors import FitError, FoldError, NoCensoringError, NuisanceFitError
from .logistic import LogisticModel, fit_logistic

# arms/sources with a survival model: (a, r)
SURVIVAL_CELLS = ((1, 1), (0, 1), (0, 0))


@dataclass(frozen=True)
class NuisanceOptions:
    """Which working models to fit.

    ``outcome_covariates=False`` fits covariate-free survival curves and
    ``propensity="intercept"`` fits constant propensities; both exist to
    probe double robustness with deliberately wrong models.
    """

    outcome_covariates: bool = True
    propensity: str = "logistic"

    def __post_init__(self):
        if self.propensity not in ("logistic", "intercept"):
            raise ValueError(f"unknown propensity learner {self.propensity!r}")


@dataclass(frozen=True)
class NuisanceSet:
    survival: dict
    censoring: dict
    pi_r: LogisticModel | None
    pi_a: LogisticModel
    p_r1: float

    def to_json(self) -> str:
        return json.dumps({
            "survival": {f"a{a}_r{r}": m.to_dict() for (a, r), m in self.survival.items()},
            "censoring": {f"r{r}": m.to_dict() for r, m in self.censoring.items()},
            "pi_r": None if self.pi_r is None else self.pi_r.to_dict(),
            "pi_a": self.pi_a.to_dict(),
            "p_r1": self.p_r1,
        }, indent=2)


def censoring_design(ds: Dataset, r: int) -> np.ndarray:
    """Censoring-model covariates: ``X`` plus the arm in the trial, ``X`` externally."""
    return np.column_stack([ds.x, ds.a]) if r == 1 else ds.x


def fit_censoring(ds: Dataset, r: int) -> CoxModel:
    """Cox model for the censoring time in source ``r`` (censoring is the event)."""
    sub = ds.subset(ds.r == r)
    if len(sub) == 0 or np.all(sub.delta == 1):
        raise NoCensoringError(f"no censored subjects in source r={r}")
    return fit_cox(sub.y, 1 - sub.delta, censoring_design(sub, r))


def _fit_one(ds: Dataset, options: NuisanceOptions, fold_label) -> NuisanceSet:
    def annotate(name, fn):
        try:
            return fn()
        except (FitError, ValueError) as err:
            raise NuisanceFitError(f"{name} failed on fold {fold_label}: {err}") from err

    has_external = bool(np.any(ds.r == 0))
    survival = {}
    for a, r in SURVIVAL_CELLS:
        if r == 0 and not has_external:
            continue
        idx = ds.cell(r, a)
        xs = ds.x[idx] if options.outcome_covariates else None
        survival[(a, r)] = annotate(f"survival model (a={a}, r={r})",
                                    lambda: fit_cox(ds.y[idx], ds.delta[idx], xs))
    censoring = {}
    for r in ((1, 0) if has_external else (1,)):
        try:
            censoring[r] = annotate(f"censoring model (r={r})", lambda: fit_censoring(ds, r))
        except NuisanceFitError as err:
            if not isinstance(err.__cause__, NoCensoringError):
                raise
            censoring[r] = constant_survival_model(ds.p + (r == 1))
    intercept_only = options.propensity == "intercept"
    pi_r = None
    if has_external:
        pi_r = annotate("trial-membership propensity",
                        lambda: fit_logistic(ds.x, ds.r, intercept_only=intercept_only))
    trial = ds.r == 1
    pi_a = annotate("treatment propensity",
                    lambda: fit_logistic(ds.x[trial], ds.a[trial], intercept_only=intercept_only))
    return NuisanceSet(survival, censoring, pi_r, pi_a, float(trial.mean()))


def check_fold(ds: Dataset, need_external: bool, label) -> None:
    missing = []
    if not np.any((ds.r == 1) & (ds.a == 1)):
        missing.append("trial treated")
    if not np.any((ds.r == 1) & (ds.a == 0)):
        missing.append("trial control")
    if need_external and not np.any(ds.r == 0):
        missing.append("external control")
    if missing:
        raise FoldError(f"fold {label} lacks {', '.join(missing)} subjects")


def fit_nuisances(dataset: Dataset, folds, options: NuisanceOptions = NuisanceOptions()) -> list[NuisanceSet]:
    """Fit one :class:`NuisanceSet` per fold on the complementary folds.

    ``folds`` gives each subject's fold label (``0..K-1``). With a single fold
    the models are fit on all data.
    """
    folds = np.asarray(folds)
    labels = np.unique(folds)
    need_external = bool(np.any(dataset.r == 0))
    out = []
    for k in labels:
        train = dataset.subset(folds != k) if len(labels) > 1 else dataset
        check_fold(train, need_external, k)
        out.append(_fit_one(train, options, k))
    return out
