from .cox import CoxModel, constant_survival_model, cox_partial_loglik, fit_cox
from .errors import (FitError, FoldError, NoCensoringError, NuisanceFitError, RankError,
                     SeparationError)
from .fit import NuisanceOptions, NuisanceSet, censoring_design, fit_censoring, fit_nuisances
from .km import StepSurvival, km_curve, logrank_test
from .logistic import LogisticModel, constant_model, fit_logistic

__all__ = [
    "CoxModel", "constant_survival_model", "cox_partial_loglik", "fit_cox",
    "FitError", "FoldError", "NoCensoringError", "NuisanceFitError", "RankError", "SeparationError",
    "NuisanceOptions", "NuisanceSet", "censoring_design", "fit_censoring", "fit_nuisances",
    "StepSurvival", "km_curve", "logrank_test",
    "LogisticModel", "constant_model", "fit_logistic",
]
