"""Logistic regression by iteratively reweighted least squares."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import RankError, SeparationError

MAX_ITER = 100
SCORE_TOL = 1e-8
MAX_ABS_COEF = 50.0


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    coefficients: np.ndarray
    converged: bool = True
    iterations: int = 0

    def linear_predictor(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if len(self.coefficients) == 0:
            return np.full(len(x), self.intercept)
        return self.intercept + x.reshape(len(x), -1) @ self.coefficients

    def predict(self, x) -> np.ndarray:
        return expit(self.linear_predictor(x))

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "coefficients": self.coefficients.tolist(),
                "converged": self.converged}


def constant_model(prob: float, p: int) -> LogisticModel:
    return LogisticModel(float(np.log(prob) - np.log1p(-prob)), np.zeros(p), True, 0)


def fit_logistic(features, labels, weights=None, intercept_only: bool = False) -> LogisticModel:
    """Maximum-likelihood logistic fit with an intercept.

    ``intercept_only`` drops the features (the model still reports ``p``
    zero coefficients so it predicts on the same inputs).
    """
    y = np.asarray(labels, dtype=float)
    n = len(y)
    x = np.asarray(features, dtype=float).reshape(n, -1)
    p = x.shape[1]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if not (np.any(y[w > 0] == 1) and np.any(y[w > 0] == 0)):
        raise SeparationError("logistic fit needs both labels present")
    design = np.ones((n, 1)) if intercept_only else np.column_stack([np.ones(n), x])

    # the intercept-only MLE is closed form
    ybar = float(w @ y / w.sum())
    coef = np.zeros(design.shape[1])
    coef[0] = np.log(ybar) - np.log1p(-ybar)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        mu = expit(design @ coef)
        score = design.T @ (w * (y - mu))
        if np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            break
        info = (design * (w * mu * (1 - mu))[:, None]).T @ design
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise RankError("singular weighted design in logistic fit") from None
        if not np.all(np.isfinite(step)):
            raise RankError("singular weighted design in logistic fit")
        coef = coef + step
        if np.max(np.abs(coef)) > MAX_ABS_COEF:
            raise SeparationError("logistic coefficients diverge (perfect separation)")
    if not converged:
        # iterates are finite but the score never settles: quasi-separation
        raise SeparationError("IRLS did not converge")
    slopes = np.zeros(p) if intercept_only else coef[1:]
    return LogisticModel(float(coef[0]), slopes, converged, it)
