"""Pseudo-outcome bias detection and penalized selection of comparable externals.

Each external control gets a doubly robust pseudo-outcome ``xi``: the
difference between its RMST under the trial-control model and under the
external-control model, the latter corrected by its own residual. A
penalized per-subject fit shrinks small ``xi`` to exactly zero; subjects whose
refined bias is zero form the comparable set.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .eif import ContractError, FoldEvaluation, left_riemann, pseudo_outcome_branches
from .nuisance.errors import FitError
from .nuisance.logistic import LogisticModel, fit_logistic

KINDS = ("adaptive_lasso", "scad", "mcp")
WEIGHT_FLOOR = 1e-6
MAD_SCALE = 1.4826


@dataclass(frozen=True)
class PseudoOutcomes:
    """Pseudo-outcomes of a group of external subjects (aligned arrays)."""

    ids: np.ndarray
    xi: np.ndarray
    kappa_trial: np.ndarray
    kappa_ext: np.ndarray


def pseudo_outcome(m_ext, s0_trial, s0_ext, pi_r, grid) -> tuple[float, float, float]:
    """``(xi, trial-branch RMST, external-branch RMST)`` for one external subject.

    Arguments are the subject's values at the left cell points of ``grid``
    (``pi_r`` is a scalar).
    """
    k1, k0 = pseudo_outcome_branches(np.asarray(m_ext, float), np.asarray(s0_trial, float),
                                     np.asarray(s0_ext, float), pi_r)
    i1, i0 = float(left_riemann(k1, grid)), float(left_riemann(k0, grid))
    return i1 - i0, i1, i0


def fold_pseudo_outcomes(ev: FoldEvaluation, ids, rows=None) -> PseudoOutcomes:
    """Pseudo-outcomes for the held-out externals of one fold.

    ``ids`` are the subject ids aligned with the fold's rows; ``rows``
    restricts to specific rows, all of which must be externals.
    """
    if rows is not None:
        rows = np.asarray(rows)
        if np.any(ev.r[rows] == 1):
            raise ContractError("pseudo-outcomes are defined for external subjects only")
    ext, k1, k0 = ev.pseudo_outcomes()
    if rows is not None:
        keep = np.searchsorted(ext, rows)
        ext, k1, k0 = ext[keep], k1[keep], k0[keep]
    return PseudoOutcomes(np.asarray(ids)[ext], k1 - k0, k1, k0)


# ---------------------------------------------------------------------------
# thresholding


def _check_shape(kind, a, gamma):
    if kind not in KINDS:
        raise ValueError(f"unknown penalty kind {kind!r}; expected one of {KINDS}")
    if kind == "scad" and not a > 2:
        raise ValueError(f"SCAD needs a > 2, got {a}")
    if kind == "mcp" and not gamma > 1:
        raise ValueError(f"MCP needs gamma > 1, got {gamma}")


def penalty(b, lam, kind="adaptive_lasso", weight=1.0, a=3.7, gamma=3.0):
    """Penalty added to the squared loss ``(xi - b)^2``.

    Written as ``2 p_k(|b|)`` with ``k = lam * weight / 2`` and ``p_k`` the
    usual lasso/SCAD/MCP penalty at level ``k``, so that :func:`threshold` is
    the textbook operator for a half squared loss.
    """
    _check_shape(kind, a, gamma)
    b = np.abs(np.asarray(b, dtype=float))
    k = lam * np.asarray(weight, dtype=float) / 2.0
    if kind == "adaptive_lasso":
        p = k * b
    elif kind == "scad":
        p = np.where(b <= k, k * b,
                     np.where(b <= a * k, (2 * a * k * b - b**2 - k**2) / (2 * (a - 1)),
                              k**2 * (a + 1) / 2))
    else:
        p = np.where(b <= gamma * k, k * b - b**2 / (2 * gamma), gamma * k**2 / 2)
    return 2.0 * p


def threshold(xi, lam, kind="adaptive_lasso", weight=1.0, a=3.7, gamma=3.0):
    """Minimizer over ``b`` of ``(xi - b)^2 + penalty(b)``."""
    _check_shape(kind, a, gamma)
    if np.any(np.asarray(lam) < 0):
        raise ValueError("lambda must be nonnegative")
    xi = np.asarray(xi, dtype=float)
    k = lam * np.asarray(weight, dtype=float) / 2.0
    mag = np.abs(xi)
    sgn = np.sign(xi)
    soft = sgn * np.maximum(mag - k, 0.0)
    if kind == "adaptive_lasso":
        out = soft
    elif kind == "scad":
        mid = ((a - 1) * xi - sgn * a * k) / (a - 2)
        out = np.where(mag <= 2 * k, soft, np.where(mag <= a * k, mid, xi))
    else:
        out = np.where(mag <= gamma * k, soft / (1 - 1 / gamma), xi)
    return out if out.ndim else float(out)


def adaptive_weights(xi, power=1.0):
    return 1.0 / np.maximum(np.abs(np.asarray(xi, dtype=float)), WEIGHT_FLOOR) ** power


# ---------------------------------------------------------------------------
# refinement and tuning


class ConstantProbability:
    """Selection-probability model that ignores the covariates."""

    def __init__(self, prob: float):
        self.prob = float(prob)

    def predict(self, x) -> np.ndarray:
        return np.full(len(np.asarray(x)), self.prob)

    def to_dict(self) -> dict:
        return {"constant": self.prob}


def fit_selection_model(x, selected):
    """``P(selected | X)`` among externals; constant on separation or degeneracy."""
    selected = np.asarray(selected, dtype=float)
    if len(selected) == 0:
        return ConstantProbability(0.0)
    share = float(selected.mean())
    if share in (0.0, 1.0):
        return ConstantProbability(share)
    try:
        return fit_logistic(x, selected)
    except (FitError, ValueError):
        return ConstantProbability(share)


@dataclass(frozen=True)
class SelectionResult:
    ids: np.ndarray
    xi: np.ndarray
    b_tilde: np.ndarray
    lam: float
    kind: str
    model: LogisticModel | ConstantProbability

    @property
    def selected(self) -> np.ndarray:
        return self.b_tilde == 0

    @property
    def comparable_ids(self) -> np.ndarray:
        return self.ids[self.selected]

    @property
    def n_borrowed(self) -> int:
        return int(self.selected.sum())

    def write_report(self, stream) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["id", "xi", "b_tilde", "selected"])
        for i, xi, b, s in zip(self.ids, self.xi, self.b_tilde, self.selected):
            w.writerow([i, repr(float(xi)), repr(float(b)), int(s)])


def _refine(xi, lam, kind, weight_power, a, gamma):
    w = adaptive_weights(xi, weight_power) if kind == "adaptive_lasso" else 1.0
    return threshold(xi, lam, kind, w, a, gamma)


def refine_biases(xi, lam, kind="adaptive_lasso", x=None, ids=None, weight_power=1.0,
                  a=3.7, gamma=3.0) -> SelectionResult:
    """Threshold each pseudo-outcome and fit the selection-probability model.

    Adaptive-lasso weights are ``1 / max(|xi|, 1e-6)^weight_power``; SCAD and
    MCP already taper their penalty and use unit weights.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.size == 0:
        raise ContractError("refine_biases needs at least one pseudo-outcome")
    b = np.atleast_1d(_refine(xi, lam, kind, weight_power, a, gamma))
    ids = np.arange(len(xi)).astype(str) if ids is None else np.asarray(ids)
    x = np.zeros((len(xi), 0)) if x is None else np.asarray(x, dtype=float)
    return SelectionResult(ids, xi, b, float(lam), kind, fit_selection_model(x, b == 0))


def robust_scale(xi) -> float:
    xi = np.asarray(xi, dtype=float)
    return float(MAD_SCALE * np.median(np.abs(xi - np.median(xi))))


def default_lambda_grid(xi, n: int = 50) -> np.ndarray:
    scale = robust_scale(xi)
    if scale <= 0:
        scale = float(np.std(xi)) or 1.0
    return scale * np.logspace(-3, 1, n)


def bic_path(xi, lambda_grid, kind="adaptive_lasso", weight_power=1.0, a=3.7, gamma=3.0):
    xi = np.asarray(xi, dtype=float)
    scale2 = robust_scale(xi) ** 2
    out = np.empty(len(lambda_grid))
    for j, lam in enumerate(lambda_grid):
        b = _refine(xi, lam, kind, weight_power, a, gamma)
        out[j] = np.sum((xi - b) ** 2) + scale2 * np.log(len(xi)) * np.count_nonzero(b)
    return out


def select_lambda(xi, lambda_grid=None, kind="adaptive_lasso", weight_power=1.0,
                  a=3.7, gamma=3.0) -> float:
    """Grid value minimizing the BIC; ties go to the larger lambda."""
    grid = default_lambda_grid(xi) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ContractError("lambda grid is empty")
    if np.any(np.diff(grid) < 0):
        raise ContractError("lambda grid must be ascending")
    bic = bic_path(xi, grid, kind, weight_power, a, gamma)
    best = np.flatnonzero(bic <= bic.min())
    return float(grid[best[-1]])
