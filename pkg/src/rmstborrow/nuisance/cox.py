"""Cox proportional hazards with Breslow ties and Breslow baseline hazard."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankError, SeparationError

MAX_ITER = 100
GRAD_TOL = 1e-8
MAX_HALVINGS = 10
MAX_ABS_COEF = 50.0


def _rev_cumsum(v):
    return np.flip(np.cumsum(np.flip(v, axis=0), axis=0), axis=0)


class _RiskSets:
    """Sorted data and risk-set bookkeeping reused across Newton steps."""

    def __init__(self, time, event, x):
        order = np.argsort(time, kind="stable")
        self.t = time[order]
        self.e = event[order].astype(float)
        self.x = x[order]
        uniq, first = np.unique(self.t, return_index=True)
        d = np.add.reduceat(self.e, first) if len(first) else np.zeros(0)
        keep = d > 0
        self.event_times = uniq[keep]
        self.first = first[keep]
        self.d = d[keep]
        self.xe_sum = self.e @ self.x

    def derivatives(self, beta, hessian=True):
        eta = self.x @ beta
        c = eta.max() if len(eta) else 0.0
        w = np.exp(eta - c)
        r0 = _rev_cumsum(w)[self.first]
        wx = w[:, None] * self.x
        r1 = _rev_cumsum(wx)[self.first]
        ll = float(self.e @ eta - self.d @ (np.log(r0) + c))
        xbar = r1 / r0[:, None]
        grad = self.xe_sum - self.d @ xbar
        if not hessian:
            return ll, grad, None
        r2 = _rev_cumsum(wx[:, :, None] * self.x[:, None, :])[self.first]
        m = r2 / r0[:, None, None] - xbar[:, :, None] * xbar[:, None, :]
        hess = -np.einsum("k,kij->ij", self.d, m)
        return ll, grad, hess

    def breslow(self, beta):
        """Baseline hazard increments at the event times (covariates at zero)."""
        eta = self.x @ beta
        c = eta.max() if len(eta) else 0.0
        r0 = _rev_cumsum(np.exp(eta - c))[self.first]
        return self.d / r0 * np.exp(-c)


def cox_partial_loglik(beta, time, event, x):
    """Breslow partial log-likelihood, gradient and Hessian at ``beta``."""
    x = np.asarray(x, dtype=float).reshape(len(time), -1)
    return _RiskSets(np.asarray(time, float), np.asarray(event), x).derivatives(np.asarray(beta, float))


@dataclass(frozen=True)
class CoxModel:
    coefficients: np.ndarray
    step_times: np.ndarray
    hazard_increments: np.ndarray
    converged: bool = True
    iterations: int = 0
    loglik: float = float("nan")

    @property
    def baseline_steps(self) -> list[tuple[float, float]]:
        return list(zip(self.step_times.tolist(), self.hazard_increments.tolist()))

    @property
    def cumulative_steps(self) -> np.ndarray:
        return np.cumsum(self.hazard_increments)

    def risk(self, x) -> np.ndarray:
        """``exp(beta' x)`` per row of ``x``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1) if len(self.coefficients) else x.reshape(-1, 0)
        if len(self.coefficients) == 0:
            return np.ones(len(x))
        return np.exp(x @ self.coefficients)

    def baseline_cumhaz(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        cum = np.concatenate(([0.0], self.cumulative_steps))
        return cum[np.searchsorted(self.step_times, t, side="right")]

    def survival(self, x, t) -> np.ndarray:
        """Matrix ``S(t_k | x_i)`` of shape ``(len(x), len(t))``."""
        return np.exp(-np.outer(self.risk(x), self.baseline_cumhaz(t)))

    def survival_at(self, x, t) -> np.ndarray:
        """``S(t_i | x_i)`` for paired rows and times."""
        return np.exp(-self.risk(x) * self.baseline_cumhaz(t))

    def discrete_hazards(self, x) -> np.ndarray:
        """Per-step conditional hazards ``1 - S(u_j) / S(u_j-)``, shape ``(n, J)``."""
        return -np.expm1(-np.outer(self.risk(x), self.hazard_increments))

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "baseline_steps": [list(s) for s in self.baseline_steps],
            "converged": self.converged,
            "iterations": self.iterations,
        }


def constant_survival_model(p: int) -> CoxModel:
    """Model with ``S(t | x) == 1``; used for strata with no events."""
    return CoxModel(np.zeros(p), np.zeros(0), np.zeros(0), True, 0, 0.0)


def fit_cox(time, event, x=None) -> CoxModel:
    """Newton-Raphson fit of the Breslow partial likelihood.

    Stops when the gradient sup-norm drops below 1e-8 (with a small last
    step) or after 100 steps;
    a step that lowers the log-likelihood is halved up to 10 times.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    n = len(time)
    x = np.zeros((n, 0)) if x is None else np.asarray(x, dtype=float).reshape(n, -1)
    p = x.shape[1]
    if event.sum() < 1:
        raise ValueError("Cox fit needs at least one event")
    center = x.mean(axis=0) if n else np.zeros(p)
    rs = _RiskSets(time, event, x - center)
    beta = np.zeros(p)
    iterations = 0
    converged = p == 0
    if p:
        ll, grad, hess = rs.derivatives(beta)
        _check_rank(hess)
        for iterations in range(1, MAX_ITER + 1):
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                raise RankError("singular Cox information matrix") from None
            new = beta - step
            for _ in range(MAX_HALVINGS):
                new_ll, new_grad, new_hess = rs.derivatives(new)
                if np.isfinite(new_ll) and new_ll >= ll - 1e-12 * abs(ll):
                    break
                step = step / 2
                new = beta - step
            beta, ll, grad, hess = new, new_ll, new_grad, new_hess
            if np.max(np.abs(beta)) > MAX_ABS_COEF:
                raise SeparationError("Cox coefficients diverge (monotone likelihood)")
            # on a monotone likelihood the gradient vanishes while Newton
            # steps stay of order one, so both must be small
            if np.max(np.abs(grad)) < GRAD_TOL and np.max(np.abs(step)) < 1e-4 * (1 + np.max(np.abs(beta))):
                converged = True
                break
        # a diverging fit can also stall where the likelihood flattens to
        # machine precision; its information then vanishes
        info_scale = event.sum() * np.maximum(x.var(axis=0), 1e-300)
        if np.any(-np.diag(hess) < 1e-10 * info_scale):
            raise SeparationError("Cox coefficients diverge (monotone likelihood)")
    else:
        ll = rs.derivatives(beta, hessian=False)[0]
    increments = rs.breslow(beta) * np.exp(-center @ beta)
    return CoxModel(beta, rs.event_times.copy(), increments, converged, iterations, float(ll))


def _check_rank(hess):
    info = -hess
    scale = max(np.max(np.abs(np.diag(info))), 1e-300)
    eig = np.linalg.eigvalsh(info)
    if eig.min() <= 1e-10 * scale:
        raise RankError("Cox design is rank deficient on the risk sets")
