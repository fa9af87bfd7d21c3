"""Influence-function evaluation for the RMST difference.

Formula-level functions take nuisance values that are already evaluated
(arrays that broadcast over subjects x times) so they can be checked by hand.
:class:`FoldEvaluation` evaluates the fitted nuisances of one cross-fitting
fold on its held-out subjects and integrates every variant over the grid.

Censoring survival ``G(t | x)`` is used right-continuous and the martingale
compensator uses the per-step discrete hazards of the fitted censoring model,
so ``int dM^C / G`` telescopes exactly on step functions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .data import Dataset, TimeGrid
from .nuisance.fit import NuisanceSet

EPS = 1e-3
RATIO_BOUNDS = (1e-3, 1e3)


class ContractError(ValueError):
    pass


def clamp(prob, eps: float = EPS):
    return np.clip(prob, eps, 1.0 - eps)


# ---------------------------------------------------------------------------
# integration


def left_riemann(values, grid: TimeGrid) -> np.ndarray:
    """Integrate values given at the left cell points ``0, t_1, ..., t_{K-1}``."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != len(grid.times):
        raise ContractError(f"expected {len(grid.times)} values per row, got {values.shape[-1]}")
    return values @ grid.widths


def rmst_integrate(values_on_grid, grid: TimeGrid, initial: float = 1.0):
    """Step integral over ``[0, tau]`` of values given at the grid times.

    The value at ``t_k`` holds on ``[t_k, t_{k+1})``; ``initial`` holds on
    ``[0, t_1)`` (1 for a survival curve). The value at ``tau`` is unused.
    """
    v = np.asarray(values_on_grid, dtype=float)
    if v.shape[-1] != len(grid.times):
        raise ContractError(f"expected {len(grid.times)} values per row, got {v.shape[-1]}")
    first = np.full(v.shape[:-1] + (1,), float(initial))
    return left_riemann(np.concatenate([first, v[..., :-1]], axis=-1), grid)


# ---------------------------------------------------------------------------
# pointwise formulas


def censoring_martingale_transform(y, delta, t, surv_t, surv_y, cens_y, step_times,
                                   step_hazards, cens_steps, surv_steps, eps: float = EPS):
    """``int_0^t dM^C(u) / G(u) * S(t) / S(u)`` for each subject and time.

    Shapes: ``y, delta, surv_y, cens_y`` are ``(n,)``; ``t`` is ``(K,)``;
    ``surv_t`` is ``(n, K)``; ``step_times`` is ``(J,)`` with per-subject
    ``step_hazards``, ``cens_steps`` (``G`` at the steps) and ``surv_steps``
    (``S`` at the steps) of shape ``(n, J)``.
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    censored = 1.0 - np.asarray(delta, dtype=float)
    jump = censored / (np.maximum(cens_y, eps) * np.maximum(surv_y, eps))
    out = jump[:, None] * (y[:, None] <= t[None, :])
    if len(step_times):
        comp = step_hazards / (np.maximum(cens_steps, eps) * np.maximum(surv_steps, eps))
        comp = np.where(step_times[None, :] <= y[:, None], comp, 0.0)
        cum = np.concatenate([np.zeros((len(y), 1)), np.cumsum(comp, axis=1)], axis=1)
        out = out - cum[:, np.searchsorted(step_times, t, side="right")]
    return np.asarray(surv_t) * out


def aipcw_survival(y, t, cens_t, martingale, eps: float = EPS):
    """``1(Y > t) / G(t) + martingale``: the censoring-augmented survival indicator."""
    y = np.asarray(y, dtype=float)
    at_risk = y[:, None] > np.asarray(t, dtype=float)[None, :]
    return at_risk / np.maximum(cens_t, eps) + martingale


def phi_s1(r, a, m, s1, pi_a, p_r1):
    """Uncentred influence function of ``S_1(t | R=1)``."""
    return r * a * m / (p_r1 * pi_a) + r * s1 * (1.0 - a / pi_a) / p_r1


def variance_ratio(s0_trial, s0_ext):
    """Bernoulli variance ratio ``S(1-S)`` trial control over external, clamped.

    Where both curves sit at 0 or 1 the ratio is taken as 1.
    """
    num = np.asarray(s0_trial * (1.0 - s0_trial), dtype=float)
    den = np.asarray(s0_ext * (1.0 - s0_ext), dtype=float)
    ratio = np.divide(num, den, out=np.ones_like(num), where=den > 0)
    ratio[(den <= 0) & (num > 0)] = RATIO_BOUNDS[1]
    return np.clip(ratio, *RATIO_BOUNDS)


def pooling_denominator(vr, pi_a, q_r, p_keep=1.0):
    return vr * p_keep + (1.0 - pi_a) * q_r


def phi_s0_full(r, a, m, s0, vr, pi_a, q_r, p_r1):
    """Uncentred influence function of ``S_0(t | R=1)`` borrowing all externals."""
    return phi_s0_selective(r, a, m, s0, vr, pi_a, q_r, p_r1, 1.0, 1.0)


def phi_s0_trial_only(r, a, m, s0, pi_a, p_r1):
    return (r * (1.0 - a) * m + r * (a - pi_a) * s0) / (p_r1 * (1.0 - pi_a))


def phi_s0_selective(r, a, m, s0, vr, pi_a, q_r, p_r1, member, p_keep):
    """Influence function borrowing only externals with ``member == 1``.

    ``p_keep`` is the probability that an external control with these
    covariates is comparable.
    """
    ext = 1.0 - r
    d = pooling_denominator(vr, pi_a, q_r, p_keep)
    ipw = r * (1.0 - a) * q_r * m + ext * member * q_r * vr * m
    reg = s0 * (r * q_r * (a - pi_a) + vr * (r * p_keep - ext * member * q_r))
    return (ipw + reg) / (p_r1 * d)


def pseudo_outcome_branches(m_ext, s0_trial, s0_ext, pi_r):
    """Pointwise ``kappa_0(t | R=1)`` and ``kappa_0(t | R=0)`` for an external subject.

    The trial branch's corrections carry the factor ``R`` and vanish.
    """
    return s0_trial, s0_ext + (m_ext - s0_ext) / (1.0 - pi_r)


# ---------------------------------------------------------------------------
# evaluation on a held-out fold


def aipcw_matrix(cens_model, xc, x, y, delta, t, surv_model, eps: float = EPS):
    """Vectorised censoring-augmented survival term and outcome survival at ``t``.

    ``xc`` is the censoring-model design and ``x`` the outcome-model design.
    Reference path for :func:`_augmented`, which computes the same values
    row by row.
    """
    surv_t = surv_model.survival(x, t)
    steps = cens_model.step_times
    mart = censoring_martingale_transform(
        y, delta, t, surv_t,
        surv_model.survival_at(x, y), cens_model.survival_at(xc, y),
        steps, cens_model.discrete_hazards(xc), cens_model.survival(xc, steps),
        surv_model.survival(x, steps), eps,
    )
    return aipcw_survival(y, t, cens_model.survival(xc, t), mart, eps), surv_t


def _augmented(cens_model, xc, x, y, delta, t, surv_model, eps):
    steps = cens_model.step_times
    return _k.augmented_survival(
        t, surv_model.baseline_cumhaz(t), surv_model.risk(x),
        cens_model.baseline_cumhaz(t), cens_model.risk(xc),
        steps, cens_model.hazard_increments, cens_model.baseline_cumhaz(steps),
        surv_model.baseline_cumhaz(steps), np.asarray(y, float), np.asarray(delta, np.int64),
        surv_model.baseline_cumhaz(y), cens_model.baseline_cumhaz(y), float(eps),
    )


def _survival(model, x, t):
    return _k.survival_matrix(model.baseline_cumhaz(t), model.risk(x))


@dataclass
class FoldEvaluation:
    """Nuisances of one fold evaluated on its held-out subjects.

    Rows fall in three groups: treated trial subjects (``T``), trial
    controls (``C``) and externals (``E``). On ``T`` every control-arm
    influence variant reduces to ``S_0(t | X, R=1) / P(R=1)``, so only ``C``
    and ``E`` keep full subject-by-time matrices (``m``: censoring-augmented
    survival indicator, ``s0``: trial-control survival, ``vr``: variance
    ratio), which the selective variant needs once the comparable set is known.
    """

    index: np.ndarray
    r: np.ndarray
    a: np.ndarray
    x: np.ndarray
    grid: TimeGrid
    p_r1: float
    pi_a: np.ndarray
    pi_r: np.ndarray | None
    phi1: np.ndarray
    phi0_rct: np.ndarray
    int_s0: np.ndarray
    ctrl: np.ndarray
    ext: np.ndarray
    m_c: np.ndarray
    s0_c: np.ndarray
    vr_c: np.ndarray | None
    m_e: np.ndarray | None
    s0_e: np.ndarray | None
    vr_e: np.ndarray | None
    kappa_trial: np.ndarray | None
    kappa_ext: np.ndarray | None

    @property
    def q_r(self):
        return None if self.pi_r is None else self.pi_r / (1.0 - self.pi_r)

    def phi0_trial_only(self) -> np.ndarray:
        return self.phi0_rct

    def phi0_full(self) -> np.ndarray:
        ones = np.ones(len(self.r))
        return self.phi0_selective(ones, ones)

    def phi0_selective(self, member, p_keep) -> np.ndarray:
        """Integrated selective influence values for every held-out row.

        ``member`` flags comparable externals (ignored on trial rows) and
        ``p_keep`` is the modelled selection probability at each row.
        """
        if self.vr_c is None:
            raise ContractError("selective influence function needs external-control nuisances")
        if member is None or p_keep is None:
            raise ContractError("selective influence function needs membership and selection probabilities")
        member = np.asarray(member, dtype=float)
        p_keep = np.asarray(p_keep, dtype=float)
        q = self.q_r
        w = self.grid.widths
        out = self.int_s0 / self.p_r1
        c = self.ctrl
        out[c] = _k.control_integrals(self.m_c, self.s0_c, self.vr_c, q[c], self.pi_a[c],
                                      p_keep[c], w) / self.p_r1
        out[self.ext] = 0.0
        on = member[self.ext] != 0
        if on.any():
            e = self.ext[on]
            vals = _k.external_integrals(self.m_e[on], self.s0_e[on], self.vr_e[on], q[e],
                                         self.pi_a[e], p_keep[e], w)
            out[e] = member[e] * q[e] * vals / self.p_r1
        return out

    def pseudo_outcomes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(row index, trial-branch RMST, external-branch RMST)`` for externals."""
        return self.ext, self.kappa_trial, self.kappa_ext


def evaluate_fold(ds: Dataset, index, nuis: NuisanceSet, grid: TimeGrid, p_r1: float,
                  eps: float = EPS) -> FoldEvaluation:
    """Evaluate ``nuis`` on the subjects ``ds[index]`` over the left cell points of ``grid``."""
    index = np.asarray(index)
    t = grid.left_points
    w = grid.widths
    x, y, delta = ds.x[index], ds.y[index], ds.delta[index]
    r, a = ds.r[index], ds.a[index]
    n = len(index)
    has_ext = (0, 0) in nuis.survival
    s11, s01 = nuis.survival[(1, 1)], nuis.survival[(0, 1)]
    s00 = nuis.survival.get((0, 0))

    pi_a = clamp(nuis.pi_a.predict(x), eps)
    pi_r = clamp(nuis.pi_r.predict(x), eps) if nuis.pi_r is not None else None
    phi1 = np.zeros(n)
    phi0_rct = np.zeros(n)
    int_s0 = np.zeros(n)

    def trial_design(rows):
        return np.column_stack([x[rows], a[rows]])

    treated = np.flatnonzero((r == 1) & (a == 1))
    if len(treated):
        xt = x[treated]
        m, s1 = _augmented(nuis.censoring[1], trial_design(treated), xt, y[treated],
                                  delta[treated], t, s11, eps)
        pa = pi_a[treated]
        phi1[treated] = (m @ w) / (p_r1 * pa) + (s1 @ w) * (1.0 - 1.0 / pa) / p_r1
        int_s0[treated] = _survival(s01, xt, t) @ w
        phi0_rct[treated] = int_s0[treated] / p_r1

    ctrl = np.flatnonzero((r == 1) & (a == 0))
    xc = x[ctrl]
    m_c, s0_c = _augmented(nuis.censoring[1], trial_design(ctrl), xc, y[ctrl],
                                  delta[ctrl], t, s01, eps)
    pa = pi_a[ctrl]
    phi1[ctrl] = (_survival(s11, xc, t) @ w) / p_r1
    int_s0[ctrl] = s0_c @ w
    phi0_rct[ctrl] = ((m_c @ w) - pa * int_s0[ctrl]) / (p_r1 * (1.0 - pa))
    vr_c = _k.variance_ratio(s0_c, _survival(s00, xc, t), *RATIO_BOUNDS) if has_ext else None

    ext = np.flatnonzero(r == 0)
    m_e = s0_e = vr_e = k1 = k0 = None
    if len(ext) and not has_ext:
        raise ContractError("external subjects need external-control nuisances")
    if has_ext:
        xe = x[ext]
        m_e, s00_e = _augmented(nuis.censoring[0], xe, xe, y[ext], delta[ext], t, s00, eps)
        s0_e = _survival(s01, xe, t)
        vr_e = _k.variance_ratio(s0_e, s00_e, *RATIO_BOUNDS)
        k1 = s0_e @ w
        int_s00 = s00_e @ w
        k0 = int_s00 + ((m_e @ w) - int_s00) / (1.0 - pi_r[ext])
        int_s0[ext] = k1
    return FoldEvaluation(index, r, a, x, grid, p_r1, pi_a, pi_r, phi1, phi0_rct, int_s0,
                          ctrl, ext, m_c, s0_c, vr_c, m_e, s0_e, vr_e, k1, k0)
