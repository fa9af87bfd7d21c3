"""Compiled row-wise loops for the subject-by-time influence matrices.

These compute exactly what the vectorised formulas in :mod:`rmstborrow.eif`
compute, one subject at a time. Step-function survival curves only change at
their own step times, so each exponential is recomputed only when its
cumulative hazard moves.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def survival_matrix(h_t, risk):
    """``exp(-h_t[k] * risk[i])`` with ``h_t`` nondecreasing."""
    n, k_len = risk.shape[0], h_t.shape[0]
    out = np.empty((n, k_len))
    for i in range(n):
        r = risk[i]
        prev_h = -1.0
        val = 1.0
        for k in range(k_len):
            if h_t[k] != prev_h:
                prev_h = h_t[k]
                val = np.exp(-prev_h * r)
            out[i, k] = val
    return out


@njit(cache=True)
def augmented_survival(t, hs_t, rs, hc_t, rc, steps, dl, hc_steps, hs_steps,
                       y, delta, hs_y, hc_y, eps):
    """Censoring-augmented survival indicator and outcome survival.

    Returns ``(m, s)`` of shape ``(n, K)`` where ``s[i, k] = S(t_k | x_i)`` and
    ``m[i, k] = 1(Y_i > t_k) / G(t_k | x_i)`` plus the censoring-martingale
    transform. ``hs_*`` and ``hc_*`` are baseline cumulative hazards of the
    outcome and censoring models at the grid, at the censoring steps and at
    ``Y``; ``rs`` and ``rc`` are the subjects' relative risks.
    """
    n, k_len, j_len = y.shape[0], t.shape[0], steps.shape[0]
    m = np.empty((n, k_len))
    s = np.empty((n, k_len))
    for i in range(n):
        r_s, r_c, yi = rs[i], rc[i], y[i]
        jump = 0.0
        if delta[i] == 0:
            jump = 1.0 / (max(np.exp(-hc_y[i] * r_c), eps) * max(np.exp(-hs_y[i] * r_s), eps))
        cum = 0.0
        j = 0
        prev_hs = -1.0
        sv = 1.0
        prev_hc = -1.0
        inv_g = 1.0
        for k in range(k_len):
            tk = t[k]
            while j < j_len and steps[j] <= tk:
                if steps[j] <= yi:
                    haz = -np.expm1(-dl[j] * r_c)
                    g = max(np.exp(-hc_steps[j] * r_c), eps)
                    sj = max(np.exp(-hs_steps[j] * r_s), eps)
                    cum += haz / (g * sj)
                j += 1
            if hs_t[k] != prev_hs:
                prev_hs = hs_t[k]
                sv = np.exp(-prev_hs * r_s)
            s[i, k] = sv
            if yi > tk:
                if hc_t[k] != prev_hc:
                    prev_hc = hc_t[k]
                    inv_g = 1.0 / max(np.exp(-prev_hc * r_c), eps)
                m[i, k] = inv_g - sv * cum
            else:
                m[i, k] = sv * (jump - cum)
    return m, s


@njit(cache=True)
def control_integrals(m, s0, vr, q, pi_a, p_keep, w):
    """``int [q m + s0 (vr p - pi_a q)] / (vr p + (1 - pi_a) q)`` per trial control."""
    n, k_len = m.shape
    out = np.empty(n)
    for i in range(n):
        qi, pa, pk = q[i], pi_a[i], p_keep[i]
        base = (1.0 - pa) * qi
        acc = 0.0
        for k in range(k_len):
            vp = vr[i, k] * pk
            acc += w[k] * (qi * m[i, k] + s0[i, k] * (vp - pa * qi)) / (vp + base)
        out[i] = acc
    return out


@njit(cache=True)
def external_integrals(m, s0, vr, q, pi_a, p_keep, w):
    """``int vr (m - s0) / (vr p + (1 - pi_a) q)`` per external control."""
    n, k_len = m.shape
    out = np.empty(n)
    for i in range(n):
        base = (1.0 - pi_a[i]) * q[i]
        pk = p_keep[i]
        acc = 0.0
        for k in range(k_len):
            v = vr[i, k]
            acc += w[k] * v * (m[i, k] - s0[i, k]) / (v * pk + base)
        out[i] = acc
    return out


@njit(cache=True)
def variance_ratio(s_num, s_den, lo, hi):
    """Clamped ``s(1-s)`` ratio; 0/0 is 1 and x/0 is ``hi``."""
    n, k_len = s_num.shape
    out = np.empty((n, k_len))
    for i in range(n):
        for k in range(k_len):
            num = s_num[i, k] * (1.0 - s_num[i, k])
            den = s_den[i, k] * (1.0 - s_den[i, k])
            if den > 0:
                v = num / den
            elif num > 0:
                v = hi
            else:
                v = 1.0
            out[i, k] = min(max(v, lo), hi)
    return out
