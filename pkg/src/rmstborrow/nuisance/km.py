"""Kaplan-Meier curves and the two-sample log-rank test."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2


@dataclass(frozen=True)
class StepSurvival:
    """Right-continuous step survival curve starting at 1."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        v = np.concatenate(([1.0], self.values))
        return v[np.searchsorted(self.times, t, side="right")]


def km_curve(times, events) -> StepSurvival:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    if times.size == 0:
        raise ValueError("km_curve needs at least one subject")
    uniq, inv = np.unique(times, return_inverse=True)
    d = np.bincount(inv, weights=events, minlength=len(uniq))
    leaving = np.bincount(inv, minlength=len(uniq))
    at_risk = len(times) - np.concatenate(([0], np.cumsum(leaving)[:-1]))
    jump = d > 0
    factors = 1.0 - d[jump] / at_risk[jump]
    return StepSurvival(uniq[jump], np.cumprod(factors))


def logrank_test(group_a, group_b) -> tuple[float, float]:
    """Two-sample log-rank chi-square (1 df) and its p-value.

    Each group is a ``(times, events)`` pair.
    """
    ta, ea = (np.asarray(v, dtype=float) for v in group_a)
    tb, eb = (np.asarray(v, dtype=float) for v in group_b)
    t = np.concatenate([ta, tb])
    e = np.concatenate([ea, eb]).astype(bool)
    in_a = np.r_[np.ones(len(ta), bool), np.zeros(len(tb), bool)]
    event_times = np.unique(t[e])
    if event_times.size == 0:
        raise ValueError("log-rank test needs at least one event")
    n = (t[None, :] >= event_times[:, None])
    n_all = n.sum(axis=1)
    n_a = n[:, in_a].sum(axis=1)
    hit = (t[None, :] == event_times[:, None]) & e[None, :]
    d_all = hit.sum(axis=1)
    d_a = hit[:, in_a].sum(axis=1)
    expected = d_all * n_a / n_all
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(n_all > 1, d_all * (n_a / n_all) * (1 - n_a / n_all) * (n_all - d_all) / (n_all - 1), 0.0)
    o_minus_e = float(np.sum(d_a - expected))
    v = float(np.sum(var))
    if v <= 0:
        return 0.0, 1.0
    stat = o_minus_e**2 / v
    return stat, float(chi2.sf(stat, 1))
