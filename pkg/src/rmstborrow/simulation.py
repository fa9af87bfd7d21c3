"""Five-setting data generator for trials augmented with external controls.

Covariates are standard normal. The source indicator and the trial arm follow
logistic models whose intercepts are calibrated so that the expected trial
fraction is ``n_trial / N`` and the expected treated fraction within the trial
is ``n_treated / n_trial``. Event and censoring times are drawn by inverting
the cumulative hazard.

Settings (external-control mechanism):

1. selection bias only (covariate shift, same outcome model),
2. unmeasured confounder ``U`` entering both the source model and the hazard,
3. lack of concurrency: half of the externals get a hazard shift ``3 * 5``,
4. different covariate effect in the external hazard,
5. different (time-varying) baseline hazard.
"""
from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import erf, expit

from .data import Dataset

SETTINGS = {
    1: "selection-bias",
    2: "unmeasured-confounder",
    3: "lack-of-concurrency",
    4: "covariate-effect",
    5: "baseline-hazard",
}

# fixed stream for intercept calibration: intercepts are properties of the
# design, not of a replication
_CALIBRATION_SEED = 20240601
_CALIBRATION_DRAWS = 200_000


class ConfigError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    setting: int = 1
    n_trial: int = 400
    n_external: int = 500
    n_treated: int = 200
    p: int = 3
    beta_c: float = 1.0
    tau: float = 2.0
    seed: int = 0
    # hazard log-ratio of treatment; -0.5 is the benchmark design
    log_hr: float = -0.5

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}; expected one of {sorted(SETTINGS)}")
        if self.p < 1:
            raise ConfigError("p must be at least 1")
        if self.n_trial < 2 or self.n_external < 0:
            raise ConfigError("need n_trial >= 2 and n_external >= 0")
        if not 1 <= self.n_treated < self.n_trial:
            raise ConfigError("need 1 <= n_treated < n_trial")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")

    @property
    def n_total(self) -> int:
        return self.n_trial + self.n_external

    def with_seed(self, seed: int) -> "SimulationConfig":
        return replace(self, seed=int(seed))

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


_INT_KEYS = {"setting", "n_trial", "n_external", "n_treated", "p", "seed"}
_FLOAT_KEYS = {"beta_c", "tau", "log_hr"}


def parse_config(text: str) -> SimulationConfig:
    """Parse ``key = value`` lines (TOML subset: comments, optional quotes)."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        val = val.strip("\"'")
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from None
    return SimulationConfig(**values)


def sample_survival_time(hazard_form: str, rate, u):
    """Invert a cumulative hazard at ``-log(u)``.

    ``hazard_form`` is ``"constant"`` (hazard ``rate``) or ``"linear"``
    (hazard ``rate * t``, cumulative ``rate * t**2 / 2``). Works elementwise
    on arrays.
    """
    rate = np.asarray(rate, dtype=float)
    if np.any(~(rate > 0)):
        raise ValueError("hazard rate must be positive")
    e = -np.log(u)
    if hazard_form == "constant":
        out = e / rate
    elif hazard_form == "linear":
        out = np.sqrt(2.0 * e / rate)
    else:
        raise ValueError(f"unknown hazard form {hazard_form!r}")
    return float(out) if out.ndim == 0 else out


def calibrate_intercept(target_mean: float, linear_predictor_sampler, seed: int,
                        n_draws: int = 100_000, tol: float = 1e-10) -> float:
    """Intercept ``alpha`` with ``mean(expit(alpha + eta)) == target_mean``.

    ``linear_predictor_sampler(rng, n)`` returns ``n`` draws of ``eta``; the
    root is found by bisection on ``[-20, 20]``.
    """
    if not 0.01 < target_mean < 0.99:
        raise ValueError("target_mean must lie in (0.01, 0.99)")
    rng = np.random.default_rng(seed)
    eta = np.asarray(linear_predictor_sampler(rng, n_draws), dtype=float)

    def excess(alpha):
        return expit(alpha + eta).mean() - target_mean

    lo, hi = -20.0, 20.0
    if excess(lo) > 0 or excess(hi) < 0:
        raise CalibrationError(f"cannot bracket an intercept for target mean {target_mean}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _draw_population(setting: int, p: int, rng, n: int):
    x = rng.standard_normal((n, p))
    u = rng.standard_normal(n) if setting == 2 else np.zeros(n)
    return x, u


def _source_predictor(setting: int, x, u):
    eta = x.sum(axis=1)
    if setting == 2:
        eta = eta + u
    return eta


@functools.lru_cache(maxsize=256)
def intercepts(setting: int, n_trial: int, n_external: int, n_treated: int, p: int) -> tuple[float, float]:
    """Calibrated ``(alpha_R, alpha_A)`` for a design."""
    n = n_trial + n_external

    def source_eta(rng, m):
        x, u = _draw_population(setting, p, rng, m)
        return _source_predictor(setting, x, u)

    if n_external == 0:
        alpha_r = math.inf
    else:
        alpha_r = calibrate_intercept(n_trial / n, source_eta, _CALIBRATION_SEED, _CALIBRATION_DRAWS)

    def trial_arm_eta(rng, m):
        # covariates of trial subjects: rejection on the source model
        out = []
        have = 0
        while have < m:
            x, u = _draw_population(setting, p, rng, 2 * m)
            keep = rng.random(2 * m) < expit(alpha_r + _source_predictor(setting, x, u))
            out.append(x[keep].sum(axis=1))
            have += int(keep.sum())
        return np.concatenate(out)[:m]

    alpha_a = calibrate_intercept(n_treated / n_trial, trial_arm_eta, _CALIBRATION_SEED + 1,
                                  _CALIBRATION_DRAWS)
    return alpha_r, alpha_a


def event_hazard(setting: int, x, a, r, u, shift, log_hr: float = -0.5):
    """Hazard form and rate of the event time for each subject."""
    s = x.sum(axis=1)
    a = np.asarray(a, dtype=float)
    ext = np.asarray(r) == 0
    lin = log_hr * a - 0.2 * s
    if setting == 2:
        lin = lin + 3.0 * (u + ext)
    elif setting == 3:
        lin = lin + 3.0 * shift * ext
    elif setting == 4:
        lin = np.where(ext, -0.5 * s, lin)
    rate = np.exp(lin)
    if setting == 5:
        rate = np.where(ext, 2.0 * rate, rate)
        return "linear", rate
    return "constant", rate


def censoring_rate(x, beta_c: float):
    # sign convention gives ~40% censoring at beta_c = 1 and ~60% at beta_c = 0
    return np.exp(0.1 * x.sum(axis=1) - beta_c)


def simulate_with_latent(config: SimulationConfig) -> tuple[Dataset, dict]:
    """Simulate a dataset and also return the unexported latent variables.

    The latent dict holds ``u`` (Setting 2 confounder), ``shift`` (Setting 3
    concurrency shift, 0 or 5), ``t`` and ``c`` (event and censoring times).
    """
    c = config
    alpha_r, alpha_a = intercepts(c.setting, c.n_trial, c.n_external, c.n_treated, c.p)
    rng = np.random.default_rng(np.random.SeedSequence(c.seed))

    xs_t, us_t, xs_e, us_e = [], [], [], []
    n_t = n_e = 0
    batch = max(256, c.n_total)
    while n_t < c.n_trial or n_e < c.n_external:
        x, u = _draw_population(c.setting, c.p, rng, batch)
        r = rng.random(batch) < expit(alpha_r + _source_predictor(c.setting, x, u))
        xs_t.append(x[r]); us_t.append(u[r]); n_t += int(r.sum())
        xs_e.append(x[~r]); us_e.append(u[~r]); n_e += int((~r).sum())
    x = np.vstack([np.vstack(xs_t)[:c.n_trial], np.vstack(xs_e)[:c.n_external]])
    u = np.concatenate([np.concatenate(us_t)[:c.n_trial], np.concatenate(us_e)[:c.n_external]])
    r = np.r_[np.ones(c.n_trial, dtype=int), np.zeros(c.n_external, dtype=int)]

    a = np.zeros(c.n_total, dtype=int)
    a[:c.n_trial] = rng.random(c.n_trial) < expit(alpha_a + x[:c.n_trial].sum(axis=1))

    shift = np.zeros(c.n_total)
    if c.setting == 3:
        shift[c.n_trial:] = np.where(rng.random(c.n_external) < 0.5, 0.0, 5.0)

    form, rate = event_hazard(c.setting, x, a, r, u, shift, c.log_hr)
    t = sample_survival_time(form, rate, rng.random(c.n_total))
    cens = sample_survival_time("constant", censoring_rate(x, c.beta_c), rng.random(c.n_total))
    y = np.minimum(t, cens)
    delta = (t < cens).astype(int)

    width = len(str(c.n_total))
    ids = np.array([f"s{i:0{width}d}" for i in range(c.n_total)])
    ds = Dataset(ids, y, delta, a, r, x, tuple(f"x{j + 1}" for j in range(c.p)))
    return ds, {"u": u, "shift": shift, "t": t, "c": cens}


def simulate(config: SimulationConfig) -> Dataset:
    return simulate_with_latent(config)[0]


def rmst_closed_form(hazard_form: str, rate, tau: float):
    """``int_0^tau S(t) dt`` for constant or linear-in-time hazards."""
    rate = np.asarray(rate, dtype=float)
    if hazard_form == "constant":
        return -np.expm1(-rate * tau) / rate
    k = np.sqrt(rate / 2.0)
    return math.sqrt(math.pi) / 2.0 * erf(k * tau) / k


def conditional_rmst_difference(config: SimulationConfig, x, u=None, tau: float | None = None):
    """Trial RMST difference ``RMST_1(x) - RMST_0(x)`` under the true hazards."""
    tau = config.tau if tau is None else tau
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.zeros(len(x)) if u is None else np.broadcast_to(np.asarray(u, dtype=float), (len(x),))
    ones = np.ones(len(x), dtype=int)
    zero = np.zeros(len(x))
    f1, r1 = event_hazard(config.setting, x, ones, ones, u, zero, config.log_hr)
    f0, r0 = event_hazard(config.setting, x, 0 * ones, ones, u, zero, config.log_hr)
    return rmst_closed_form(f1, r1, tau) - rmst_closed_form(f0, r0, tau)


def true_theta(config: SimulationConfig, tau: float | None = None, n_mc: int = 1_000_000,
               seed: int = 0, return_se: bool = False):
    """Monte Carlo RMST difference over the trial covariate distribution.

    Population draws are weighted by the true trial-membership probability,
    which targets the distribution of ``(X, U)`` given ``R = 1`` without
    rejection noise.
    """
    if n_mc < 100_000:
        raise ValueError("n_mc must be at least 1e5")
    c = config
    alpha_r, _ = intercepts(c.setting, c.n_trial, c.n_external, c.n_treated, c.p)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    x, u = _draw_population(c.setting, c.p, rng, n_mc)
    w = np.ones(n_mc) if math.isinf(alpha_r) else expit(alpha_r + _source_predictor(c.setting, x, u))
    d = conditional_rmst_difference(c, x, u, tau)
    w = w / w.sum()
    est = float(np.sum(w * d))
    if not return_se:
        return est
    se = float(np.sqrt(np.sum(w**2 * (d - est) ** 2)))
    return est, se
