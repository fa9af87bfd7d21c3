import json
from dataclasses import replace

import numpy as np
import pytest

from rmstborrow.data import Dataset, TimeGrid
from rmstborrow.eif import (ContractError, aipcw_matrix, clamp, left_riemann, phi_s0_full, phi_s0_trial_only,
                            phi_s1, variance_ratio)
from rmstborrow.estimator import (EstimatorOptions, bootstrap, bootstrap_estimates, estimate, estimate_all,
                                  make_fold_plan, resample, run_pipeline, wald)
from rmstborrow.nuisance.errors import FoldError
from rmstborrow.nuisance.fit import fit_nuisances
from rmstborrow.simulation import SimulationConfig, simulate, true_theta

NO_BOOT = EstimatorOptions(n_boot=0)


def _tiny(n_ext=0, ext_time=0.5):
    """Covariate-free dataset: treated die at 1.0, controls at 0.7, no censoring."""
    n = 6 + n_ext
    r = np.r_[np.ones(6, int), np.zeros(n_ext, int)]
    a = np.r_[np.ones(3, int), np.zeros(3 + n_ext, int)]
    y = np.r_[np.full(3, 1.0), np.full(3, 0.7), np.full(n_ext, ext_time)]
    return Dataset(np.array([f"s{i}" for i in range(n)]), y, np.ones(n, int), a, r, np.zeros((n, 0)))


def _random_datasets(count=10):
    for k in range(count):
        setting = 1 + k % 5
        yield simulate(SimulationConfig(setting=setting, n_trial=160 + 20 * k, n_external=150,
                                        n_treated=80 + 10 * k, seed=100 + k))


class TestFolds:
    def test_balanced_within_cells(self, small_ds):
        plan = make_fold_plan(small_ds, 3, seed=4)
        for r, a in ((1, 1), (1, 0), (0, 0)):
            counts = np.bincount(plan.folds[small_ds.cell(r, a)], minlength=3)
            assert counts.max() - counts.min() <= 1

    def test_trial_folds_ignore_externals(self, small_ds):
        full = make_fold_plan(small_ds, seed=9).folds[small_ds.r == 1]
        trial = make_fold_plan(small_ds.trial_only(), seed=9).folds
        np.testing.assert_array_equal(full, trial)

    @pytest.mark.parametrize("mode, evaluated", [("swap", [0, 1]), ("single", [0])])
    def test_modes(self, small_ds, mode, evaluated):
        assert make_fold_plan(small_ds, 2, mode).evaluated == evaluated

    def test_infeasible_fold_hint(self):
        ds = _tiny(n_ext=3)
        ds = ds.subset(np.array([0, 1, 2, 3, 6, 7, 8]))  # one trial control
        with pytest.raises(FoldError, match="single-split"):
            run_pipeline(ds, NO_BOOT)


class TestOptions:
    @pytest.mark.parametrize("kw", [{"mode": "triple"}, {"n_folds": 1}, {"penalty": "ridge"},
                                    {"force_selection": "some"}, {"tau": 0.0}, {"level": 1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            EstimatorOptions(**kw)

    def test_unknown_kind(self, small_ds):
        with pytest.raises(ValueError):
            run_pipeline(small_ds, NO_BOOT, kinds=("aipw", "psrwe"))

    def test_needs_both_arms(self, small_ds):
        with pytest.raises(ContractError):
            run_pipeline(small_ds.subset(small_ds.a == 0), NO_BOOT)

    def test_borrowing_needs_externals(self, small_ds):
        with pytest.raises(ContractError):
            run_pipeline(small_ds.trial_only(), NO_BOOT, kinds=("acw",))


class TestPointEstimates:
    def test_degenerate_hand_value(self):
        # RMST to 2 of a point mass at 1.0 minus one at 0.7
        rep = estimate(_tiny(), "aipw", NO_BOOT)
        assert rep.theta_hat == pytest.approx(0.3, abs=1e-12)

    def test_trial_only_invariance(self, small_ds):
        with_ext = estimate(small_ds, "aipw", NO_BOOT, seed=3)
        without = estimate(small_ds.trial_only(), "aipw", NO_BOOT, seed=3)
        assert abs(with_ext.theta_hat - without.theta_hat) <= 1e-12
        assert with_ext.n_external == small_ds.n_external and with_ext.n_borrowed == 0

    @pytest.mark.parametrize("mode", ["swap", "single"])
    def test_reassembly(self, small_ds, mode):
        """Average of per-subject influence values rebuilt from the full-matrix formulas."""
        ds = small_ds
        opts = replace(NO_BOOT, mode=mode)
        plan = make_fold_plan(ds, 2, mode, seed=8)
        nuis = fit_nuisances(ds, plan.folds)
        grid = TimeGrid.from_times(ds.y, 2.0)
        t = grid.left_points
        rows = np.concatenate([np.flatnonzero(plan.folds == k) for k in plan.evaluated])
        p_r1 = ds.r[rows].mean()
        acc = {"aipw": [], "acw": []}
        for k in plan.evaluated:
            idx = np.flatnonzero(plan.folds == k)
            nu = nuis[k]
            x, r, a = ds.x[idx], ds.r[idx], ds.a[idx]
            m1, m0 = np.zeros((len(idx), len(t))), np.zeros((len(idx), len(t)))
            xc = np.column_stack([x, a])
            for sel, surv, cens, design, out in (
                    ((r == 1) & (a == 1), nu.survival[(1, 1)], nu.censoring[1], xc, m1),
                    ((r == 1) & (a == 0), nu.survival[(0, 1)], nu.censoring[1], xc, m0),
                    (r == 0, nu.survival[(0, 0)], nu.censoring[0], x, m0)):
                out[sel] = aipcw_matrix(cens, design[sel], x[sel], ds.y[idx][sel], ds.delta[idx][sel],
                                        t, surv)[0]
            s1 = nu.survival[(1, 1)].survival(x, t)
            s0 = nu.survival[(0, 1)].survival(x, t)
            vr = variance_ratio(s0, nu.survival[(0, 0)].survival(x, t))
            pi_a = clamp(nu.pi_a.predict(x))[:, None]
            pi_r = clamp(nu.pi_r.predict(x))[:, None]
            rr, aa = r[:, None], a[:, None]
            one = left_riemann(phi_s1(rr, aa, m1, s1, pi_a, p_r1), grid)
            acc["aipw"].append(one - left_riemann(phi_s0_trial_only(rr, aa, m0, s0, pi_a, p_r1), grid))
            acc["acw"].append(one - left_riemann(
                phi_s0_full(rr, aa, m0, s0, vr, pi_a, pi_r / (1 - pi_r), p_r1), grid))
        res = run_pipeline(ds, opts, seed=8, kinds=("aipw", "acw"))
        for kind, parts in acc.items():
            assert res.theta[kind] == pytest.approx(np.concatenate(parts).mean(), abs=1e-10)

    def test_reductions(self):
        for ds in _random_datasets():
            base = run_pipeline(ds, NO_BOOT, seed=1, kinds=("aipw", "acw"))
            full = run_pipeline(ds, replace(NO_BOOT, force_selection="all"), seed=1, kinds=("adapt",))
            none = run_pipeline(ds, replace(NO_BOOT, force_selection="none"), seed=1, kinds=("adapt",))
            assert abs(full.theta["adapt"] - base.theta["acw"]) <= 1e-10
            assert abs(none.theta["adapt"] - base.theta["aipw"]) <= 1e-10
            assert full.n_borrowed == ds.n_external and none.n_borrowed == 0

    def test_fixed_lambda_extremes(self, small_ds):
        acw = run_pipeline(small_ds, NO_BOOT, kinds=("acw",)).theta["acw"]
        big = run_pipeline(small_ds, replace(NO_BOOT, lam=1e12), kinds=("adapt",))
        assert big.n_borrowed == small_ds.n_external
        assert big.theta["adapt"] == pytest.approx(acw, abs=1e-10)

    def test_deterministic(self, small_ds):
        opts = replace(NO_BOOT, n_boot=3)
        a = {k: r.to_json() for k, r in estimate_all(small_ds, opts, seed=5).items()}
        b = {k: r.to_json() for k, r in estimate_all(small_ds, opts, seed=5).items()}
        assert a == b

    def test_seed_matters(self, small_ds):
        a = run_pipeline(small_ds, NO_BOOT, seed=1).theta
        b = run_pipeline(small_ds, NO_BOOT, seed=2).theta
        assert a != b


class TestBootstrap:
    def test_resample_keeps_cells(self, small_ds):
        boot = resample(small_ds, seed=1, replicate=0)
        for r, a in ((1, 1), (1, 0), (0, 0)):
            assert len(boot.cell(r, a)) == len(small_ds.cell(r, a))
        assert len(set(boot.ids)) == len(boot)
        assert set(i.split("#")[0] for i in boot.ids) <= set(small_ds.ids)

    def test_two_draws_deterministic(self, small_ds):
        first = bootstrap(small_ds, "adapt", n_boot=2, seed=11)
        assert first == bootstrap(small_ds, "adapt", n_boot=2, seed=11)
        se, (lo, hi) = first
        assert se >= 0 and lo <= hi

    def test_identical_rows(self):
        reports = estimate_all(_tiny(n_ext=4), replace(NO_BOOT, n_boot=4))
        assert all(r.se == 0.0 for r in reports.values())

    def test_too_few_draws(self, small_ds):
        with pytest.raises(ValueError):
            bootstrap_estimates(small_ds, NO_BOOT, 0, 1)

    def test_wald(self):
        lo, hi = wald(1.0, 0.5)
        assert (lo, hi) == pytest.approx((1 - 1.959963984540054 * 0.5, 1 + 1.959963984540054 * 0.5))

    def test_lambda_fixed_by_default(self, small_ds, monkeypatch):
        import rmstborrow.estimator as est
        seen = []
        real = est.run_pipeline

        def spy(ds, options, seed, kinds, lam=None):
            seen.append(lam)
            return real(ds, options, seed, kinds, lam)

        monkeypatch.setattr(est, "run_pipeline", spy)
        est.bootstrap(small_ds, "adapt", n_boot=2)
        assert seen[0] is None and seen[1] == seen[2] == pytest.approx(seen[1]) and seen[1] is not None
        seen.clear()
        est.bootstrap(small_ds, "adapt", n_boot=2, options=EstimatorOptions(refit_lambda=True))
        assert seen == [None, None, None]


class TestReport:
    def test_fields(self, small_ds):
        rep = estimate(small_ds, "adapt", replace(NO_BOOT, n_boot=2), seed=7)
        d = json.loads(rep.to_json())
        assert list(d) == ["kind", "theta_hat", "se", "ci", "tau", "n_trial", "n_external",
                           "n_borrowed", "lambda", "seed"]
        assert d["ci"][0] <= d["theta_hat"] <= d["ci"][1]
        assert 0 <= d["n_borrowed"] <= d["n_external"]
        assert d["lambda"] > 0 and d["seed"] == 7

    def test_lambda_only_for_adapt(self, small_ds):
        reports = estimate_all(small_ds, NO_BOOT)
        assert reports["aipw"].lam is None and reports["acw"].lam is None
        assert reports["aipw"].se is None and reports["aipw"].ci is None


def _replicate(setting, n_trial, n_external, kinds, reps=200, **opts):
    cfg = SimulationConfig(setting=setting, n_trial=n_trial, n_external=n_external, n_treated=n_trial // 2)
    est = {k: [] for k in kinds}
    borrow = []
    for rep in range(reps):
        res = run_pipeline(simulate(cfg.with_seed(5000 + rep)), replace(NO_BOOT, **opts), rep, kinds)
        for k in kinds:
            est[k].append(res.theta[k])
        borrow.append(res.n_borrowed / n_external)
    truth = true_theta(cfg)
    return {k: np.array(v) - truth for k, v in est.items()}, float(np.mean(borrow))


def _rmse(err):
    return float(np.sqrt(np.mean(err) ** 2 + np.var(err)))


@pytest.mark.slow
class TestMonteCarlo:
    def test_aipw_consistent(self):
        err, _ = _replicate(1, 2000, 500, ("aipw",))
        assert abs(err["aipw"].mean()) <= 0.02

    def test_acw_setting1(self):
        err, _ = _replicate(1, 1000, 500, ("aipw", "acw"))
        assert abs(err["acw"].mean()) <= 0.02
        assert _rmse(err["acw"]) <= _rmse(err["aipw"])

    def test_acw_biased_under_drift(self):
        err, _ = _replicate(2, 400, 500, ("aipw", "acw"))
        assert abs(err["acw"].mean()) > abs(err["aipw"].mean())

    def test_adapt_setting3_bias(self):
        err, _ = _replicate(3, 1000, 500, ("acw", "adapt"))
        assert abs(err["adapt"].mean()) <= abs(err["acw"].mean())

    @pytest.mark.xfail(strict=True, reason="selector borrows most drifted externals; see notes/decisions.md")
    def test_adapt_setting3_borrowing(self):
        _, frac = _replicate(3, 1000, 500, ("adapt",))
        assert 0.35 <= frac <= 0.65
