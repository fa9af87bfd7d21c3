"""Probability of study success on a synthetic trial with a harmful treatment.

A setting-1 dataset with a positive log hazard ratio stands in for a trial
whose RMST difference is negative; the trial control arm is subsampled and
each estimator's Wald upper bound is compared with the thresholds.

    python3 scripts/prss_demo.py --sizes 50,100,150 --repeats 50
"""
import argparse

from rmstborrow.benchmark import run_prss
from rmstborrow.nuisance.km import km_curve, logrank_test
from rmstborrow.simulation import SimulationConfig, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="50,100,150")
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--taus", default="1.5,2")
    ap.add_argument("--thresholds", default="0,-0.1")
    ap.add_argument("--log-hr", type=float, default=0.5)
    ap.add_argument("--n-boot", type=int, default=20)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    ds = simulate(SimulationConfig(setting=1, n_trial=400, n_external=500, n_treated=200,
                                   log_hr=args.log_hr, seed=args.seed))
    treated, control = ds.cell(1, 1), ds.cell(1, 0)
    chisq, pval = logrank_test((ds.y[treated], ds.delta[treated]), (ds.y[control], ds.delta[control]))
    print(f"# log-rank treated vs trial control: chi2 = {chisq:.2f}, p = {pval:.3g}")
    for name, rows in (("treated", treated), ("control", control), ("external", ds.cell(0, 0))):
        curve = km_curve(ds.y[rows], ds.delta[rows])
        print(f"# KM {name}: S(1) = {float(curve(1.0)):.3f}, S(2) = {float(curve(2.0)):.3f}")
    table = run_prss(ds, [int(s) for s in args.sizes.split(",")], args.repeats,
                     [float(t) for t in args.thresholds.split(",")],
                     [float(t) for t in args.taus.split(",")], seed=args.seed, n_boot=args.n_boot)
    print(table.to_csv(), end="")


if __name__ == "__main__":
    main()
