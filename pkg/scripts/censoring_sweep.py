"""Bias of the three estimators across censoring intensities (no bootstrap).

    python3 scripts/censoring_sweep.py --beta-c -2,0,1,2 --replications 200
"""
import argparse
import sys

from rmstborrow.benchmark import BenchmarkConfig, run_benchmark
from rmstborrow.simulation import SimulationConfig, simulate


def trial_censoring(setting, beta_c, seed):
    ds = simulate(SimulationConfig(setting=setting, beta_c=beta_c, n_trial=20_000, n_external=5000,
                                   n_treated=10_000, seed=seed))
    return 1 - ds.delta[ds.r == 1].mean()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--beta-c", default="-2,0,1")
    ap.add_argument("--settings", default="1,2,3")
    ap.add_argument("--replications", type=int, default=200)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--max-failure-rate", type=float, default=0.25)
    args = ap.parse_args()

    w = sys.stdout
    w.write("setting,beta_c,trial_censoring,failures,estimator,bias,se,rmse\n")
    for beta_c in (float(v) for v in args.beta_c.split(",")):
        for setting in (int(s) for s in args.settings.split(",")):
            cfg = BenchmarkConfig(base=SimulationConfig(setting=setting, beta_c=beta_c, seed=args.seed),
                                  replications=args.replications, n_boot=0,
                                  max_failure_rate=args.max_failure_rate)
            table = run_benchmark(cfg)
            cens = trial_censoring(setting, beta_c, args.seed)
            for row in table.rows:
                w.write(f"{setting},{beta_c:g},{cens:.3f},{table.failures},{row['estimator']},"
                        f"{row['bias']:.4f},{row['se']:.4f},{row['rmse']:.4f}\n")
            w.flush()


if __name__ == "__main__":
    main()
