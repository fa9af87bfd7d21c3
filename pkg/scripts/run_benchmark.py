"""Desk-scale simulation study for settings 1-5.

Writes one metrics CSV per setting into ``--out-dir``::

    python3 scripts/run_benchmark.py --settings 1,2,3 --replications 200 --out-dir results
"""
import argparse
import logging
import time
from pathlib import Path

from rmstborrow.benchmark import BenchmarkConfig, run_benchmark
from rmstborrow.simulation import SimulationConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--settings", default="1,2,3")
    ap.add_argument("--replications", type=int, default=200)
    ap.add_argument("--n-boot", type=int, default=50)
    ap.add_argument("--n0", default="200", help="comma-separated trial control sizes")
    ap.add_argument("--beta-c", type=float, default=1.0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out-dir", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n0 = tuple(int(v) for v in args.n0.split(","))
    for setting in (int(s) for s in args.settings.split(",")):
        started = time.time()
        cfg = BenchmarkConfig(base=SimulationConfig(setting=setting, beta_c=args.beta_c, seed=args.seed),
                              replications=args.replications, n0_grid=n0, n_boot=args.n_boot,
                              threads=args.threads)
        table = run_benchmark(cfg)
        path = out / f"setting{setting}_bc{args.beta_c:g}.csv"
        path.write_text(table.to_csv())
        logging.info("setting %d done in %.0fs (%d failed replications) -> %s",
                     setting, time.time() - started, table.failures, path)
        print(table.to_csv(), end="")


if __name__ == "__main__":
    main()
