"""Run every parameter sweep on the desk configuration and print the averaged table.

    python3 scripts/run_sweeps.py --drops 10 --out results
    python3 scripts/run_sweeps.py --only delta_c backhaul --schemes all
"""

import argparse
import time

from riscf.baselines import SCHEMES
from riscf.config import AlgoOptions, load_config, preset
from riscf.experiment import KINDS, ExperimentSpec, averages, emit, run_experiment

SWEEPS = [k for k in KINDS if k != "convergence"]


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--config")
    p.add_argument("--drops", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="results")
    p.add_argument("--only", nargs="*", default=SWEEPS, choices=SWEEPS)
    p.add_argument("--schemes", default="proposed,nonrobust,randphase")
    args = p.parse_args()

    cfg, opts = load_config(args.config) if args.config else (preset("desk"), AlgoOptions())
    schemes = tuple(SCHEMES) if args.schemes == "all" else tuple(args.schemes.split(","))
    for kind in args.only:
        spec = ExperimentSpec(kind, schemes=schemes, n_drops=args.drops, seed=args.seed,
                              threads=args.threads)
        t0 = time.perf_counter()
        rows = run_experiment(spec, cfg, opts)
        emit(rows, spec, cfg, opts, args.out)
        avg = averages(rows)
        print(f"\n{kind} ({time.perf_counter() - t0:.0f} s, {sum(not r.feasible for r in rows)} infeasible rows)")
        print(f"{spec.grid_param:>14s} " + " ".join(f"{s:>12s}" for s in schemes))
        for g in spec.grid:
            print(f"{g:>14} " + " ".join(f"{avg[(s, g)]:12.2f}" for s in schemes))


if __name__ == "__main__":
    main()
