"""Per-iteration behaviour of the alternating design on one desk drop.

    python3 scripts/convergence.py --drop 0
"""

import argparse

import numpy as np

from riscf import config, scenario
from riscf.algorithms import ao_solve, audit
from riscf.config import AlgoOptions
from riscf.subproblems import Problem


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drop", type=int, default=0)
    p.add_argument("--trace", help="write the full trace as TSV here")
    args = p.parse_args()

    cfg, opts = config.preset("desk"), AlgoOptions()
    d = scenario.make_drop(cfg, args.seed, args.drop)
    N = cfg.n_aps
    prob = Problem.from_csi(d.csi, np.full(N, cfg.max_power), np.full(N, cfg.backhaul_cap))
    sol = ao_solve(prob, opts, scenario.drop_rng(args.seed, args.drop, "init"))

    for r in sol.trace.rows:
        extra = f" slack={r['slack']:.2e} rho={r['rho']:g}" if "pccp" in r["stage"] else ""
        print(f"{r['stage']:>11s} ao={r['ao_iter']:<2d} it={r['iter']:<2d} "
              f"obj={cfg.to_mbps(r['objective']):9.3f} Mbps{extra}")
    rep = audit(sol.W, sol.v, sol.sinr_target, d.csi, d.csi, cfg.max_power, cfg.backhaul_cap)
    print(f"\nstatus={sol.status} committed={cfg.to_mbps(sol.objective):.3f} Mbps audit_ok={rep.ok}")
    print("clusters: " + "  ".join(f"AP{n}:{sorted(s)}" for n, s in enumerate(sol.clusters.served)))
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(sol.trace.dumps(timing=True))


if __name__ == "__main__":
    main()
