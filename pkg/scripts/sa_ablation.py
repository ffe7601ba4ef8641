"""Target-segment flow-matching loss with and without semantic anchoring, per seed."""

import argparse

import numpy as np

from sama.experiments import sa_convergence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()
    rows = sa_convergence(args.pairs, args.steps, tuple(args.seeds))
    print("seed  probe_sa  probe_no_sa  log_sa  log_no_sa")
    for r in rows:
        print(f"{r.seed:4d}  {r.with_sa:8.4f}  {r.without_sa:11.4f}  {r.logged_with_sa:6.4f}  {r.logged_without_sa:9.4f}")
    wins = sum(r.with_sa <= r.without_sa for r in rows)
    print(f"median {np.median([r.with_sa for r in rows]):.4f} vs {np.median([r.without_sa for r in rows]):.4f}; "
          f"SA no worse on {wins}/{len(rows)} seeds")


if __name__ == "__main__":
    main()
