"""Reproduce the step-size comparison (alpha = 0.09 vs 0.02) on the pinned random graph.

Writes one trace CSV per run plus fig2_summary.csv into --out.
"""

import argparse
import logging

from aggpd.experiment import reproduce


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/fig2")
    ap.add_argument("--parallel", action="store_true", help="run the scenarios in worker processes")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    for row in reproduce("fig2", args.out, parallel=args.parallel):
        print(f"{row['run']:>12}  rho={row['rho']:.4f}  iters_to_1e-3={row['iterations_to_1e-3']}  "
              f"final={row['final_rel_err']:.3e}  {row['status']}")


if __name__ == "__main__":
    main()
