"""Reproduce the topology comparison (exponential, random, ring) at alpha = 0.09.

Writes one trace CSV per run plus fig3_summary.csv into --out.
"""

import argparse
import logging

from aggpd.experiment import reproduce


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/fig3")
    ap.add_argument("--parallel", action="store_true", help="run the scenarios in worker processes")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    for row in reproduce("fig3", args.out, parallel=args.parallel):
        print(f"{row['run']:>12}  rho={row['rho']:.4f}  iters_to_1e-3={row['iterations_to_1e-3']}  "
              f"final={row['final_rel_err']:.3e}  {row['status']}")


if __name__ == "__main__":
    main()
