"""Search a log-spaced step-size grid for settings the convergence certificate accepts.

With gamma = sqrt(alpha) and beta at half its admissible bound, the certificate is
evaluated for decreasing alpha; the first accepted point is reported. The reference
step sizes used in the experiments are certified too, for comparison.
"""

import argparse

import numpy as np

from aggpd.analysis import certify_problem, grid_certify
from aggpd.experiment import REPRO_PROBLEM, REPRO_RANDOM
from aggpd.problem import problem_from_config, quadratic_instance
from aggpd.solver import StepSizes
from aggpd.topology import network_from_config, random_network


def cases():
    yield "toy (N=3, complete graph)", quadratic_instance(3, 1, seed=0), random_network(3, 1.0, seed=0)
    ref = problem_from_config(REPRO_PROBLEM)
    yield "reference (N=60, random graph)", ref, network_from_config(REPRO_RANDOM, N=ref.N)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-exponent", type=float, default=12.0, help="smallest alpha tried is 10^-this")
    args = ap.parse_args()
    for name, P, net in cases():
        consts = P.closed_form_constants()
        print(f"== {name}: rho={net.rho:.5f}")
        steps, cert = grid_certify(P, net, consts, exponents=np.arange(0.5, args.max_exponent + 1e-9, 0.25))
        if steps is None:
            print("no grid point certified")
        else:
            print(f"certified at alpha={steps.alpha:.3e} beta={steps.beta:.3e} gamma={steps.gamma:.3e}")
            print(cert.report())
        for alpha in (0.09, 0.02):
            c = certify_problem(P, net, StepSizes(alpha, 0.4, 0.1), consts)
            print(f"-- reference steps alpha={alpha}: certified={c.passed} failures={c.failures}")


if __name__ == "__main__":
    main()
