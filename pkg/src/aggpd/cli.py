"""Command line: ``run``, ``reproduce`` and ``certify``.

Exit codes: 0 success, 1 certificate failure, 2 divergence, 3 configuration error.
Log verbosity comes from ``AGGPD_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import analysis
from .experiment import ConfigError, build, load_config, reproduce, run_experiment, write_certificate_csv

EXIT_OK, EXIT_CERT, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("aggpd")


def _setup_logging():
    level = os.environ.get("AGGPD_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.output = args.out
        if not cfg.output:
            cfg.output = str(Path(args.config).with_suffix(".csv"))
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    tr = result.trace
    print(f"{tr.status} after {tr.iterations} iterations; rel_err={tr.column('rel_err')[-1]:.3e}; "
          f"trace -> {cfg.output}")
    if tr.status == "diverged":
        print(tr.error, file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_reproduce(args) -> int:
    summary = reproduce(args.scenario, args.out, parallel=args.parallel)
    for row in summary:
        hit = row["iterations_to_1e-3"]
        print(f"{row['scenario']} {row['run']:>12}: rho={row['rho']:.4f} "
              f"iterations to 1e-3 = {hit if hit is not None else 'not reached'} ({row['status']})")
    return EXIT_DIVERGED if any(r["status"] == "diverged" for r in summary) else EXIT_OK


def cmd_certify(args) -> int:
    try:
        setup = build(load_config(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FloatingPointError) as exc:
        print(f"constant estimation failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cert = analysis.certify_problem(setup.problem, setup.network, setup.steps, setup.constants)
    print(cert.report())
    for name, ok in cert.weights_psd.items():
        print(f"  weight {name} positive semidefinite: {ok}")
    if args.csv:
        write_certificate_csv(args.csv, cert)
    return EXIT_OK if cert.passed else EXIT_CERT


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggpd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configured experiment and write its trace CSV")
    p.add_argument("config")
    p.add_argument("--out", help="trace CSV path (overrides the config's output)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("reproduce", help="step-size (fig2) or topology (fig3) sweep")
    p.add_argument("scenario", choices=["fig2", "fig3"])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--parallel", action="store_true", help="run the scenario's runs concurrently")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("certify", help="evaluate the step-size certificate")
    p.add_argument("config")
    p.add_argument("--csv", help="also write the certificate as CSV")
    p.set_defaults(func=cmd_certify)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
