"""Config-driven experiments, CSV traces and the two reproduction scenarios."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .oracle import build_fixed_point, solve_kkt_dual, solve_kkt_quadratic
from .problem import Constants, QuadraticInstance, estimate_constants, problem_from_config
from .solver import StepSizes, StopRule, run
from .topology import network_from_config

log = logging.getLogger(__name__)

ENGINES = ("vectorized", "agents", "threads")
THRESHOLD = 1e-3
# pinned draws for the reproduction scenarios
REPRO_PROBLEM = {"kind": "quadratic", "N": 60, "dim": 5, "seed": 0, "a_range": [1.0, 3.0], "b_range": [1.0, 2.0]}
REPRO_RANDOM = {"topology": "random", "N": 60, "edge_prob": 0.05, "seed": 2}
REPRO_HORIZON = {"fig2": 3000, "fig3": 6000}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: dict
    network: dict
    steps: dict
    x0: object = "zero"
    lambda0: object = "zero"
    v0: str = "consistent"
    max_iters: int = 3000
    stop: dict = field(default_factory=dict)
    trace_every: int = 1
    output: str | None = None
    seed: int = 0
    engine: str = "vectorized"
    workers: int = 4
    constants: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("problem", "network", "steps"):
            if not isinstance(d.get(key), dict):
                raise ConfigError(f"config section {key!r} missing or not an object")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        d = self.to_dict()
        for key in ("output", "engine", "workers"):
            d.pop(key)  # execution details; every engine produces bit-identical traces
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


@dataclass
class Setup:
    """Validated components of one experiment."""

    config: ExperimentConfig
    problem: object
    network: object
    steps: StepSizes
    constants: Constants
    x0: np.ndarray
    lam0: np.ndarray
    stop: StopRule


def _initial_point(rule, size, rng, what):
    if isinstance(rule, str):
        if rule == "zero":
            return np.zeros(size)
        raise ConfigError(f"unknown {what} rule {rule!r}")
    if isinstance(rule, dict):
        if rule.get("rule") != "uniform":
            raise ConfigError(f"unknown {what} rule {rule.get('rule')!r}")
        return rng.uniform(float(rule.get("low", 0.0)), float(rule.get("high", 1.0)), size=size)
    arr = np.asarray(rule, dtype=float).ravel()
    if arr.size != size:
        raise ConfigError(f"{what} has {arr.size} entries, expected {size}")
    return arr


def build(cfg: ExperimentConfig) -> Setup:
    """Construct and validate every component before anything runs."""
    try:
        problem = problem_from_config(cfg.problem)
        network = network_from_config(cfg.network, N=problem.N)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid problem/network: {exc}") from exc
    try:
        steps = StepSizes(float(cfg.steps["alpha"]), float(cfg.steps["beta"]), float(cfg.steps["gamma"]))
        steps.check_gamma(network)
    except KeyError as exc:
        raise ConfigError(f"steps missing {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.engine not in ENGINES:
        raise ConfigError(f"engine must be one of {ENGINES}")
    if cfg.v0 not in ("consistent", "zero"):
        raise ConfigError("v0 must be 'consistent' or 'zero'")
    if not (isinstance(cfg.max_iters, int) and cfg.max_iters >= 0):
        raise ConfigError("max_iters must be a nonnegative integer")
    if not (isinstance(cfg.trace_every, int) and cfg.trace_every >= 1):
        raise ConfigError("trace_every must be a positive integer")
    unknown = set(cfg.stop) - {"rel_err", "kkt"}
    if unknown:
        raise ConfigError(f"unknown stop keys {sorted(unknown)}")
    stop = StopRule(cfg.max_iters, cfg.stop.get("rel_err"), cfg.stop.get("kkt"))

    rng = np.random.default_rng(cfg.seed)
    x0 = _initial_point(cfg.x0, problem.d, rng, "x0")
    lam0 = _initial_point(cfg.lambda0, problem.N * problem.m, rng, "lambda0")
    if np.any(lam0 < 0):
        raise ConfigError("lambda0 must be nonnegative")

    constants = resolve_constants(cfg, problem)
    return Setup(cfg, problem, network, steps, constants, x0, lam0.reshape(problem.N, problem.m), stop)


def resolve_constants(cfg: ExperimentConfig, problem) -> Constants:
    if cfg.constants:
        try:
            return Constants(**{"method": "config", **cfg.constants})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid constants: {exc}") from exc
    return estimate_constants(problem)


def solve_reference(problem, constants):
    if isinstance(problem, QuadraticInstance) and problem.m <= 20:
        return solve_kkt_quadratic(problem)
    return solve_kkt_dual(problem, constants.nu)


@dataclass
class Result:
    setup: Setup
    trace: analysis.RunTrace
    kkt: object
    certificate: analysis.Certificate


def run_experiment(cfg: ExperimentConfig | dict, write: bool = True) -> Result:
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    setup = build(cfg)
    p, net, steps = setup.problem, setup.network, setup.steps
    kkt = solve_reference(p, setup.constants)
    fp = build_fixed_point(kkt, p, net, steps)
    cert = analysis.certify_problem(p, net, steps, setup.constants)
    executor = None
    engine = cfg.engine
    if engine == "threads":
        executor = ThreadPoolExecutor(max_workers=cfg.workers)
        engine = "agents"
    try:
        trace = run(p, net, steps, x0=setup.x0, lam0=setup.lam0, stop=setup.stop, fixed_point=fp,
                    constants=setup.constants, x_star=kkt.x, engine=engine, executor=executor,
                    v0=cfg.v0, twin=cfg.v0 == "consistent")
    finally:
        if executor is not None:
            executor.shutdown()
    trace.meta.update(config_hash=cfg.hash, seed=cfg.seed)
    result = Result(setup, trace, kkt, cert)
    if write and cfg.output:
        write_trace_csv(cfg.output, result)
    return result


# -- CSV ------------------------------------------------------------------------


def _fmt(val) -> str:
    if val is None:
        return ""
    if isinstance(val, (bool, np.bool_)):
        return str(bool(val)).lower()
    if isinstance(val, (float, np.floating)):
        return "nan" if math.isnan(val) else "%.17g" % val
    if isinstance(val, (list, tuple, np.ndarray)):
        return " ".join(_fmt(float(v)) for v in np.ravel(val))
    return str(val)


def header_lines(result: Result) -> list[str]:
    cfg, tr, cert = result.setup.config, result.trace, result.certificate
    meta = {
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "topology": tr.meta.get("topology"),
        "N": tr.meta.get("N"),
        "rho": tr.meta.get("rho"),
        "alpha": cfg.steps["alpha"],
        "beta": cfg.steps["beta"],
        "gamma": cfg.steps["gamma"],
        "v0": cfg.v0,
        "status": tr.status,
        "iterations": tr.iterations,
        "error": tr.error,
        "constants_method": cert.constants.method,
    }
    meta.update({f"cert_{k}": v for k, v in cert.as_dict().items()})
    margins = tr.column("margin_min")
    meta["margin_min_overall"] = float(np.nanmin(margins)) if np.any(np.isfinite(margins)) else math.nan
    meta["x_star"] = result.kkt.x
    meta["lambda_star"] = result.kkt.lam
    return [f"# {k}={_fmt(v)}" for k, v in meta.items()]


def trace_rows(trace: analysis.RunTrace, every: int):
    cols = analysis.CSV_COLUMNS
    for j, k in enumerate(trace.rows["k"]):
        if k >= 1 and k % every == 0:
            yield [int(k)] + [trace.rows[c][j] for c in cols[1:]]


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace_csv(path, result: Result):
    lines = header_lines(result)
    lines.append(",".join(analysis.CSV_COLUMNS))
    for row in trace_rows(result.trace, result.setup.config.trace_every):
        lines.append(",".join([str(row[0])] + [_fmt(float(v)) for v in row[1:]]))
    atomic_write(path, "\n".join(lines) + "\n")


def write_certificate_csv(path, cert: analysis.Certificate):
    lines = ["name,lhs,rhs,passed"]
    for c in cert.checks:
        lines.append(f"\"{c.name}\",{_fmt(c.lhs)},{_fmt(c.rhs)},{_fmt(c.passed)}")
    for k, v in cert.as_dict().items():
        lines.append(f"{k},{_fmt(v)},,")
    atomic_write(path, "\n".join(lines) + "\n")


# -- reproduction ---------------------------------------------------------------


def scenario_configs(scenario: str) -> dict[str, ExperimentConfig]:
    horizon = REPRO_HORIZON.get(scenario)
    if scenario == "fig2":
        runs = {f"alpha_{a}": (REPRO_RANDOM, a) for a in (0.09, 0.02)}
    elif scenario == "fig3":
        runs = {"exponential": ({"topology": "exponential", "N": 60}, 0.09),
                "random": (REPRO_RANDOM, 0.09),
                "ring": ({"topology": "ring", "N": 60}, 0.09)}
    else:
        raise ConfigError(f"unknown scenario {scenario!r} (expected fig2 or fig3)")
    return {name: ExperimentConfig(problem=dict(REPRO_PROBLEM), network=dict(net),
                                   steps={"alpha": a, "beta": 0.4, "gamma": 0.1},
                                   max_iters=horizon, seed=0)
            for name, (net, a) in runs.items()}


def reproduce(scenario: str, out_dir, parallel: bool = False) -> list[dict]:
    """Run a scenario, write one trace CSV per run and a summary CSV; return the summary rows."""
    out_dir = Path(out_dir)
    configs = scenario_configs(scenario)
    for name, cfg in configs.items():
        cfg.output = str(out_dir / f"{scenario}_{name}.csv")

    def one(item):
        name, cfg = item
        log.info("running %s/%s", scenario, name)
        return name, run_experiment(cfg)

    if parallel:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(one, configs.items()))
    else:
        results = [one(item) for item in configs.items()]

    summary = []
    for name, res in results:
        err = res.trace.column("rel_err")
        hit = analysis.iterations_to(err, THRESHOLD)
        summary.append({"scenario": scenario, "run": name, "topology": res.setup.network.label,
                        "alpha": res.setup.steps.alpha, "rho": res.setup.network.rho,
                        "iterations_to_1e-3": hit, "final_rel_err": float(err[-1]),
                        "status": res.trace.status})
    keys = list(summary[0])
    lines = [",".join(keys)] + [",".join(_fmt(row[k]) for k in keys) for row in summary]
    atomic_write(out_dir / f"{scenario}_summary.csv", "\n".join(lines) + "\n")
    return summary
