"""Diagnostics and theory checks for the primal-dual iteration.

* :func:`certify` evaluates the step-size conditions that guarantee linear
  contraction of the Lyapunov value and returns the rate bound ``tau``.
* :func:`lyapunov` evaluates that Lyapunov value on stacked iterates.
* :func:`recursion_margins` evaluates the four one-step error recursions
  (primal error, dual/auxiliary error, aggregate-tracker and gradient-tracker
  consensus errors) as ``RHS - LHS``.
* :func:`fit_rate` fits a geometric rate to a positive sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problem import AggregativeProblem, Constants
from .topology import MixingNetwork

SLACK = 1e-9
NOISE_FLOOR = 1e-12


class IndefiniteWeightError(ValueError):
    """A Lyapunov weighting matrix is not positive semidefinite."""


def consensus_error(X) -> float:
    X = np.asarray(X)
    return float(np.linalg.norm(X - X.mean(axis=0)))


def lambda_spectra(problem: AggregativeProblem) -> tuple[float, float]:
    """``(lambda_min(Lambda Lambda^T), lambda_max(Lambda^T Lambda))`` from the diagonal blocks."""
    lo = min(np.linalg.eigvalsh(Ai @ Ai.T)[0] for Ai in problem.A)
    hi = max(np.linalg.eigvalsh(Ai.T @ Ai)[-1] for Ai in problem.A)
    return float(lo), float(hi)


# -- certificate ----------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    lhs: float
    rhs: float
    passed: bool


@dataclass(frozen=True)
class Certificate:
    constants: Constants
    rho: float
    sigma_min_sq: float
    lambda_max_sq: float
    lam_min_LLt: float
    lam_max_LtL: float
    alpha: float
    beta: float
    gamma: float
    c1: float
    kappa: float
    kappa1: float
    kappa2: float
    beta_bound: float
    gamma_bound: float
    tau: float
    checks: tuple
    weights_psd: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def as_dict(self) -> dict:
        keys = ("rho", "sigma_min_sq", "lambda_max_sq", "lam_min_LLt", "lam_max_LtL", "alpha", "beta",
                "gamma", "c1", "kappa", "kappa1", "kappa2", "beta_bound", "gamma_bound", "tau")
        out = {k: getattr(self, k) for k in keys}
        out.update(nu=self.constants.nu, L1=self.constants.L1, L2=self.constants.L2, L3=self.constants.L3,
                   certified=self.passed)
        return out

    def report(self) -> str:
        lines = [f"constants: nu={self.constants.nu:.6g} L1={self.constants.L1:.6g} "
                 f"L2={self.constants.L2:.6g} L3={self.constants.L3:.6g} ({self.constants.method})",
                 f"network: rho={self.rho:.6g} sigma_min^2(B)={self.sigma_min_sq:.6g} "
                 f"lambda_max^2(B)={self.lambda_max_sq:.6g}",
                 f"steps: alpha={self.alpha:.6g} beta={self.beta:.6g} gamma={self.gamma:.6g}"]
        for c in self.checks:
            lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.lhs:.6g} vs {c.rhs:.6g}")
        if self.c1 <= 0:
            lines.append("  c1 nonpositive: alpha/gamma too large")
        lines.append(f"tau = {self.tau:.10g}  certified = {self.passed}")
        return "\n".join(lines)


def certify(constants: Constants, rho: float, sigma_min_sq: float, lambda_max_sq: float,
            lam_min_LLt: float, lam_max_LtL: float, alpha: float, beta: float, gamma: float) -> Certificate:
    """Evaluate the step-size conditions; every inequality is reported with both sides."""
    nu, L1, L2, L3 = constants.nu, constants.L1, constants.L2, constants.L3
    a, b, g = alpha, beta, gamma
    q = (1 + rho ** 2) / (1 - rho ** 2)
    s3 = 1 + 2 * L3 ** 2
    c1 = 0.5 - 4 * L2 ** 2 * s3 * a / g
    kappa = 1 - a * (nu / 2 - 4 * a * L1 ** 2 * s3 * (1.5 + 4 * L2 ** 2 * s3 * a / g))
    # The printed expression has an unbalanced bracket; (3 alpha^2 + alpha/nu) is the
    # grouping that matches the aggregate-tracker recursion it is assembled from.
    kappa1 = ((1 + rho ** 2) / 2 + 16 * q * L1 ** 2 * L3 ** 2 * (3 * a ** 2 + a / nu)
              + 64 * L3 ** 2 * a / g * q * (2 * L1 ** 2 * L2 ** 2 * s3 * a ** 2 + L2 ** 2))
    kappa2 = ((1 + rho ** 2) / 2 + 8 * q * L2 ** 2 * L3 ** 2 * s3 * a ** 2
              + 2 * q * L3 ** 2 * (a + 2 / nu) * g + g * a * L3 ** 2 * q)
    dual_rate = 1 - a * b * c1 * lam_min_LLt
    # a nonpositive kappa, c1 or denominator makes the corresponding term vacuous
    beta_terms = [nu / (2 * kappa * lam_max_LtL) if kappa > 0 else math.inf,
                  1 / (a * c1 * lam_min_LLt) if c1 > 0 else math.inf]
    gamma_terms = [(2 - 2 * lambda_max_sq) / dual_rate if dual_rate > 0 else math.inf,
                   1 / sigma_min_sq]
    beta_bound, gamma_bound = min(beta_terms), min(gamma_terms)
    tau = max(kappa, kappa1, kappa2, dual_rate, 1 - g * sigma_min_sq)
    checks = (
        Check("c1 > 0", c1, 0.0, c1 > 0),
        Check("kappa < 1", kappa, 1.0, kappa < 1),
        Check("kappa1 < 1", kappa1, 1.0, kappa1 < 1),
        Check("kappa2 < 1", kappa2, 1.0, kappa2 < 1),
        Check("beta < min{nu/(2 kappa lmax(L^T L)), 1/(alpha c1 lmin(L L^T))}", b, beta_bound, b < beta_bound),
        Check("gamma < min{(2 - 2 lmax^2(B))/(1 - alpha beta c1 lmin(L L^T)), 1/sigma_min^2(B)}",
              g, gamma_bound, g < gamma_bound),
    )
    weights_psd = {
        "I - 2 alpha beta L^T L": 2 * a * b * lam_max_LtL <= 1,
        "I - gamma B^2": g * lambda_max_sq <= 1,
    }
    return Certificate(constants, rho, sigma_min_sq, lambda_max_sq, lam_min_LLt, lam_max_LtL,
                       a, b, g, c1, kappa, kappa1, kappa2, beta_bound, gamma_bound, tau, checks, weights_psd)


def certify_problem(problem: AggregativeProblem, network: MixingNetwork, steps, constants: Constants) -> Certificate:
    lo, hi = lambda_spectra(problem)
    return certify(constants, network.rho, network.sigma_min_sq, network.lambda_max_sq, lo, hi,
                   steps.alpha, steps.beta, steps.gamma)


def grid_certify(problem: AggregativeProblem, network: MixingNetwork, constants: Constants,
                 exponents=None):
    """Largest ``alpha = 10^-a`` on the grid with ``gamma = sqrt(alpha)`` and ``beta`` at half its bound.

    Returns ``(StepSizes, Certificate)`` or ``(None, None)`` if no grid point certifies.
    """
    from .solver import StepSizes

    lo, hi = lambda_spectra(problem)
    if exponents is None:
        exponents = np.arange(0.5, 12.01, 0.25)
    for e in exponents:
        alpha = 10.0 ** (-e)
        gamma = math.sqrt(alpha)
        # beta enters the bound only through the lambda-block rate; evaluate with a tiny beta first
        probe = certify(constants, network.rho, network.sigma_min_sq, network.lambda_max_sq, lo, hi,
                        alpha, 1e-12, gamma)
        if not math.isfinite(probe.beta_bound):
            continue
        beta = probe.beta_bound / 2
        cert = certify(constants, network.rho, network.sigma_min_sq, network.lambda_max_sq, lo, hi,
                       alpha, beta, gamma)
        if cert.passed and cert.weights_psd["I - 2 alpha beta L^T L"] and cert.weights_psd["I - gamma B^2"]:
            return StepSizes(alpha, beta, gamma), cert
    return None, None


# -- Lyapunov value -------------------------------------------------------------


def lyapunov_terms(x, z, mu, lam, y, fixed_point, problem: AggregativeProblem, network: MixingNetwork,
                   steps, constants: Constants, spectra=None) -> np.ndarray:
    """The five weighted error terms whose sum is the Lyapunov value."""
    a, b, g = steps.alpha, steps.beta, steps.gamma
    lo, hi = lambda_spectra(problem) if spectra is None else spectra
    if 2 * a * b * hi > 1 + 1e-15:
        raise IndefiniteWeightError(
            f"I - 2 alpha beta Lambda^T Lambda is indefinite (2*alpha*beta*lmax = {2 * a * b * hi:.4g} > 1); "
            "reduce alpha*beta")
    if g * network.lambda_max_sq > 1 + 1e-15:
        raise IndefiniteWeightError(
            f"I - gamma B^2 is indefinite (gamma*lambda_max^2(B) = {g * network.lambda_max_sq:.4g} > 1); "
            "gamma bound violated")
    rho2 = network.rho ** 2
    C = network.C
    xt = x - fixed_point.x
    lt = lam - fixed_point.lam
    yt = y - fixed_point.y
    t_x = xt @ xt - 2 * a * b * np.sum(problem.constraint(xt) ** 2)
    t_l = (a / b) * (np.sum(lt * lt) - g * np.sum(lt * (C @ lt)))
    t_y = a / (b * g) * np.sum(yt * yt)
    t_z = (1 - rho2) / (4 * constants.L3 ** 2 * (1 + rho2)) * consensus_error(z) ** 2
    t_mu = (1 - rho2) * a / ((1 + rho2) * g) * consensus_error(mu) ** 2
    return np.array([t_x, t_l, t_y, t_z, t_mu])


def lyapunov(state, fixed_point, problem, network, steps, constants, y=None) -> float:
    """Lyapunov value of a state; a distributed state needs ``y`` from its matrix-form twin."""
    if y is None:
        y = state.y
    return float(lyapunov_terms(state.x, state.z, state.mu, state.lam, y, fixed_point,
                                problem, network, steps, constants).sum())


# -- one-step error recursions ---------------------------------------------------


RECURSIONS = ("primal", "dual", "aggregate", "tracker")


def recursion_sides(prev, cur, fixed_point, problem: AggregativeProblem, network: MixingNetwork,
                    steps, constants: Constants) -> np.ndarray:
    """``(LHS, RHS)`` rows of the four recursions for the step ``prev -> cur`` (matrix-form states)."""
    a, b, g = steps.alpha, steps.beta, steps.gamma
    nu, L1, L2, L3 = constants.nu, constants.L1, constants.L2, constants.L3
    rho2 = network.rho ** 2
    q = (1 + rho2) / (1 - rho2)
    s3 = 1 + 2 * L3 ** 2
    C = network.C
    fp = fixed_point

    xt0, xt1 = prev.x - fp.x, cur.x - fp.x
    lt0, lt1 = prev.lam - fp.lam, cur.lam - fp.lam
    yt0, yt1 = prev.y - fp.y, cur.y - fp.y
    ez0, ez1 = consensus_error(prev.z) ** 2, consensus_error(cur.z) ** 2
    em0, em1 = consensus_error(prev.mu) ** 2, consensus_error(cur.mu) ** 2
    nx0 = xt0 @ xt0
    LT_l0 = np.sum(problem.constraint_T(lt0) ** 2)  # ||Lambda^T lam~_k||^2
    L_x1 = problem.constraint(xt1)  # Lambda x~_{k+1}
    cross = np.sum(lt0 * L_x1)  # lam~_k^T Lambda x~_{k+1}

    lhs_x = xt1 @ xt1
    rhs_x = ((1 - a * (nu / 2 - 4 * a * L1 ** 2 * s3)) * nx0 - a * nu * nx0 - a ** 2 * LT_l0
             - 2 * a * cross + 4 * (2 * a ** 2 + a / nu) * L1 ** 2 * ez0
             + 2 * (a ** 2 + 2 * a / nu) * L3 ** 2 * em0)

    lhs_d = np.sum(lt1 * lt1) - g * np.sum(lt1 * (C @ lt1)) + np.sum(yt1 * yt1) / g
    Cl0 = C @ lt0
    rhs_d = (np.sum(lt0 * lt0) + 2 * np.sum(Cl0 * Cl0) + 2 * b ** 2 * np.sum(L_x1 ** 2)
             - 2 * np.sum(lt0 * Cl0) + 2 * b * cross - np.sum(yt0 * (C @ yt0)) + np.sum(yt0 * yt0) / g)

    lhs_z = ez1
    rhs_z = (((1 + rho2) / 2 + 16 * q * L1 ** 2 * L3 ** 2 * a ** 2) * ez0
             + 8 * q * L1 ** 2 * L3 ** 2 * s3 * a ** 2 * nx0 + 2 * q * L3 ** 2 * a ** 2 * LT_l0
             + 4 * q * L3 ** 4 * a ** 2 * em0)

    lhs_m = em1
    rhs_m = (((1 + rho2) / 2 + 8 * q * L2 ** 2 * L3 ** 2 * s3 * a ** 2) * em0
             + 16 * q * L1 ** 2 * L2 ** 2 * s3 ** 2 * a ** 2 * nx0
             + 16 * q * (2 * L1 ** 2 * L2 ** 2 * s3 * a ** 2 + L2 ** 2) * ez0
             + 4 * q * L2 ** 2 * s3 * a ** 2 * LT_l0)

    return np.array([[lhs_x, rhs_x], [lhs_d, rhs_d], [lhs_z, rhs_z], [lhs_m, rhs_m]])


def recursion_margins(prev, cur, fixed_point, problem, network, steps, constants) -> np.ndarray:
    sides = recursion_sides(prev, cur, fixed_point, problem, network, steps, constants)
    return sides[:, 1] - sides[:, 0]


@dataclass
class MarginReport:
    margins: np.ndarray  # (K, 4) RHS - LHS per transition
    relative: np.ndarray  # margins scaled by max(1, |RHS|, |LHS|)

    @property
    def min_per_recursion(self) -> dict:
        if not len(self.margins):
            return {name: math.inf for name in RECURSIONS}
        return dict(zip(RECURSIONS, self.margins.min(axis=0)))

    @property
    def min(self) -> float:
        return float(self.margins.min()) if len(self.margins) else math.inf

    def violations(self, slack: float = SLACK) -> list[tuple[int, str, float]]:
        out = []
        for k, row in enumerate(self.margins):
            for name, val in zip(RECURSIONS, row):
                if val < -slack:
                    out.append((k + 1, name, float(val)))
        return out


def check_error_recursions(states, fixed_point, problem, network, steps, constants) -> MarginReport:
    """Margins along a matrix-form trajectory ``states[0], states[1], ...``."""
    if network.N > 1 and not steps.gamma < 1 / network.sigma_min_sq:
        raise ValueError("the dual recursion requires gamma < 1/sigma_min^2(B)")
    rows, rel = [], []
    for prev, cur in zip(states[:-1], states[1:]):
        sides = recursion_sides(prev, cur, fixed_point, problem, network, steps, constants)
        m = sides[:, 1] - sides[:, 0]
        rows.append(m)
        rel.append(m / np.maximum(1.0, np.abs(sides).max(axis=1)))
    return MarginReport(np.array(rows).reshape(-1, 4), np.array(rel).reshape(-1, 4))


# -- rate fitting ---------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    tau_hat: float
    r2: float
    max_ratio: float
    n_points: int
    start: int
    flag: str = ""


def fit_rate(seq, tail_fraction: float = 0.5, floor: float = NOISE_FLOOR, min_points: int = 20) -> RateFit:
    """Least-squares slope of ``log seq`` over the tail of its above-floor prefix."""
    seq = np.asarray(seq, dtype=float)
    below = np.flatnonzero(~(seq > floor))
    flag = ""
    prefix = seq if below.size == 0 else seq[:below[0]]
    if below.size:
        flag = "noise-floor"
    n_tail = max(int(math.ceil(tail_fraction * prefix.size)), min(min_points, prefix.size))
    if prefix.size < min_points:
        flag = (flag + ",short").lstrip(",")
    if prefix.size < 2:
        return RateFit(math.nan, math.nan, math.nan, int(prefix.size), 0, (flag + ",empty").lstrip(","))
    start = prefix.size - n_tail
    tail = prefix[start:]
    k = np.arange(start, prefix.size, dtype=float)
    logs = np.log(tail)
    slope, icpt = np.polyfit(k, logs, 1)
    resid = logs - (slope * k + icpt)
    ss_tot = np.sum((logs - logs.mean()) ** 2)
    ss_res = np.sum(resid ** 2)
    r2 = 1.0 if ss_tot == 0 or ss_res <= 1e-30 * max(ss_tot, 1e-300) else 1.0 - ss_res / ss_tot
    ratios = tail[1:] / tail[:-1]
    return RateFit(float(np.exp(slope)), float(r2), float(ratios.max()), int(tail.size), int(start), flag)


def iterations_to(seq, threshold: float):
    """First index at which ``seq`` is at or below ``threshold`` (None if never)."""
    hit = np.flatnonzero(np.asarray(seq) <= threshold)
    return int(hit[0]) if hit.size else None


# -- traces ---------------------------------------------------------------------


CSV_COLUMNS = ("k", "rel_err", "eps", "cons_z", "cons_mu", "cons_lambda",
               "kkt_stat", "kkt_primal", "kkt_comp", "margin_min")
EXTRA_COLUMNS = ("margin_primal", "margin_dual", "margin_aggregate", "margin_tracker")


@dataclass
class RunTrace:
    rows: dict = field(default_factory=lambda: {c: [] for c in CSV_COLUMNS + EXTRA_COLUMNS})
    meta: dict = field(default_factory=dict)
    status: str = "running"
    error: str | None = None
    final_state: object = None
    final_matrix_state: object = None
    states: list = field(default_factory=list)
    matrix_states: list = field(default_factory=list)

    def append(self, row: dict):
        if self.rows["k"] and row["k"] <= self.rows["k"][-1]:
            raise ValueError("iteration counter must increase")
        for c in self.rows:
            self.rows[c].append(row.get(c, math.nan))

    def column(self, name) -> np.ndarray:
        return np.asarray(self.rows[name], dtype=float)

    def __len__(self):
        return len(self.rows["k"])

    @property
    def iterations(self) -> int:
        return int(self.rows["k"][-1]) if self.rows["k"] else 0


class Recorder:
    """Per-iteration diagnostics row for a distributed state and its matrix-form twin."""

    def __init__(self, problem, network, steps, fixed_point=None, constants=None, x_star=None):
        self.problem, self.network, self.steps = problem, network, steps
        self.fp, self.constants = fixed_point, constants
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=float)
        self.x_star_norm = None if x_star is None else float(np.linalg.norm(self.x_star))
        self.eps_error = None
        self.spectra = lambda_spectra(problem)
        if fixed_point is not None and constants is not None:
            try:
                lyapunov_terms(fixed_point.x, fixed_point.z, fixed_point.mu, fixed_point.lam, fixed_point.y,
                               fixed_point, problem, network, steps, constants, self.spectra)
            except IndefiniteWeightError as exc:
                self.eps_error = str(exc)

    def row(self, state, mstate, prev_m) -> dict:
        from .oracle import kkt_residuals

        p = self.problem
        lam_bar = state.lam.mean(axis=0)
        res = kkt_residuals(p, state.x, lam_bar)
        out = {
            "k": state.k,
            "rel_err": (float(np.linalg.norm(state.x - self.x_star) / self.x_star_norm)
                        if self.x_star is not None else math.nan),
            "cons_z": consensus_error(state.z),
            "cons_mu": consensus_error(state.mu),
            "cons_lambda": consensus_error(state.lam),
            "kkt_stat": res.stationarity,
            "kkt_primal": res.primal,
            "kkt_comp": res.complementarity,
        }
        ready = self.fp is not None and self.constants is not None and mstate is not None
        if ready and self.eps_error is None:
            out["eps"] = float(lyapunov_terms(state.x, state.z, state.mu, state.lam, mstate.y, self.fp,
                                              p, self.network, self.steps, self.constants, self.spectra).sum())
        if ready and prev_m is not None:
            m = recursion_margins(prev_m, mstate, self.fp, p, self.network, self.steps, self.constants)
            out["margin_min"] = float(m.min())
            out.update(dict(zip(EXTRA_COLUMNS, map(float, m))))
        return out

    @staticmethod
    def kkt_max(row) -> float:
        return max(row["kkt_stat"], row["kkt_primal"], row["kkt_comp"])
