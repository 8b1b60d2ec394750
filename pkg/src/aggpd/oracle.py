"""Centralized ground truth: KKT points, residuals and the iteration's fixed point."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import root

from .problem import AggregativeProblem, QuadraticInstance
from .solver import StepSizes
from .topology import MixingNetwork

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class KKTResiduals:
    stationarity: float
    primal: float
    complementarity: float
    dual_feasibility: float

    @property
    def max(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity, self.dual_feasibility)


@dataclass(frozen=True)
class KKTPoint:
    x: np.ndarray
    lam: np.ndarray
    active_set: tuple
    residuals: KKTResiduals
    method: str = "active-set"

    @property
    def primal_residual(self):
        return self.residuals.primal

    @property
    def stationarity_residual(self):
        return self.residuals.stationarity

    @property
    def complementarity_residual(self):
        return self.residuals.complementarity


@dataclass(frozen=True)
class FixedPoint:
    """Stacked fixed point; ``z, mu, v, y, lam`` are ``(N, .)`` arrays."""

    x: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    y_residual: float

    def blocks(self) -> dict:
        return {"x": self.x, "z": self.z, "mu": self.mu, "v": self.v, "y": self.y, "lam": self.lam}


def kkt_residuals(problem: AggregativeProblem, x, lam) -> KKTResiduals:
    """Residuals of stationarity (chain rule through the aggregate), feasibility and slackness."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float).reshape(problem.m)
    g = problem.total_gradient(x) + problem.constraint_T(np.tile(lam, (problem.N, 1)))
    slack = problem.constraint(x).sum(axis=0) - problem.b_total
    return KKTResiduals(
        stationarity=float(np.linalg.norm(g)),
        primal=float(np.linalg.norm(np.maximum(slack, 0.0))),
        complementarity=float(abs(lam @ slack)),
        dual_feasibility=float(np.linalg.norm(np.minimum(lam, 0.0))),
    )


def active_set_qp(H, g, A, b, feas_tol: float = 1e-9):
    """Minimize ``x^T H x / 2 + g^T x`` s.t. ``A x <= b`` by enumerating active sets.

    Returns ``(x, lam, active)`` for the lexicographically smallest (by sorted
    index tuple, smaller sets first) active set whose equality-constrained KKT
    solution is primal and dual feasible.
    """
    m, d = A.shape
    for size in range(m + 1):
        for S in itertools.combinations(range(m), size):
            S = list(S)
            K = np.zeros((d + size, d + size))
            K[:d, :d] = H
            K[:d, d:] = A[S].T
            K[d:, :d] = A[S]
            rhs = np.concatenate([-g, b[S]])
            cond = np.linalg.cond(K)
            if not np.isfinite(cond) or cond > 1e15:
                continue  # singular: the active rows are linearly dependent
            if cond > 1e12:
                warnings.warn(f"ill-conditioned KKT system for active set {S} (cond {cond:.2e})")
            sol = np.linalg.solve(K, rhs)
            x, mu = sol[:d], sol[d:]
            if np.any(mu < -feas_tol):
                continue
            inactive = [j for j in range(m) if j not in S]
            if inactive and np.any(A[inactive] @ x - b[inactive] > feas_tol * max(1.0, np.abs(b).max())):
                continue
            lam = np.zeros(m)
            lam[S] = np.maximum(mu, 0.0)
            return x, lam, tuple(S)
    raise OracleError("no feasible active set found")


def solve_kkt_quadratic(instance: QuadraticInstance) -> KKTPoint:
    if instance.m > 20:
        raise OracleError(f"active-set enumeration over 2^{instance.m} sets is not supported")
    x, lam, active = active_set_qp(instance.hessian(), instance.linear_term(),
                                   instance.A_full, instance.b_total)
    return KKTPoint(x, lam, active, kkt_residuals(instance, x, lam), method="active-set")


def solve_kkt_dual(problem: AggregativeProblem, nu: float, x0=None, tol: float = 1e-11,
                   max_outer: int = 100_000) -> KKTPoint:
    """Projected gradient ascent on the dual function.

    For a ``nu``-strongly convex objective the dual is ``||A||^2/nu``-smooth,
    so the fixed step ``nu/||A||^2`` converges.  Each dual step solves
    ``grad_x L(x, lam) = 0`` with a quasi-Newton root finder warm-started at
    the previous primal point.  Only gradient oracles are used.
    """
    A = problem.A_full
    b = problem.b_total
    step = nu / np.linalg.norm(A, 2) ** 2
    lam = np.zeros(problem.m)
    x = np.zeros(problem.d) if x0 is None else np.array(x0, dtype=float)

    def lagrangian_grad(xx, ll):
        return problem.total_gradient(xx) + problem.constraint_T(np.tile(ll, (problem.N, 1)))

    for _ in range(max_outer):
        sol = root(lagrangian_grad, x, args=(lam,), method="hybr", options={"xtol": 1e-14})
        x = sol.x
        if np.linalg.norm(lagrangian_grad(x, lam)) > 1e-9 * max(1.0, np.linalg.norm(x)):
            raise OracleError(f"inner minimization failed: {sol.message}")
        lam_new = np.maximum(lam + step * (A @ x - b), 0.0)
        moved = np.linalg.norm(lam_new - lam)
        lam = lam_new
        if moved <= tol * step:
            break
    else:
        raise OracleError("dual projected gradient did not converge")
    x = root(lagrangian_grad, x, args=(lam,), method="hybr", options={"xtol": 1e-14}).x
    active = tuple(int(j) for j in np.flatnonzero(lam > 0))
    return KKTPoint(x, lam, active, kkt_residuals(problem, x, lam), method="dual-projected-gradient")


def build_fixed_point(kkt: KKTPoint, problem: AggregativeProblem, network: MixingNetwork,
                      steps: StepSizes, tol: float = 1e-8) -> FixedPoint:
    """Fixed point of the stacked iteration from a KKT pair.

    ``y`` is the minimum-norm solution of
    ``B y = v - lam - beta (Lambda x - b)``, which lies in range(B).
    """
    N, m = problem.N, problem.m
    x = np.array(kkt.x, dtype=float)
    lam_c = np.array(kkt.lam, dtype=float)
    phi = problem.phi(x)
    Z = np.tile(phi, (N, 1))
    mu = np.tile(problem.grad2(x, Z).mean(axis=0), (N, 1))
    lam = np.tile(lam_c, (N, 1))
    v_c = lam_c + steps.beta / N * (problem.constraint(x).sum(axis=0) - problem.b_total)
    v = np.tile(v_c, (N, 1))
    r = v - lam - steps.beta * (problem.constraint(x) - problem.b)
    B = network.B
    y = np.linalg.lstsq(B, r, rcond=1e-10)[0]
    resid = float(np.max(np.abs(B @ y - r))) if r.size else 0.0
    if resid > tol:
        raise OracleError(f"no y* with B y* = v* - lam* - beta(Lambda x* - b): residual {resid:.3e}")
    return FixedPoint(x, Z, mu, v, y, lam, resid)
