"""Distributed aggregative primal-dual iteration.

Two algebraically equivalent forms are provided:

* :func:`step_distributed` -- the per-agent protocol.  Agent ``i`` keeps
  ``(x_i, z_i, mu_i, v_i, lambda_i)`` and a cache of ``lambda_j`` from the
  previous round; per round it receives ``{z_j, mu_j, v_j, lambda_j}`` from
  its neighbors and mixes them with the weights ``w_ij`` and ``c_ij``.
* :func:`step_matrix` -- the stacked form with the auxiliary ``y`` and the
  square root ``B`` of ``C = (I - W)/2``.  It is the test oracle for the
  distributed form and the carrier of the Lyapunov analysis.

The distributed dual update contains no ``b`` term: the constraint level
enters only through ``v_0``.  :func:`init` therefore defaults to
``v_{i,0} = beta (A_i x_{i,0} - b_i)``, which together with
``lambda_{i,-1} = 0`` makes the two forms coincide (``y_0 = -gamma B v_0``).
``v0="zero"`` keeps the all-zero start, whose limit satisfies
``A x <= A x_0`` instead of ``A x <= b``.
"""

from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace

import numpy as np

from .problem import AggregativeProblem, DimensionError
from .topology import MixingNetwork

log = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e12


class DivergenceError(FloatingPointError):
    def __init__(self, message, agent=None, variable=None, component=None, k=None):
        super().__init__(message)
        self.agent, self.variable, self.component, self.k = agent, variable, component, k


class FormMismatchError(ValueError):
    """The distributed start has no matrix-form counterpart."""


@dataclass(frozen=True)
class StepSizes:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"step size {name} must be a positive finite number, got {val}")

    def check_gamma(self, net: MixingNetwork):
        """Require ``gamma < 1 / sigma_min^2(B)`` (needed by the error recursions)."""
        if net.N < 2:
            raise ValueError("at least two agents are required (sigma_min(B) undefined for N = 1)")
        bound = 1.0 / net.sigma_min_sq
        if not self.gamma < bound:
            raise ValueError(
                f"gamma = {self.gamma} violates gamma < 1/sigma_min^2(B) = {bound:.6g}")


@dataclass
class SwarmState:
    """Agent variables; row ``i`` of each ``(N, .)`` array belongs to agent ``i``."""

    x: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    lam: np.ndarray
    lam_prev: np.ndarray
    k: int = 0

    def copy(self) -> "SwarmState":
        return SwarmState(self.x.copy(), self.z.copy(), self.mu.copy(), self.v.copy(),
                          self.lam.copy(), self.lam_prev.copy(), self.k)


@dataclass
class MatrixFormState:
    x: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    k: int = 0

    def copy(self) -> "MatrixFormState":
        return MatrixFormState(self.x.copy(), self.z.copy(), self.mu.copy(), self.v.copy(),
                               self.y.copy(), self.lam.copy(), self.k)

    def blocks(self) -> dict:
        return {"x": self.x, "z": self.z, "mu": self.mu, "v": self.v, "y": self.y, "lam": self.lam}


def init(problem: AggregativeProblem, network: MixingNetwork, steps: StepSizes,
         x0=None, lam0=None, v0: str = "consistent") -> SwarmState:
    """Initial agent state: ``z_{i,0} = h_i(x_{i,0})``, ``mu_{i,0} = grad2 f_i``, ``lambda_{i,-1} = 0``."""
    N, m = problem.N, problem.m
    if network.N != N:
        raise DimensionError(f"network has {network.N} agents, problem has {N}")
    x = np.zeros(problem.d) if x0 is None else np.array(x0, dtype=float).reshape(-1)
    if x.shape != (problem.d,):
        raise DimensionError(f"x0 has {x.size} entries, expected {problem.d}")
    lam = np.zeros((N, m)) if lam0 is None else np.array(lam0, dtype=float).reshape(N, m)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)) or not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite and lambda0 finite and nonnegative")
    z = problem.local_h(x)
    mu = problem.grad2(x, z)
    if v0 == "consistent":
        v = steps.beta * (problem.constraint(x) - problem.b)
    elif v0 == "zero":
        v = np.zeros((N, m))
    else:
        raise ValueError(f"unknown v0 rule {v0!r}")
    return SwarmState(x, z, mu, v, lam, np.zeros((N, m)), 0)


def matrix_twin(state: SwarmState, problem: AggregativeProblem, network: MixingNetwork,
                steps: StepSizes, B=None, tol: float = 1e-9) -> MatrixFormState:
    """Matrix-form state that reproduces the distributed trajectory from ``state``.

    Solves ``B y_prev = v_k - (I - C) lambda_{k-1} - beta (Lambda x_k - b)`` on
    range(B) and sets ``y_k = y_prev - gamma B v_k``.
    """
    B = network.B if B is None else B
    C = network.C
    r = state.v - (state.lam_prev - C @ state.lam_prev) - steps.beta * (problem.constraint(state.x) - problem.b)
    y_prev = np.linalg.lstsq(B, r, rcond=1e-10)[0]
    resid = np.max(np.abs(B @ y_prev - r)) if r.size else 0.0
    if resid > tol * max(1.0, np.max(np.abs(r))):
        raise FormMismatchError(
            f"distributed state has no matrix-form counterpart (residual {resid:.3e}); "
            "the summed v - lambda_prev - beta A x does not equal -beta b")
    y = y_prev - steps.gamma * (B @ state.v)
    return MatrixFormState(state.x.copy(), state.z.copy(), state.mu.copy(), state.v.copy(),
                           y, state.lam.copy(), state.k)


def _check(state, k):
    for name in ("x", "z", "mu", "v", "lam"):
        arr = getattr(state, name)
        bad = ~np.isfinite(arr) | (np.abs(arr) > DIVERGENCE_BOUND)
        if np.any(bad):
            flat = int(np.flatnonzero(bad.ravel())[0])
            if arr.ndim == 2:
                agent, comp = divmod(flat, arr.shape[1])
            else:
                agent, comp = flat, None
            raise DivergenceError(
                f"divergence detected at k={k}: {name} agent/component {agent}/{comp} = {arr.ravel()[flat]}",
                agent=agent, variable=name, component=comp, k=k)


def _agent_round(i, st: SwarmState, problem: AggregativeProblem, net: MixingNetwork, steps: StepSizes):
    a, b, g = steps.alpha, steps.beta, steps.gamma
    xi = problem.block(st.x, i)
    zi, mui = st.z[i], st.mu[i]
    x_new = xi - a * (problem.grad1_i(i, xi, zi) + problem.jac_h_apply_i(i, xi, mui)
                      + problem.constraint_T_i(i, st.lam[i]))
    z_new = net.mix_agent(i, st.z) + problem.h_i(i, x_new) - problem.h_i(i, xi)
    mu_new = net.mix_agent(i, st.mu) + problem.grad2_i(i, x_new, z_new) - problem.grad2_i(i, xi, zi)
    dlam = st.lam - st.lam_prev  # received lambda_j minus cached lambda_j from last round
    v_new = (st.v[i] - g * net.mix_agent(i, st.v, "C") - net.mix_agent(i, dlam, "C")
             + dlam[i] + b * problem.constraint_i(i, x_new - xi))
    lam_new = np.maximum(v_new, 0.0)
    return x_new, z_new, mu_new, v_new, lam_new


def step_distributed(state: SwarmState, problem: AggregativeProblem, network: MixingNetwork,
                     steps: StepSizes, engine: str = "vectorized", executor: Executor | None = None) -> SwarmState:
    """One synchronous round of the per-agent protocol.

    ``engine="vectorized"`` updates all agents with stacked array operations;
    ``engine="agents"`` runs one local update per agent against the frozen
    previous round, sequentially or through ``executor``.  Neighbor sums are
    accumulated in ascending neighbor order in every engine.
    """
    a, b, g = steps.alpha, steps.beta, steps.gamma
    if engine == "vectorized":
        x, z, mu = state.x, state.z, state.mu
        x_new = x - a * (problem.grad1(x, z) + problem.jac_h_apply(x, mu) + problem.constraint_T(state.lam))
        z_new = network.mix(z) + problem.local_h(x_new) - problem.local_h(x)
        mu_new = network.mix(mu) + problem.grad2(x_new, z_new) - problem.grad2(x, z)
        dlam = state.lam - state.lam_prev
        v_new = (state.v - g * network.mix(state.v, "C") - network.mix(dlam, "C")
                 + dlam + b * problem.constraint(x_new - x))
        lam_new = np.maximum(v_new, 0.0)
    elif engine == "agents":
        snap = state  # read-only during the round
        if executor is None:
            results = [_agent_round(i, snap, problem, network, steps) for i in range(problem.N)]
        else:
            results = list(executor.map(lambda i: _agent_round(i, snap, problem, network, steps),
                                        range(problem.N)))
        x_new = np.concatenate([r[0] for r in results])
        z_new, mu_new, v_new, lam_new = (np.stack([r[j] for r in results]) for j in range(1, 5))
    else:
        raise ValueError(f"unknown engine {engine!r}")
    out = SwarmState(x_new, z_new, mu_new, v_new, lam_new, state.lam.copy(), state.k + 1)
    _check(out, out.k)
    return out


def step_matrix(state: MatrixFormState, problem: AggregativeProblem, network: MixingNetwork,
                steps: StepSizes, B=None) -> MatrixFormState:
    """One iteration of the stacked form with dense ``W``, ``C`` and ``B``."""
    a, b, g = steps.alpha, steps.beta, steps.gamma
    B = network.B if B is None else B
    W, C = network.W, network.C
    x, z, mu, lam = state.x, state.z, state.mu, state.lam
    x_new = x - a * (problem.grad1(x, z) + problem.jac_h_apply(x, mu) + problem.constraint_T(lam))
    z_new = W @ z + problem.local_h(x_new) - problem.local_h(x)
    mu_new = W @ mu + problem.grad2(x_new, z_new) - problem.grad2(x, z)
    v_new = lam - C @ lam + b * (problem.constraint(x_new) - problem.b) + B @ state.y
    y_new = state.y - g * (B @ v_new)
    lam_new = np.maximum(v_new, 0.0)
    out = MatrixFormState(x_new, z_new, mu_new, v_new, y_new, lam_new, state.k + 1)
    _check(out, out.k)
    return out


def stack_state(state: SwarmState) -> dict:
    return {"x": state.x, "z": state.z, "mu": state.mu, "v": state.v, "lam": state.lam}


@dataclass
class StopRule:
    """Stop once every supplied threshold holds (``max_iters`` always bounds the run)."""

    max_iters: int = 3000
    rel_err: float | None = None
    kkt: float | None = None

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    def satisfied(self, rel_err, kkt_max) -> bool:
        if self.rel_err is None and self.kkt is None:
            return False
        ok = True
        if self.rel_err is not None:
            ok &= rel_err is not None and rel_err <= self.rel_err
        if self.kkt is not None:
            ok &= kkt_max <= self.kkt
        return bool(ok)


def run(problem: AggregativeProblem, network: MixingNetwork, steps: StepSizes, x0=None, lam0=None,
        max_iters: int | None = None, stop: StopRule | None = None, fixed_point=None, constants=None,
        x_star=None, engine: str = "vectorized", executor: Executor | None = None, v0: str = "consistent",
        twin: bool | None = None, keep_states: bool = False):
    """Iterate the distributed protocol and record diagnostics every round.

    With a ``fixed_point`` (see :func:`aggpd.oracle.build_fixed_point`) the
    matrix-form twin runs in lockstep to supply ``y_k`` for the Lyapunov value;
    with ``constants`` as well, the error-recursion margins are recorded.
    """
    from . import analysis

    stop = stop or StopRule()
    if max_iters is not None:
        stop = replace(stop, max_iters=max_iters)
    steps.check_gamma(network)
    if x_star is None and fixed_point is not None:
        x_star = fixed_point.x
    state = init(problem, network, steps, x0, lam0, v0=v0)
    if twin is None:
        twin = fixed_point is not None
    mstate = matrix_twin(state, problem, network, steps) if twin else None

    trace = analysis.RunTrace()
    trace.meta.update({"rho": network.rho, "N": problem.N, "topology": network.label,
                       "alpha": steps.alpha, "beta": steps.beta, "gamma": steps.gamma})
    recorder = analysis.Recorder(problem, network, steps, fixed_point=fixed_point,
                                 constants=constants, x_star=x_star)

    prev_m = None
    row = recorder.row(state, mstate, prev_m)
    trace.append(row)
    if keep_states:
        trace.states.append(state)
        trace.matrix_states.append(mstate)
    status = "max_iters"
    if stop.satisfied(row["rel_err"], recorder.kkt_max(row)):
        status = "converged"
    k = 0
    while status != "converged" and k < stop.max_iters:
        try:
            new_state = step_distributed(state, problem, network, steps, engine=engine, executor=executor)
            new_m = step_matrix(mstate, problem, network, steps) if mstate is not None else None
        except DivergenceError as exc:
            log.warning("%s", exc)
            status = "diverged"
            trace.error = str(exc)
            break
        prev_m, mstate, state = mstate, new_m, new_state
        k = state.k
        row = recorder.row(state, mstate, prev_m)
        trace.append(row)
        if keep_states:
            trace.states.append(state)
            trace.matrix_states.append(mstate)
        if stop.satisfied(row["rel_err"], recorder.kkt_max(row)):
            status = "converged"
    trace.status = status
    trace.final_state = state
    trace.final_matrix_state = mstate
    return trace
