"""Aggregative optimization problems with coupled affine inequality constraints.

Agent ``i`` owns a decision ``x_i`` of dimension ``d_i``, a local cost
``f_i(x_i, z)`` that depends on the aggregate ``z = phi(x) = mean_i h_i(x_i)``,
and a constraint block ``(A_i, b_i)``.  The agents jointly solve::

    min_x  sum_i f_i(x_i, phi(x))   s.t.  sum_i A_i x_i <= sum_i b_i

Stacked vectors follow agent order.  Decision vectors ``x`` are flat arrays of
length ``d = sum d_i`` (see :attr:`AggregativeProblem.offsets`); aggregate,
tracker and dual quantities are ``(N, n)`` / ``(N, m)`` arrays whose row-major
flattening coincides with the Kronecker-stacked column vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class NumericError(ValueError):
    """Non-finite values reached a gradient oracle or an estimator."""


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Constants:
    """Strong convexity and Lipschitz constants of the problem.

    ``method`` is ``"closed-form"`` when derived analytically and
    ``"heuristic"`` when estimated by sampling.
    """

    nu: float
    L1: float
    L2: float
    L3: float
    method: str = "closed-form"
    strongly_convex: bool = True

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.nu, self.L1, self.L2, self.L3)):
            raise NumericError("problem constants must be finite")
        if self.L1 < 0 or self.L2 < 0 or self.L3 <= 0:
            raise ValueError("need L1, L2 >= 0 and L3 > 0")

    def scaled(self, **factors) -> "Constants":
        vals = {k: getattr(self, k) * factors.get(k, 1.0) for k in ("nu", "L1", "L2", "L3")}
        return Constants(**vals, method=self.method, strongly_convex=self.strongly_convex)


class AggregativeProblem:
    """Problem defined by per-agent gradient callables.

    Parameters
    ----------
    dims : sequence of int
        Local decision dimensions ``d_i``.
    n : int
        Aggregate dimension.
    A, b : sequences
        Constraint blocks ``A_i`` of shape ``(m, d_i)`` and ``b_i`` of shape ``(m,)``.
    grad1, grad2 : sequences of callables
        ``grad1[i](x_i, z_i)`` -> partial gradient in ``x_i`` (length ``d_i``),
        ``grad2[i](x_i, z_i)`` -> partial gradient in the aggregate slot (length ``n``).
    h, jac_h : sequences of callables
        ``h[i](x_i)`` -> contribution in ``R^n``; ``jac_h[i](x_i)`` -> ``(d_i, n)``.
    f : sequence of callables, optional
        Local objective values, used by finite-difference checks.
    """

    kind = "callable"

    def __init__(
        self,
        dims: Sequence[int],
        n: int,
        A: Sequence[Array],
        b: Sequence[Array] | Array,
        grad1: Sequence[Callable],
        grad2: Sequence[Callable],
        h: Sequence[Callable],
        jac_h: Sequence[Callable],
        f: Sequence[Callable] | None = None,
        rank_tol: float = 1e-10,
    ):
        self.dims = tuple(int(di) for di in dims)
        self.N = len(self.dims)
        if self.N < 1:
            raise DimensionError("need at least one agent")
        self.n = int(n)
        self.A = tuple(np.array(Ai, dtype=float) for Ai in A)
        self.b = np.array(b, dtype=float).reshape(self.N, -1)
        self.m = self.b.shape[1]
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        self.d = int(self.offsets[-1])
        for name, seq in (("grad1", grad1), ("grad2", grad2), ("h", h), ("jac_h", jac_h)):
            if len(seq) != self.N:
                raise DimensionError(f"{name} has {len(seq)} entries for {self.N} agents")
        if len(self.A) != self.N:
            raise DimensionError("one constraint block per agent required")
        for i, Ai in enumerate(self.A):
            if Ai.shape != (self.m, self.dims[i]):
                raise DimensionError(f"A_{i} has shape {Ai.shape}, expected {(self.m, self.dims[i])}")
            if self.m > self.dims[i] or np.linalg.svd(Ai, compute_uv=False)[-1] <= rank_tol:
                raise ValueError(f"A_{i} does not have full row rank")
        self._grad1, self._grad2 = tuple(grad1), tuple(grad2)
        self._h, self._jac_h = tuple(h), tuple(jac_h)
        self._f = tuple(f) if f is not None else None

    # -- layout -------------------------------------------------------------

    def split(self, x: Array) -> list[Array]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise DimensionError(f"stacked decision has shape {x.shape}, expected ({self.d},)")
        return [x[self.offsets[i]:self.offsets[i + 1]] for i in range(self.N)]

    def block(self, x: Array, i: int) -> Array:
        return x[self.offsets[i]:self.offsets[i + 1]]

    @property
    def b_total(self) -> Array:
        return self.b.sum(axis=0)

    @property
    def Lambda(self) -> Array:
        """Block-diagonal ``diag(A_1, ..., A_N)`` of shape ``(N m, d)``."""
        out = np.zeros((self.N * self.m, self.d))
        for i, Ai in enumerate(self.A):
            out[i * self.m:(i + 1) * self.m, self.offsets[i]:self.offsets[i + 1]] = Ai
        return out

    @property
    def A_full(self) -> Array:
        """Row block ``[A_1, ..., A_N]`` of shape ``(m, d)``."""
        return np.hstack(self.A)

    # -- per-agent oracles --------------------------------------------------

    def grad1_i(self, i: int, xi: Array, zi: Array) -> Array:
        return np.asarray(self._grad1[i](xi, zi), dtype=float)

    def grad2_i(self, i: int, xi: Array, zi: Array) -> Array:
        return np.asarray(self._grad2[i](xi, zi), dtype=float)

    def h_i(self, i: int, xi: Array) -> Array:
        return np.asarray(self._h[i](xi), dtype=float)

    def jac_h_i(self, i: int, xi: Array) -> Array:
        return np.asarray(self._jac_h[i](xi), dtype=float).reshape(self.dims[i], self.n)

    def jac_h_apply_i(self, i: int, xi: Array, mui: Array) -> Array:
        return self.jac_h_i(i, xi) @ mui

    def constraint_i(self, i: int, xi: Array) -> Array:
        return self.A[i] @ xi

    def constraint_T_i(self, i: int, lami: Array) -> Array:
        return self.A[i].T @ lami

    def f_i(self, i: int, xi: Array, zi: Array) -> float:
        if self._f is None:
            raise NotImplementedError("no objective values supplied for this problem")
        return float(self._f[i](xi, zi))

    def grad_oracles(self, i: int, xi: Array, zi: Array):
        """Local quantities of agent ``i``: ``(grad1, grad2, h, jac_h)``."""
        xi = np.asarray(xi, dtype=float)
        zi = np.asarray(zi, dtype=float)
        if xi.shape != (self.dims[i],) or zi.shape != (self.n,):
            raise DimensionError(f"agent {i}: got x_i {xi.shape}, z_i {zi.shape}")
        if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(zi))):
            raise NumericError(f"agent {i}: non-finite input to gradient oracle")
        return self.grad1_i(i, xi, zi), self.grad2_i(i, xi, zi), self.h_i(i, xi), self.jac_h_i(i, xi)

    # -- stacked evaluation (loops; subclasses may vectorize) ---------------

    def local_h(self, x: Array) -> Array:
        return np.stack([self.h_i(i, xi) for i, xi in enumerate(self.split(x))])

    def grad1(self, x: Array, Z: Array) -> Array:
        return np.concatenate([self.grad1_i(i, xi, Z[i]) for i, xi in enumerate(self.split(x))])

    def grad2(self, x: Array, Z: Array) -> Array:
        return np.stack([self.grad2_i(i, xi, Z[i]) for i, xi in enumerate(self.split(x))])

    def jac_h_apply(self, x: Array, M: Array) -> Array:
        return np.concatenate([self.jac_h_apply_i(i, xi, M[i]) for i, xi in enumerate(self.split(x))])

    def constraint(self, x: Array) -> Array:
        """Rows ``A_i x_i``, shape ``(N, m)``."""
        return np.stack([self.constraint_i(i, xi) for i, xi in enumerate(self.split(x))])

    def constraint_T(self, L: Array) -> Array:
        """Stacked ``A_i^T lambda_i``, shape ``(d,)``."""
        return np.concatenate([self.constraint_T_i(i, L[i]) for i in range(self.N)])

    # -- global quantities --------------------------------------------------

    def phi(self, x: Array) -> Array:
        """Aggregate ``(1/N) sum_i h_i(x_i)``."""
        return self.local_h(x).sum(axis=0) / self.N

    def consensus_z(self, x: Array) -> Array:
        return np.tile(self.phi(x), (self.N, 1))

    def total_gradient(self, x: Array) -> Array:
        """Gradient of ``f(x) = sum_i f_i(x_i, phi(x))``.

        This is the chain-rule expression ``grad1 + jac_h (1 (x) mean grad2)``
        evaluated at ``z_i = phi(x)`` for every agent.
        """
        Z = self.consensus_z(x)
        g2bar = self.grad2(x, Z).mean(axis=0)
        return self.grad1(x, Z) + self.jac_h_apply(x, np.tile(g2bar, (self.N, 1)))

    def objective(self, x: Array) -> float:
        z = self.phi(x)
        return float(sum(self.f_i(i, xi, z) for i, xi in enumerate(self.split(x))))

    def to_config(self) -> dict:
        raise NotImplementedError(f"problems of kind {self.kind!r} are not serializable")


class QuadraticInstance(AggregativeProblem):
    """``f_i(x_i, z) = ||x_i - a_i||^2 + ||x_i - z||^2`` with ``h_i = id`` and ``A_i = I``.

    All dimensions coincide (``d_i = n = m = dim``).  Every stacked method is
    vectorized with the same elementwise formulas as its per-agent twin, so the
    two evaluation paths agree bit for bit.
    """

    kind = "quadratic"

    def __init__(self, a: Array, b: Array, seed: int | None = None,
                 a_range=(1.0, 3.0), b_range=(1.0, 2.0)):
        a = np.array(a, dtype=float)
        b = np.array(b, dtype=float)
        if a.ndim != 2 or a.shape != b.shape:
            raise DimensionError(f"anchors {a.shape} and b {b.shape} must both be (N, dim)")
        N, dim = a.shape
        self.a = a
        self.seed = seed
        self.a_range = tuple(a_range)
        self.b_range = tuple(b_range)
        eye = np.eye(dim)
        super().__init__(
            dims=[dim] * N, n=dim, A=[eye] * N, b=b,
            grad1=[None] * N, grad2=[None] * N, h=[None] * N, jac_h=[None] * N,
        )

    @property
    def dim(self) -> int:
        return self.n

    def grad1_i(self, i, xi, zi):
        return 2.0 * (xi - self.a[i]) + 2.0 * (xi - zi)

    def grad2_i(self, i, xi, zi):
        return -2.0 * (xi - zi)

    def h_i(self, i, xi):
        return np.array(xi, dtype=float)

    def jac_h_i(self, i, xi):
        return np.eye(self.n)

    def jac_h_apply_i(self, i, xi, mui):
        return np.array(mui, dtype=float)

    def constraint_i(self, i, xi):
        return np.array(xi, dtype=float)

    def constraint_T_i(self, i, lami):
        return np.array(lami, dtype=float)

    def f_i(self, i, xi, zi):
        return float(np.sum((xi - self.a[i]) ** 2) + np.sum((xi - zi) ** 2))

    def _rows(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise DimensionError(f"stacked decision has shape {x.shape}, expected ({self.d},)")
        return x.reshape(self.N, self.n)

    def local_h(self, x):
        return self._rows(x).copy()

    def grad1(self, x, Z):
        X = self._rows(x)
        return (2.0 * (X - self.a) + 2.0 * (X - Z)).ravel()

    def grad2(self, x, Z):
        return -2.0 * (self._rows(x) - Z)

    def jac_h_apply(self, x, M):
        return np.array(M, dtype=float).ravel()

    def constraint(self, x):
        return self._rows(x).copy()

    def constraint_T(self, L):
        return np.array(L, dtype=float).ravel()

    def hessian(self) -> Array:
        """Hessian ``4 I - 2 (11^T/N (x) I)`` of the global objective."""
        J = np.kron(np.full((self.N, self.N), 1.0 / self.N), np.eye(self.n))
        return 4.0 * np.eye(self.d) - 2.0 * J

    def linear_term(self) -> Array:
        return -2.0 * self.a.ravel()

    def closed_form_constants(self) -> Constants:
        # Hessian eigenvalues: 2 on the consensus subspace, 4 on its complement.
        # F(x, z) := grad1 + jac_h(1 (x) mean grad2) has dF = (4I - 2J) dx - 2(I - J) dz.
        if self.N >= 2:
            L1 = 4.0
        else:
            L1 = 2.0
        return Constants(nu=2.0, L1=L1, L2=2.0, L3=1.0, method="closed-form")

    def to_config(self) -> dict:
        return {
            "kind": "quadratic",
            "N": self.N,
            "d_i": self.n,
            "n": self.n,
            "m": self.m,
            "seed": self.seed,
            "a_range": list(self.a_range),
            "b_range": list(self.b_range),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
        }


def quadratic_instance(N: int, dim: int, seed: int | None = 0, a_range=(1.0, 3.0),
                       b_range=(1.0, 2.0), a=None, b=None) -> QuadraticInstance:
    """Random instance of the quadratic benchmark (anchors then offsets drawn in that order)."""
    if N < 1 or dim < 1:
        raise DimensionError("need N >= 1 and dim >= 1")
    rng = np.random.default_rng(seed)
    a_draw = rng.uniform(a_range[0], a_range[1], size=(N, dim))
    b_draw = rng.uniform(b_range[0], b_range[1], size=(N, dim))
    a = a_draw if a is None else np.array(a, dtype=float).reshape(N, dim)
    b = b_draw if b is None else np.array(b, dtype=float).reshape(N, dim)
    return QuadraticInstance(a, b, seed=seed, a_range=a_range, b_range=b_range)


def problem_from_config(cfg: dict) -> AggregativeProblem:
    """Build a problem from its config mapping (only the quadratic kind is serializable)."""
    kind = cfg.get("kind", "quadratic")
    if kind != "quadratic":
        raise ValueError(f"unsupported problem kind {kind!r}")
    N = int(cfg["N"])
    dims = {int(cfg[key]) for key in ("d_i", "n", "m", "dim") if key in cfg}
    if len(dims) != 1:
        raise ValueError("quadratic problems need d_i = n = m (one common dimension)")
    dim = dims.pop()
    return quadratic_instance(
        N, dim, seed=cfg.get("seed", 0),
        a_range=tuple(cfg.get("a_range", (1.0, 3.0))),
        b_range=tuple(cfg.get("b_range", (1.0, 2.0))),
        a=cfg.get("a"), b=cfg.get("b"),
    )


# -- constants ------------------------------------------------------------------


def _fd_jacobian(fun, x0, step):
    f0 = fun(x0)
    J = np.empty((f0.size, x0.size))
    for j in range(x0.size):
        e = np.zeros_like(x0)
        e[j] = step
        J[:, j] = (fun(x0 + e) - fun(x0 - e)) / (2 * step)
    return J


def estimate_constants(problem: AggregativeProblem, box=(-1.0, 1.0), n_pairs: int = 10_000,
                       n_points: int = 20, seed: int = 0, fd_step: float = 1e-5) -> Constants:
    """Closed-form constants for quadratic instances, sampled estimates otherwise.

    The sampled route draws ``n_points`` points uniformly in ``box`` (applied to
    every coordinate of ``x`` and ``z``) and differentiates the assumption
    maps by central differences: ``nu`` is the smallest eigenvalue of the
    symmetrized Hessian of ``f``; ``L1``/``L2`` are the larger of the two
    partial-Jacobian norms of the bundled map and of ``grad2``; ``L3`` is the
    largest ``||jac h_i||``.  ``n_pairs`` random pairs add difference-quotient
    lower bounds for the Lipschitz constants.  The result is labeled
    ``"heuristic"``.
    """
    if isinstance(problem, QuadraticInstance):
        return problem.closed_form_constants()

    rng = np.random.default_rng(seed)
    lo, hi = box
    N, d, n = problem.N, problem.d, problem.n

    def bundled(xz):
        x, Z = xz[:d], xz[d:].reshape(N, n)
        g2bar = problem.grad2(x, Z).mean(axis=0)
        return problem.grad1(x, Z) + problem.jac_h_apply(x, np.tile(g2bar, (N, 1)))

    def g2(xz):
        return problem.grad2(xz[:d], xz[d:].reshape(N, n)).ravel()

    nu = math.inf
    L1 = L2 = L3 = 0.0
    for _ in range(n_points):
        x = rng.uniform(lo, hi, size=d)
        Z = rng.uniform(lo, hi, size=(N, n))
        xz = np.concatenate([x, Z.ravel()])
        H = _fd_jacobian(problem.total_gradient, x, fd_step)
        J1 = _fd_jacobian(bundled, xz, fd_step)
        J2 = _fd_jacobian(g2, xz, fd_step)
        vals = [H, J1, J2]
        if not all(np.all(np.isfinite(V)) for V in vals):
            raise NumericError("non-finite derivative sample while estimating constants")
        nu = min(nu, float(np.linalg.eigvalsh(0.5 * (H + H.T))[0]))
        L1 = max(L1, np.linalg.norm(J1[:, :d], 2), np.linalg.norm(J1[:, d:], 2))
        L2 = max(L2, np.linalg.norm(J2[:, :d], 2), np.linalg.norm(J2[:, d:], 2))
        for i, xi in enumerate(problem.split(x)):
            L3 = max(L3, np.linalg.norm(problem.jac_h_i(i, xi), 2))

    for _ in range(n_pairs):
        x, x2 = rng.uniform(lo, hi, size=(2, d))
        Z, Z2 = rng.uniform(lo, hi, size=(2, N, n))
        dist = np.linalg.norm(x - x2) + np.linalg.norm(Z - Z2)
        xz, xz2 = np.concatenate([x, Z.ravel()]), np.concatenate([x2, Z2.ravel()])
        q1 = np.linalg.norm(bundled(xz) - bundled(xz2)) / dist
        q2 = np.linalg.norm(g2(xz) - g2(xz2)) / dist
        if not (math.isfinite(q1) and math.isfinite(q2)):
            raise NumericError("non-finite difference quotient while estimating constants")
        L1, L2 = max(L1, q1), max(L2, q2)

    strongly_convex = nu > 0
    return Constants(nu=float(nu), L1=float(L1), L2=float(L2), L3=float(max(L3, 1e-300)),
                     method="heuristic", strongly_convex=strongly_convex)
