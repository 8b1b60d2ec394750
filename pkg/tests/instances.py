"""Shared test instances."""

import numpy as np

from aggpd.problem import AggregativeProblem, quadratic_instance
from aggpd.topology import random_network

TOY_SEED = 0  # N=3, dim=1 draw whose coupled constraint is active


def toy():
    return quadratic_instance(3, 1, seed=TOY_SEED)


def complete3():
    return random_network(3, 1.0, seed=0)


def quadratic_as_callables(inst):
    """Same objective as a quadratic instance, but through the generic callable path."""
    N = inst.N
    a = inst.a
    return AggregativeProblem(
        dims=inst.dims, n=inst.n, A=inst.A, b=inst.b,
        grad1=[lambda x, z, ai=a[i]: 2 * (x - ai) + 2 * (x - z) for i in range(N)],
        grad2=[lambda x, z: -2 * (x - z) for _ in range(N)],
        h=[lambda x: x.copy() for _ in range(N)],
        jac_h=[lambda x: np.eye(x.size) for _ in range(N)],
        f=[lambda x, z, ai=a[i]: float(np.sum((x - ai) ** 2) + np.sum((x - z) ** 2)) for i in range(N)],
    )


def smooth_problem(N, dim, m=None, seed=0, curvature=0.3):
    """Nonlinear aggregation ``h_i(x) = x + c sin(x)`` and random full-row-rank constraint blocks.

    ``f_i(x, z) = ||x - a_i||^2 + ||x - z||^2 / 2``.
    """
    rng = np.random.default_rng(seed)
    m = dim if m is None else m
    a = rng.uniform(1, 3, size=(N, dim))
    A = [np.eye(m, dim) + 0.2 * rng.normal(size=(m, dim)) for _ in range(N)]
    b = rng.uniform(0.5, 1.5, size=(N, m))
    c = curvature
    return AggregativeProblem(
        dims=[dim] * N, n=dim, A=A, b=b,
        grad1=[lambda x, z, ai=a[i]: 2 * (x - ai) + (x - z) for i in range(N)],
        grad2=[lambda x, z: -(x - z) for _ in range(N)],
        h=[lambda x: x + c * np.sin(x) for _ in range(N)],
        jac_h=[lambda x: np.diag(1 + c * np.cos(x)) for _ in range(N)],
        f=[lambda x, z, ai=a[i]: float(np.sum((x - ai) ** 2) + 0.5 * np.sum((x - z) ** 2)) for i in range(N)],
    )


def rel_diff(a, ref):
    """``||a - ref|| / max(||ref||, 1)``."""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(ref)) / max(np.linalg.norm(ref), 1.0))
