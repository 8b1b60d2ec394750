import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aggpd.problem import (AggregativeProblem, Constants, DimensionError, NumericError, QuadraticInstance,
                           estimate_constants, problem_from_config, quadratic_instance)

from instances import quadratic_as_callables, rel_diff, smooth_problem


def fd_grad(fun, x, step=1e-5):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        g[j] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


# -- phi --------------------------------------------------------------------------


def test_phi_constant_decisions():
    P = quadratic_instance(4, 3, seed=1)
    c = np.array([0.5, -1.0, 2.0])
    assert np.allclose(P.phi(np.tile(c, 4)), c)


def test_phi_two_agents():
    P = QuadraticInstance(a=[[0.0], [0.0]], b=[[1.0], [1.0]])
    assert P.phi(np.array([1.0, 3.0])) == pytest.approx([2.0])


def test_phi_matches_loop_summation():
    P = smooth_problem(3, 2, seed=5)
    x = np.random.default_rng(0).normal(size=P.d)
    total = np.zeros(P.n)
    for i in range(P.N):
        xi = x[P.offsets[i]:P.offsets[i + 1]]
        total = total + (xi + 0.3 * np.sin(xi))
    assert np.allclose(P.phi(x), total / P.N, rtol=0, atol=1e-15)


def test_phi_rejects_wrong_length():
    with pytest.raises(DimensionError):
        quadratic_instance(3, 2).phi(np.zeros(5))


# -- gradient oracles ----------------------------------------------------------------


def test_oracles_vanish_at_anchor():
    P = quadratic_instance(3, 2, seed=0)
    a0 = P.a[0]
    g1, g2, h, J = P.grad_oracles(0, a0, a0)
    assert np.all(g1 == 0) and np.all(g2 == 0)
    assert np.array_equal(h, a0) and np.array_equal(J, np.eye(2))


def test_oracles_plug_in():
    P = QuadraticInstance(a=[[0.0, 0.0], [1.0, 1.0]], b=[[1.0, 1.0], [1.0, 1.0]])
    g1, g2, _, _ = P.grad_oracles(0, np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    assert np.allclose(g1, [2, 2]) and np.allclose(g2, [0, 0])


def test_oracles_reject_non_finite():
    P = quadratic_instance(2, 1)
    with pytest.raises(NumericError):
        P.grad_oracles(0, np.array([np.nan]), np.array([0.0]))


def test_oracles_reject_bad_dimension():
    P = quadratic_instance(2, 2)
    with pytest.raises(DimensionError):
        P.grad_oracles(0, np.zeros(3), np.zeros(2))


@given(seed=st.integers(0, 10_000))
def test_partial_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for P in (quadratic_as_callables(quadratic_instance(3, 2, seed=seed)), smooth_problem(3, 2, seed=seed)):
        i = int(rng.integers(P.N))
        xi, zi = rng.uniform(-3, 3, size=P.dims[i]), rng.uniform(-3, 3, size=P.n)
        g1, g2, _, _ = P.grad_oracles(i, xi, zi)
        assert rel_diff(g1, fd_grad(lambda v: P.f_i(i, v, zi), xi)) <= 1e-6
        assert rel_diff(g2, fd_grad(lambda v: P.f_i(i, xi, v), zi)) <= 1e-6


@given(seed=st.integers(0, 10_000))
def test_total_gradient_matches_finite_differences_of_objective(seed):
    P = smooth_problem(4, 2, seed=seed % 7)
    x = np.random.default_rng(seed).uniform(-2, 2, size=P.d)
    assert rel_diff(P.total_gradient(x), fd_grad(P.objective, x)) <= 1e-6


@given(seed=st.integers(0, 10_000))
def test_quadratic_vectorized_and_callable_paths_agree(seed):
    inst = quadratic_instance(5, 3, seed=seed)
    gen = quadratic_as_callables(inst)
    rng = np.random.default_rng(seed)
    x, Z = rng.normal(size=inst.d), rng.normal(size=(5, 3))
    assert np.allclose(inst.grad1(x, Z), gen.grad1(x, Z), atol=1e-14)
    assert np.allclose(inst.grad2(x, Z), gen.grad2(x, Z), atol=1e-14)
    assert np.allclose(inst.total_gradient(x), gen.total_gradient(x), atol=1e-13)
    assert inst.objective(x) == pytest.approx(gen.objective(x), rel=1e-13)


# -- structure -----------------------------------------------------------------------


@given(seed=st.integers(0, 10_000), N=st.integers(1, 6), dim=st.integers(1, 4))
def test_generated_instances_have_full_row_rank_and_ranges(seed, N, dim):
    P = quadratic_instance(N, dim, seed=seed)
    assert all(np.linalg.svd(Ai, compute_uv=False)[-1] > 1e-10 for Ai in P.A)
    assert np.all((P.a >= 1) & (P.a <= 3)) and np.all((P.b >= 1) & (P.b <= 2))


@given(seed=st.integers(0, 10_000))
def test_stacked_constraint_is_sum_of_blocks(seed):
    P = smooth_problem(3, 3, m=2, seed=seed % 11)
    x = np.random.default_rng(seed).normal(size=P.d)
    by_block = sum(P.A[i] @ xi for i, xi in enumerate(P.split(x)))
    assert np.allclose(P.A_full @ x, by_block, atol=1e-13)
    assert np.allclose(P.Lambda @ x, P.constraint(x).ravel(), atol=1e-13)


def test_rank_deficient_block_rejected():
    with pytest.raises(ValueError, match="full row rank"):
        AggregativeProblem(dims=[2], n=1, A=[np.array([[1.0, 1.0], [2.0, 2.0]])], b=[[0.0, 0.0]],
                           grad1=[None], grad2=[None], h=[None], jac_h=[None])


def test_constants_validation():
    with pytest.raises(ValueError):
        Constants(nu=1, L1=1, L2=1, L3=0)
    with pytest.raises(NumericError):
        Constants(nu=np.inf, L1=1, L2=1, L3=1)


def test_config_round_trip():
    P = quadratic_instance(4, 2, seed=9)
    Q = problem_from_config(P.to_config())
    assert np.array_equal(P.a, Q.a) and np.array_equal(P.b, Q.b)
    R = problem_from_config({"kind": "quadratic", "N": 4, "dim": 2, "seed": 9})
    assert np.array_equal(P.a, R.a)


def test_config_requires_common_dimension():
    with pytest.raises(ValueError):
        problem_from_config({"kind": "quadratic", "N": 2, "d_i": 2, "m": 3})


def test_explicit_overrides():
    P = quadratic_instance(2, 1, a=[[1.0], [2.0]], b=[[5.0], [6.0]])
    assert np.array_equal(P.b_total, [11.0])


# -- constants -----------------------------------------------------------------------


def test_closed_form_constants():
    c = estimate_constants(quadratic_instance(5, 2))
    assert (c.nu, c.L1, c.L2, c.L3, c.method) == (2.0, 4.0, 2.0, 1.0, "closed-form")


def test_closed_form_nu_is_min_hessian_eigenvalue():
    P = quadratic_instance(6, 2, seed=3)
    assert np.linalg.eigvalsh(P.hessian())[0] == pytest.approx(P.closed_form_constants().nu)


def test_sampled_constants_bracket_closed_form():
    inst = quadratic_instance(3, 2, seed=2)
    est = estimate_constants(quadratic_as_callables(inst), n_pairs=2000, n_points=5)
    exact = inst.closed_form_constants()
    assert est.method == "heuristic" and est.strongly_convex
    assert est.nu <= exact.nu + 1e-6
    assert est.L3 == pytest.approx(1.0)
    assert est.L2 == pytest.approx(exact.L2, rel=1e-6)  # attained by the partial Jacobian
    assert est.L1 <= exact.L1 + 1e-6


def test_sampled_l2_difference_quotients_never_exceed_two():
    inst = quadratic_instance(3, 2, seed=4)
    rng = np.random.default_rng(0)
    for _ in range(500):
        x, x2 = rng.uniform(-1, 1, size=(2, inst.d))
        Z, Z2 = rng.uniform(-1, 1, size=(2, 3, 2))
        # Lipschitz in the sum-of-norms metric ||dx|| + ||dz||
        q = np.linalg.norm(inst.grad2(x, Z) - inst.grad2(x2, Z2)) / (
            np.linalg.norm(x - x2) + np.linalg.norm(Z - Z2))
        assert q <= 2 + 1e-12


def test_nonconvex_problem_flagged():
    P = smooth_problem(2, 1, seed=0)
    neg = AggregativeProblem(dims=P.dims, n=P.n, A=P.A, b=P.b,
                             grad1=[lambda x, z: -2 * x] * 2, grad2=[lambda x, z: 0 * z] * 2,
                             h=[lambda x: x.copy()] * 2, jac_h=[lambda x: np.eye(1)] * 2)
    c = estimate_constants(neg, n_pairs=100, n_points=3)
    assert not c.strongly_convex and c.nu < 0
