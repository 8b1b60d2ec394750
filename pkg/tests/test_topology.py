import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aggpd.topology import (MixingNetwork, NetworkError, exponential_network, matrix_sqrt_B,
                            network_from_config, random_network, ring_network, spectral_report)


def circulant_ring_eigs(N):
    return 0.5 + 0.5 * np.cos(2 * np.pi * np.arange(N) / N)


def all_networks():
    yield ring_network(4)
    yield ring_network(60)
    yield exponential_network(16)
    yield exponential_network(60)
    yield exponential_network(60, weighting="directed-average")
    yield random_network(60, 0.05, seed=2)
    yield random_network(7, 1.0, seed=0)


# -- ring ----------------------------------------------------------------------------


def test_ring_60_rho_matches_reported_value_and_closed_form():
    net = ring_network(60)
    assert abs(net.rho - 0.9973) <= 5e-4
    assert net.rho == pytest.approx(0.5 + 0.5 * np.cos(2 * np.pi / 60), abs=1e-12)


def test_ring_4_spectrum():
    net = ring_network(4)
    assert net.rho == pytest.approx(0.5)
    assert np.allclose(np.sort(net.spectral.eig_C), [0, 0.25, 0.25, 0.5], atol=1e-14)
    assert net.sigma_min_sq == pytest.approx(0.25)


@given(N=st.integers(3, 40))
def test_ring_spectrum_matches_circulant_formula(N):
    net = ring_network(N)
    assert np.allclose(np.sort(net.spectral.eig_W), np.sort(circulant_ring_eigs(N)), atol=1e-12)
    assert np.all(net.W.sum(axis=1) == 1.0)
    assert net.W[0, N - 1] == 0.25 and net.W[N - 1, 0] == 0.25


def test_ring_needs_three_nodes():
    with pytest.raises(NetworkError):
        ring_network(2)


# -- exponential ---------------------------------------------------------------------


def test_exponential_60_rho_soft_target():
    net = exponential_network(60)
    assert abs(net.rho - 0.7143) <= 0.05
    assert exponential_network(60, weighting="directed-average").rho == pytest.approx(0.7143, abs=5e-5)


def test_exponential_two_nodes_is_complete():
    net = exponential_network(2)
    assert np.allclose(net.W, 0.5) and net.rho == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("N", [5, 16, 60])
def test_exponential_doubly_stochastic(N):
    W = exponential_network(N).W
    assert np.allclose(W.sum(axis=0), 1, atol=1e-14) and np.allclose(W.sum(axis=1), 1, atol=1e-14)
    assert np.array_equal(W, W.T)


def test_exponential_neighbor_pattern():
    net = exponential_network(16)
    assert list(net.neighbors[0]) == [0, 1, 2, 4, 8, 12, 14, 15]


# -- random --------------------------------------------------------------------------


def test_complete_random_graph():
    net = random_network(6, 1.0, seed=3)
    assert net.rho < 1
    assert np.allclose(net.W, 1 / 6)


def test_random_60_in_target_band():
    assert 0.95 <= random_network(60, 0.05, seed=2).rho < 1


def test_random_fixed_seed_byte_identical():
    assert random_network(30, 0.2, seed=11).W.tobytes() == random_network(30, 0.2, seed=11).W.tobytes()


def test_random_unreachable_connectivity():
    with pytest.raises(NetworkError, match="no connected graph"):
        random_network(50, 0.001, seed=0, max_tries=5)


def test_random_bad_probability():
    with pytest.raises(NetworkError):
        random_network(5, 0.0)


@given(N=st.integers(2, 25), p=st.floats(0.2, 1.0), seed=st.integers(0, 1000))
def test_random_network_invariants(N, p, seed):
    net = random_network(N, p, seed=seed)
    W = net.W
    assert np.array_equal(W, W.T) and np.all(W >= 0)
    assert np.allclose(W.sum(axis=1), 1, atol=1e-14)
    assert net.rho < 1


# -- validation ----------------------------------------------------------------------


@pytest.mark.parametrize("W, msg", [
    (np.array([[0.5, 0.5], [0.4, 0.6]]), "symmetric"),
    (np.array([[1.2, -0.2], [-0.2, 1.2]]), "negative"),
    (np.array([[0.5, 0.4], [0.4, 0.5]]), "sum"),
    (np.eye(3), "connected"),
])
def test_custom_W_validated(W, msg):
    with pytest.raises(NetworkError, match=msg):
        MixingNetwork(W)


def test_custom_from_config_row_major():
    net = network_from_config({"topology": "custom", "W": [0.5, 0.5, 0.5, 0.5]}, N=2)
    assert net.N == 2


def test_config_size_mismatch():
    with pytest.raises(NetworkError):
        network_from_config({"topology": "ring", "N": 5}, N=6)


# -- spectral facts ------------------------------------------------------------------


def test_averaging_matrix_spectrum():
    N = 5
    rep = spectral_report(MixingNetwork(np.full((N, N), 1 / N)))
    assert rep.rho == pytest.approx(0, abs=1e-15)
    assert np.allclose(np.sort(rep.eig_C), [0] + [0.5] * (N - 1), atol=1e-14)


@pytest.mark.parametrize("net", list(all_networks()), ids=lambda n: f"{n.label}{n.N}")
def test_spectral_invariants(net):
    rep = net.spectral
    assert np.all(rep.eig_C >= -1e-15) and np.all(rep.eig_C < 1)
    assert np.sum(rep.eig_C <= 1e-12) == 1
    assert 0 < net.sigma_min_sq <= net.lambda_max_sq < 1
    assert rep.cross_identity_error <= 1e-14
    lam2 = np.sort(rep.eig_W)[-2]
    assert rep.rho == pytest.approx(max(lam2, -np.sort(rep.eig_W)[0]), abs=1e-12)
    assert np.linalg.norm(net.W - np.eye(net.N), 2) <= 2 + 1e-12


@pytest.mark.parametrize("net", list(all_networks()), ids=lambda n: f"{n.label}{n.N}")
def test_mixing_contracts_disagreement(net):
    rng = np.random.default_rng(0)
    for _ in range(100):
        Z = rng.normal(size=(net.N, 3))
        dev = Z - Z.mean(axis=0)
        assert np.linalg.norm(net.W @ Z - Z.mean(axis=0)) <= net.rho * np.linalg.norm(dev) + 1e-12


@pytest.mark.parametrize("net", list(all_networks()), ids=lambda n: f"{n.label}{n.N}")
def test_square_root_and_null_space(net):
    B = matrix_sqrt_B(net)
    assert np.max(np.abs(B @ B - net.C)) <= 1e-10
    assert np.allclose(B, B.T)
    assert np.all(np.linalg.eigvalsh(B) >= -1e-12)
    assert np.max(np.abs(B @ np.ones(net.N))) <= 1e-10
    # null space of B is exactly span(1)
    s = np.linalg.svd(B, compute_uv=False)
    assert np.sum(s <= 1e-8) == 1


@pytest.mark.parametrize("net", [ring_network(9), exponential_network(12), random_network(15, 0.3, seed=1)],
                         ids=lambda n: n.label)
def test_vectorized_mix_equals_per_agent_mix_bitwise(net):
    X = np.random.default_rng(1).normal(size=(net.N, 4))
    for weights in ("W", "C"):
        full = net.mix(X, weights)
        for i in range(net.N):
            assert np.array_equal(full[i], net.mix_agent(i, X, weights))
        M = net.W if weights == "W" else net.C
        assert np.allclose(full, M @ X, atol=1e-14)
