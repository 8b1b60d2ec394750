"""Communication graphs and symmetric doubly stochastic mixing matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.csgraph import connected_components

SYM_TOL = 1e-12
ZERO_EIG = 1e-12


class NetworkError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralReport:
    rho: float
    sigma_min_sq: float  # smallest nonzero eigenvalue of C = B^2
    lambda_max_sq: float  # largest eigenvalue of C
    eig_C: np.ndarray
    eig_W: np.ndarray
    cross_identity_error: float  # max |eig_C - (1 - eig_W)/2|


@dataclass(frozen=True, eq=False)
class MixingNetwork:
    """Weights ``W`` of an undirected connected graph plus derived quantities.

    ``C = B^2 = (I - W)/2``.  Construction validates symmetry, stochasticity,
    nonnegativity and connectivity (``rho < 1``).
    """

    W: np.ndarray
    label: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        object.__setattr__(self, "W", W)
        W.setflags(write=False)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 1:
            raise NetworkError(f"W must be a nonempty square matrix, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise NetworkError("W has non-finite entries")
        if np.max(np.abs(W - W.T)) > SYM_TOL:
            raise NetworkError("W is not symmetric")
        if np.min(W) < 0:
            raise NetworkError("W has negative entries")
        if np.max(np.abs(W.sum(axis=1) - 1.0)) > SYM_TOL:
            raise NetworkError("rows of W do not sum to 1")
        if np.max(np.abs(W.sum(axis=0) - 1.0)) > SYM_TOL:
            raise NetworkError("columns of W do not sum to 1")
        ncomp, _ = connected_components(W > 0, directed=False)
        if ncomp != 1:
            raise NetworkError(f"graph is not connected ({ncomp} components)")
        if self.N > 1 and self.rho >= 1.0 - 1e-12:
            raise NetworkError(f"rho = {self.rho} is not below 1")

    @property
    def N(self) -> int:
        return self.W.shape[0]

    @cached_property
    def C(self) -> np.ndarray:
        return 0.5 * (np.eye(self.N) - self.W)

    @cached_property
    def spectral(self) -> SpectralReport:
        return spectral_report(self)

    @property
    def rho(self) -> float:
        return self.spectral.rho

    @property
    def sigma_min_sq(self) -> float:
        return self.spectral.sigma_min_sq

    @property
    def lambda_max_sq(self) -> float:
        return self.spectral.lambda_max_sq

    @cached_property
    def B(self) -> np.ndarray:
        return matrix_sqrt_B(self)

    @cached_property
    def neighbors(self) -> tuple:
        """Ascending neighbor indices of each agent, the agent itself included."""
        return tuple(np.flatnonzero((self.W[i] != 0) | (np.arange(self.N) == i)) for i in range(self.N))

    @cached_property
    def _slots(self):
        # padded neighbor table: slot s of agent i holds its s-th neighbor (ascending)
        S = max(len(nb) for nb in self.neighbors)
        idx = np.zeros((self.N, S), dtype=int)
        mask = np.zeros((self.N, S), dtype=bool)
        for i, nb in enumerate(self.neighbors):
            idx[i, :len(nb)] = nb
            mask[i, :len(nb)] = True
        rows = np.arange(self.N)[:, None]
        return idx, mask, self.W[rows, idx], self.C[rows, idx]

    def mix(self, X: np.ndarray, weights: str = "W") -> np.ndarray:
        """Neighbor sums ``sum_j w_ij X_j`` (or ``c_ij``) for all agents at once.

        Each agent's sum accumulates in ascending neighbor order, exactly as
        :meth:`mix_agent` does, so both give identical floating-point results.
        """
        idx, mask, wW, wC = self._slots
        w = wW if weights == "W" else wC
        acc = np.zeros_like(X, dtype=float)
        for s in range(idx.shape[1]):
            term = acc + w[:, s, None] * X[idx[:, s]]
            acc = np.where(mask[:, s, None], term, acc)
        return acc

    def mix_agent(self, i: int, X: np.ndarray, weights: str = "W") -> np.ndarray:
        M = self.W if weights == "W" else self.C
        acc = np.zeros(X.shape[1:], dtype=float)
        for j in self.neighbors[i]:
            acc = acc + M[i, j] * X[j]
        return acc


def spectral_report(net: MixingNetwork) -> SpectralReport:
    W = net.W
    N = W.shape[0]
    if np.max(np.abs(W - W.T)) > SYM_TOL:
        raise NetworkError("asymmetric W")
    eig_W = np.linalg.eigvalsh(W)
    C = 0.5 * (np.eye(N) - W)
    eig_C = np.linalg.eigvalsh(C)
    J = np.full((N, N), 1.0 / N)
    rho = float(np.linalg.norm(W - J, 2)) if N > 1 else 0.0
    nonzero = eig_C[eig_C > ZERO_EIG]
    sigma = float(nonzero.min()) if nonzero.size else 0.0
    lmax = float(eig_C.max())
    cross = float(np.max(np.abs(np.sort(eig_C) - np.sort((1.0 - eig_W) / 2.0))))
    return SpectralReport(rho, sigma, lmax, eig_C, eig_W, cross)


def matrix_sqrt_B(net: MixingNetwork) -> np.ndarray:
    """Symmetric PSD square root of ``C``; eigenvalues at or below the zero threshold are clamped to 0."""
    C = 0.5 * (np.eye(net.N) - net.W)
    vals, vecs = np.linalg.eigh(C)
    vals = np.where(vals > ZERO_EIG, vals, 0.0)  # negatives and solver noise around the null direction
    B = (vecs * np.sqrt(vals)) @ vecs.T
    B = 0.5 * (B + B.T)
    err = np.max(np.abs(B @ B - C)) if net.N else 0.0
    if err > 1e-8:
        raise NetworkError(f"square root reconstruction error {err:.3e}")
    return B


def _metropolis(adj: np.ndarray) -> np.ndarray:
    deg = adj.sum(axis=1)
    W = np.where(adj, 1.0 / (1.0 + np.maximum(deg[:, None], deg[None, :])), 0.0)
    np.fill_diagonal(W, 0.0)
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return W


def ring_network(N: int) -> MixingNetwork:
    if N < 3:
        raise NetworkError("ring needs N >= 3")
    W = 0.5 * np.eye(N)
    for i in range(N):
        W[i, (i + 1) % N] = 0.25
        W[i, (i - 1) % N] = 0.25
    return MixingNetwork(W, label="ring")


def exponential_network(N: int, weighting: str = "uniform") -> MixingNetwork:
    """Static exponential graph: node ``i`` links to ``i +/- 2^j`` for ``2^j <= N - 1``.

    ``weighting="uniform"`` puts ``1/(deg+1)`` on every edge and on the
    diagonal (Metropolis weights if the degrees differ).
    ``weighting="directed-average"`` symmetrizes the one-directional
    exponential graph ``(D + D^T)/2`` with ``D`` carrying ``1/(tau+1)`` on the
    node itself and on each ``i + 2^j`` (``tau`` = number of offsets).
    """
    if N < 2:
        raise NetworkError("exponential graph needs N >= 2")
    offsets = sorted({2 ** j for j in range(int(np.floor(np.log2(N - 1))) + 1)})
    if weighting == "uniform":
        adj = np.zeros((N, N), dtype=bool)
        for i in range(N):
            for s in offsets:
                adj[i, (i + s) % N] = adj[i, (i - s) % N] = True
        np.fill_diagonal(adj, False)
        deg = adj.sum(axis=1)
        if np.all(deg == deg[0]):
            W = (adj + np.eye(N)) / (deg[0] + 1.0)
        else:
            W = _metropolis(adj)
    elif weighting == "directed-average":
        D = np.eye(N)
        for i in range(N):
            for s in offsets:
                D[i, (i + s) % N] += 1.0
        D /= D.sum(axis=1, keepdims=True)
        W = 0.5 * (D + D.T)
    else:
        raise NetworkError(f"unknown weighting {weighting!r}")
    return MixingNetwork(W, label="exponential", meta={"weighting": weighting})


def random_network(N: int, edge_prob: float, seed: int | None = 0, max_tries: int = 1000) -> MixingNetwork:
    """Erdos-Renyi graph resampled until connected, with Metropolis-Hastings weights."""
    if not 0 < edge_prob <= 1:
        raise NetworkError("edge_prob must lie in (0, 1]")
    if N < 1:
        raise NetworkError("need N >= 1")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(N, k=1)
    for attempt in range(1, max_tries + 1):
        adj = np.zeros((N, N), dtype=bool)
        adj[iu] = rng.random(iu[0].size) < edge_prob
        adj |= adj.T
        if connected_components(adj, directed=False)[0] == 1:
            return MixingNetwork(_metropolis(adj), label="random",
                                 meta={"edge_prob": edge_prob, "seed": seed, "attempts": attempt,
                                       "edges": int(adj.sum() // 2)})
    raise NetworkError(f"no connected graph in {max_tries} draws (N={N}, edge_prob={edge_prob})")


def network_from_config(cfg: dict, N: int | None = None) -> MixingNetwork:
    topo = cfg.get("topology")
    n_cfg = cfg.get("N", N)
    if N is not None and n_cfg is not None and int(n_cfg) != N:
        raise NetworkError(f"network N={n_cfg} does not match problem N={N}")
    if n_cfg is None and topo != "custom":
        raise NetworkError("network N missing")
    if topo == "ring":
        return ring_network(int(n_cfg))
    if topo == "exponential":
        return exponential_network(int(n_cfg), cfg.get("weighting", "uniform"))
    if topo == "random":
        return random_network(int(n_cfg), float(cfg.get("edge_prob", 0.1)), cfg.get("seed", 0))
    if topo == "custom":
        W = np.array(cfg["W"], dtype=float)
        if W.ndim == 1:
            n = int(round(np.sqrt(W.size)))
            W = W.reshape(n, n)
        net = MixingNetwork(W, label="custom")
        if N is not None and net.N != N:
            raise NetworkError(f"custom W has N={net.N}, problem has N={N}")
        return net
    raise NetworkError(f"unknown topology {topo!r}")
