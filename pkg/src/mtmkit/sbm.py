"""Stochastic block model with Beta-Bernoulli marginal likelihood.

With ``m_uv`` edges and ``mbar_uv`` non-edges between blocks ``u <= v``,

    log pi(z) = sum_{u <= v} log B(kappa1 + m_uv, kappa2 + mbar_uv)

on the balanced support ``p/(alpha K) <= n_u <= alpha p / K``.  A state keeps
the block-pair edge counts ``m`` and the node-to-block edge counts ``M`` so a
single relabel is scored in ``O(K^2)`` and committed in ``O(deg + K)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment
from scipy.special import gammaln

from .sampler import ModelSpace, Proposals, fingerprint_bytes

__all__ = [
    "SbmGraph",
    "SbmHyper",
    "SbmState",
    "SbmModel",
    "block_counts",
    "sbm_log_posterior",
    "perm_invariant_hamming",
    "canonical_labels",
    "sbm_generate_graph",
    "ch_divergence",
    "within_prob_for_ch",
    "sbm_initial_state",
    "write_graph",
    "read_graph",
]

PERM_ENUM_MAX_K = 6


class SbmGraph:
    """Undirected simple graph stored as CSR neighbor lists."""

    def __init__(self, p: int, edges):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if p < 1:
            raise ValueError("p must be positive")
        if edges.size and (edges.min() < 0 or edges.max() >= p):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        lo, hi = np.minimum(edges[:, 0], edges[:, 1]), np.maximum(edges[:, 0], edges[:, 1])
        uniq = np.unique(np.stack([lo, hi], axis=1), axis=0) if edges.size else edges
        self.p = int(p)
        self.edges = uniq
        rows = np.concatenate([uniq[:, 0], uniq[:, 1]])
        cols = np.concatenate([uniq[:, 1], uniq[:, 0]])
        self.adj = sp.csr_matrix((np.ones(rows.size, dtype=np.int64), (rows, cols)), shape=(p, p))
        self.degree = np.diff(self.adj.indptr)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adj
        return a.indices[a.indptr[i]:a.indptr[i + 1]]


@dataclass(frozen=True)
class SbmHyper:
    K: int = 2
    kappa1: float = 1.0
    kappa2: float = 1.0
    alpha: float = 1000.0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if min(self.kappa1, self.kappa2, self.alpha) <= 0:
            raise ValueError("kappa1, kappa2 and alpha must be positive")


@dataclass(eq=False)
class SbmState:
    """Partition with cached counts; treat as immutable.

    ``m`` is symmetric with within-block edge counts on the diagonal;
    ``M[i, u]`` is the number of neighbors of node ``i`` in block ``u``.
    """

    labels: np.ndarray
    sizes: np.ndarray
    m: np.ndarray
    M: np.ndarray
    log_post: float


def block_counts(graph: SbmGraph, labels, K: int):
    """From-scratch ``(sizes, m, M)`` for a labeling."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size != graph.p:
        raise ValueError("labels must have length p")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError("label out of range")
    Z = sp.csr_matrix((np.ones(graph.p), (np.arange(graph.p), labels)), shape=(graph.p, K))
    M = np.asarray((graph.adj @ Z).todense()).astype(np.int64)
    full = np.asarray((Z.T @ sp.csr_matrix(M)).todense()).astype(np.int64)
    m = full.copy()
    np.fill_diagonal(m, np.diag(full) // 2)
    sizes = np.bincount(labels, minlength=K).astype(np.int64)
    return sizes, m, M


def _non_edges(sizes, m):
    sizes = np.asarray(sizes)
    pairs = sizes[..., :, None] * sizes[..., None, :]
    diag = sizes * (sizes - 1) // 2
    K = sizes.shape[-1]
    pairs = pairs.copy()
    pairs[..., np.arange(K), np.arange(K)] = diag
    return pairs - m


def _log_post_counts(sizes, m, hyper: SbmHyper, p: int):
    """Vectorized over leading batch axes of ``sizes (..., K)`` and ``m (..., K, K)``."""
    K = hyper.K
    iu = np.triu_indices(K)
    mu = m[..., iu[0], iu[1]]
    mb = _non_edges(sizes, m)[..., iu[0], iu[1]]
    a, b = hyper.kappa1 + mu, hyper.kappa2 + mb
    lp = np.sum(gammaln(a) + gammaln(b) - gammaln(a + b), axis=-1)
    lo, hi = p / (hyper.alpha * K), hyper.alpha * p / K
    inside = np.all((sizes >= lo) & (sizes <= hi), axis=-1)
    return np.where(inside, lp, -np.inf)


def sbm_log_posterior(graph: SbmGraph, hyper: SbmHyper, labels) -> float:
    sizes, m, _ = block_counts(graph, labels, hyper.K)
    return float(_log_post_counts(sizes, m, hyper, graph.p))


def canonical_labels(labels) -> np.ndarray:
    """Relabel blocks in order of first occurrence."""
    labels = np.asarray(labels, dtype=np.int64)
    uniq, first = np.unique(labels, return_index=True)
    order = uniq[np.argsort(first)]
    lut = np.empty(uniq.max() + 1 if uniq.size else 0, dtype=np.int64)
    lut[order] = np.arange(order.size)
    return lut[labels]


def perm_invariant_hamming(z, z_prime, K: int) -> int:
    """``min_sigma sum_i 1{z_i != sigma(z'_i)}`` over permutations of ``[K]``.

    Exact enumeration for ``K <= 6``, optimal assignment beyond; both are exact.
    """
    z, zp = np.asarray(z, dtype=np.int64), np.asarray(z_prime, dtype=np.int64)
    if z.shape != zp.shape:
        raise ValueError("partitions must have equal length")
    for arr in (z, zp):
        if arr.size and (arr.min() < 0 or arr.max() >= K):
            raise ValueError("label out of range")
    C = np.zeros((K, K), dtype=np.int64)
    np.add.at(C, (z, zp), 1)
    if K <= PERM_ENUM_MAX_K:
        cols = np.arange(K)
        best = max(int(C[list(perm), cols].sum()) for perm in itertools.permutations(range(K)))
    else:
        r, c = linear_sum_assignment(C, maximize=True)
        best = int(C[r, c].sum())
    return int(z.size - best)


class SbmModel(ModelSpace):
    """SBM target with the uniform single-relabel proposal.

    Moves are ``(node, new_label)`` rows; ``K(z, z') = 1/(p(K-1))`` both ways.
    """

    def __init__(self, graph: SbmGraph, hyper: SbmHyper | None = None):
        self.graph = graph
        self.hyper = hyper or SbmHyper()
        self.p = graph.p
        self.K = self.hyper.K
        self._log_k = -np.log(self.p * (self.K - 1))

    def state(self, labels) -> SbmState:
        labels = np.asarray(labels, dtype=np.int64).copy()
        sizes, m, M = block_counts(self.graph, labels, self.K)
        lp = float(_log_post_counts(sizes, m, self.hyper, self.p))
        return SbmState(labels, sizes, m, M, lp)

    def log_post(self, state) -> float:
        if isinstance(state, SbmState):
            return state.log_post
        return sbm_log_posterior(self.graph, self.hyper, state)

    def _labels(self, state):
        return state.labels if isinstance(state, SbmState) else np.asarray(state, dtype=np.int64)

    def state_key(self, state):
        return self._labels(state).astype(np.int8 if self.K < 128 else np.int64).tobytes()

    def fingerprint(self, state) -> int:
        return fingerprint_bytes(canonical_labels(self._labels(state)).astype(np.int64).tobytes())

    def snapshot(self, state):
        return self._labels(state).copy()

    def distance(self, a, b) -> float:
        return float(perm_invariant_hamming(a, b, self.K))

    # counts -------------------------------------------------------------

    def _deltas(self, state: SbmState, nodes, new):
        """Speculative ``(sizes, m)`` for each move, shape ``(n, K)`` and ``(n, K, K)``."""
        n, K = len(nodes), self.K
        old = state.labels[nodes]
        e = state.M[nodes]
        rows = np.arange(n)
        dm = np.zeros((n, K, K), dtype=np.int64)
        for c, sign in ((old, -1), (new, 1)):
            dm[rows, c, :] += sign * e
            dm[rows, :, c] += sign * e
            dm[rows, c, c] -= sign * e[rows, c]
        sizes = np.repeat(state.sizes[None, :], n, axis=0)
        sizes[rows, old] -= 1
        sizes[rows, new] += 1
        return sizes, state.m[None] + dm

    def score_moves(self, state: SbmState, moves) -> np.ndarray:
        moves = np.asarray(moves, dtype=np.int64).reshape(-1, 2)
        sizes, m = self._deltas(state, moves[:, 0], moves[:, 1])
        return _log_post_counts(sizes, m, self.hyper, self.p)

    def move(self, state: SbmState, i: int, b: int) -> SbmState:
        """Commit relabeling node ``i`` to block ``b``."""
        a = int(state.labels[i])
        if a == b:
            raise ValueError("new label must differ from the current one")
        if not 0 <= b < self.K:
            raise ValueError("label out of range")
        sizes, m = self._deltas(state, np.array([i]), np.array([b]))
        labels = state.labels.copy()
        labels[i] = b
        M = state.M.copy()
        nb = self.graph.neighbors(i)
        M[nb, a] -= 1
        M[nb, b] += 1
        lp = float(_log_post_counts(sizes[0], m[0], self.hyper, self.p))
        return SbmState(labels, sizes[0], m[0], M, lp)

    # proposal -----------------------------------------------------------

    def sample_moves(self, state: SbmState, n: int, rng: np.random.Generator) -> np.ndarray:
        nodes = rng.integers(self.p, size=n)
        shift = rng.integers(1, self.K, size=n)
        return np.stack([nodes, (state.labels[nodes] + shift) % self.K], axis=1)

    def propose(self, state, n, rng) -> Proposals:
        moves = self.sample_moves(state, n, rng)
        lk = np.full(n, self._log_k)
        return Proposals(moves, self.score_moves(state, moves), lk, lk.copy())

    def neighbors(self, state) -> Proposals:
        nodes = np.repeat(np.arange(self.p), self.K - 1)
        shift = np.tile(np.arange(1, self.K), self.p)
        moves = np.stack([nodes, (state.labels[nodes] + shift) % self.K], axis=1)
        lk = np.full(len(moves), self._log_k)
        return Proposals(moves, self.score_moves(state, moves), lk, lk.copy())

    def apply(self, state, proposals, i):
        i_node, b = proposals.moves[i]
        return self.move(state, int(i_node), int(b))

    def sample_neighbor(self, state, rng):
        (i, b), = self.sample_moves(state, 1, rng)
        return self.move(state, int(i), int(b)), self._log_k, self._log_k

    def enumerate_neighbors(self, state):
        nb = self.neighbors(state)
        return [(self.move(state, int(i), int(b)), self._log_k, self._log_k) for i, b in nb.moves]

    def neighborhood_size(self, state) -> int:
        return self.p * (self.K - 1)


def sbm_sample_neighbor(model: SbmModel, state: SbmState, rng: np.random.Generator):
    return model.sample_neighbor(state, rng)


# ---------------------------------------------------------------------------
# synthetic graphs


def ch_divergence(a: float, b: float, K: int, p: int) -> float:
    """``p (sqrt(a) - sqrt(b))^2 / (K log p)``."""
    return float(p * (np.sqrt(a) - np.sqrt(b)) ** 2 / (K * np.log(p)))


def within_prob_for_ch(ch: float, b: float, K: int, p: int) -> float:
    """The within-block probability ``a >= b`` giving divergence ``ch``."""
    a = (np.sqrt(b) + np.sqrt(ch * K * np.log(p) / p)) ** 2
    if a > 1:
        raise ValueError(f"CH={ch} is unreachable with b={b} at p={p}")
    return float(a)


def sbm_generate_graph(p: int, K: int, a: float, b: float, rng: np.random.Generator):
    """Homogeneous SBM on the balanced partition ``(0,..,0, 1,..,1, ...)``."""
    if not 0 <= b <= a <= 1:
        raise ValueError("need 0 <= b <= a <= 1")
    if K < 2 or p % K:
        raise ValueError("p must be divisible by K >= 2")
    z = np.repeat(np.arange(K), p // K)
    i, j = np.triu_indices(p, 1)
    prob = np.where(z[i] == z[j], a, b)
    hit = rng.random(i.size) < prob
    return SbmGraph(p, np.stack([i[hit], j[hit]], axis=1)), z


def sbm_initial_state(model: SbmModel, true_labels, distance: int, rng: np.random.Generator,
                      max_tries: int = 1000) -> SbmState:
    """Relabel ``distance`` random nodes of the truth to other random blocks.

    Draws are repeated until the permutation-invariant distance equals
    ``distance`` and the start lies in the support.
    """
    z = np.asarray(true_labels, dtype=np.int64)
    K = model.K
    if not 0 <= distance <= z.size:
        raise ValueError("distance out of range")
    for _ in range(max_tries):
        nodes = rng.choice(z.size, size=distance, replace=False)
        z0 = z.copy()
        z0[nodes] = (z[nodes] + rng.integers(1, K, size=distance)) % K
        if perm_invariant_hamming(z0, z, K) == distance:
            st = model.state(z0)
            if np.isfinite(st.log_post):
                return st
    raise ValueError(f"could not reach permutation-invariant distance {distance}")


def write_graph(graph: SbmGraph, path):
    with open(path, "w") as fh:
        fh.write(f"# p={graph.p}\n")
        for i, j in graph.edges:
            fh.write(f"{i},{j}\n")


def read_graph(path) -> SbmGraph:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# p="):
        raise ValueError("graph file must start with '# p=<p>'")
    p = int(text[0][4:])
    edges = [tuple(int(v) for v in line.split(",")) for line in text[1:] if line.strip()]
    return SbmGraph(p, np.array(edges, dtype=np.int64).reshape(-1, 2))
