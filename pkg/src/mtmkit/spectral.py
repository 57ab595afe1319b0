"""Exact transition matrices, spectral gaps, mixing times and path congestion.

Everything here works on an :class:`~mtmkit.toys.EnumeratedSpace` and is
meant for small spaces where exact answers are affordable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp

from .sampler import MtmConfig, WeightSpec, log_balancing, log_weights, mtm_step
from .toys import EnumeratedModel, EnumeratedSpace

__all__ = [
    "TransitionMatrix",
    "ReducibleChain",
    "MultimodalTarget",
    "InfiniteCongestion",
    "TupleGuardExceeded",
    "exact_mh_matrix",
    "exact_mtm_matrix",
    "exact_lbmh_matrix",
    "exact_mtm_move_probability",
    "mc_mtm_matrix",
    "detailed_balance_residual",
    "stationarity_residual",
    "stationary_distribution",
    "spectral_gap",
    "tv_mixing_time",
    "PathEnsemble",
    "greedy_path_ensemble",
    "congestion",
    "sinclair_bound",
    "spectral_report",
]

MAX_TRIALS = 3
MAX_DEGREE = 8


class ReducibleChain(ValueError):
    pass


class MultimodalTarget(ValueError):
    def __init__(self, modes):
        self.modes = list(modes)
        super().__init__(f"target has local modes other than the global one: {self.modes}")


class InfiniteCongestion(ValueError):
    pass


class TupleGuardExceeded(ValueError):
    pass


@dataclass
class TransitionMatrix:
    entries: np.ndarray
    lazy: bool = False
    stderr: np.ndarray | None = None

    def to_lazy(self) -> "TransitionMatrix":
        if self.lazy:
            return self
        n = self.entries.shape[0]
        return TransitionMatrix(0.5 * (self.entries + np.eye(n)), True)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def _fill_diagonal(P: np.ndarray) -> np.ndarray:
    np.fill_diagonal(P, 0.0)
    np.fill_diagonal(P, np.maximum(0.0, 1.0 - P.sum(axis=1)))
    return P


def _neighbor_weights(space: EnumeratedSpace, x: int, weight: WeightSpec) -> np.ndarray:
    nb = space.neighbor_lists[x]
    rev = np.array([space.log_k_between(int(y), x) for y in nb])
    return log_weights(space.log_pi[x], space.log_pi[nb], space.log_k[x], rev, weight)


def exact_mh_matrix(space: EnumeratedSpace) -> TransitionMatrix:
    n = space.size
    P = np.zeros((n, n))
    for x in range(n):
        for y, lk in zip(space.neighbor_lists[x], space.log_k[x]):
            ell = space.log_pi[y] + space.log_k_between(int(y), x) - space.log_pi[x] - lk
            P[x, y] += np.exp(lk + min(0.0, ell))
    return TransitionMatrix(_fill_diagonal(P))


def _tuples(d: int, m: int) -> np.ndarray:
    if m == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product(range(d), repeat=m)), dtype=np.int64)


def exact_mtm_move_probability(log_kx, lw_x, a: int, log_ky, lw_y, lw_back: float, N: int) -> float:
    """Exact probability that one MTM step from ``x`` lands on neighbor ``a``.

    Parameters
    ----------
    log_kx, lw_x : arrays over ``N(x)``
        Proposal log densities and log trial weights from ``x``.
    a : int
        Position of the target ``y`` in ``N(x)``.
    log_ky, lw_y : arrays over ``N(y)``
        The same quantities from ``y``.
    lw_back : float
        ``log w(x|y)``.

    The trials are exchangeable, so the selected one can be pinned to slot 1
    at the cost of a factor ``N``.
    """
    log_kx, lw_x = np.asarray(log_kx, float), np.asarray(lw_x, float)
    log_ky, lw_y = np.asarray(log_ky, float), np.asarray(lw_y, float)
    if lw_x[a] == -np.inf:
        return 0.0
    T = _tuples(len(lw_x), N - 1)
    log_pt = log_kx[T].sum(axis=1)
    lse_t = logsumexp(lw_x[T], axis=1) if N > 1 else np.full(1, -np.inf)
    log_num = np.logaddexp(lw_x[a], lse_t)
    log_sel = lw_x[a] - log_num
    R = _tuples(len(lw_y), N - 1)
    log_pr = log_ky[R].sum(axis=1)
    lse_r = logsumexp(lw_y[R], axis=1) if N > 1 else np.full(1, -np.inf)
    log_den = np.logaddexp(lw_back, lse_r)
    alpha = np.exp(np.minimum(0.0, log_num[:, None] - log_den[None, :]))
    inner = alpha @ np.exp(log_pr)
    return float(N * np.exp(log_kx[a]) * np.sum(np.exp(log_pt + log_sel) * inner))


def exact_mtm_matrix(space: EnumeratedSpace, config: MtmConfig) -> TransitionMatrix:
    """Exact MTM kernel by summing over every ordered trial and reference tuple.

    Raises
    ------
    TupleGuardExceeded
        When ``N > 3`` or some neighborhood exceeds 8 states; use
        :func:`mc_mtm_matrix` instead.
    """
    N = int(config.num_trials)
    if N > MAX_TRIALS or space.max_degree() > MAX_DEGREE:
        raise TupleGuardExceeded(
            f"exact enumeration needs N <= {MAX_TRIALS} and degree <= {MAX_DEGREE}; "
            "use mc_mtm_matrix for larger settings")
    w = config.weight
    lw = [_neighbor_weights(space, x, w) for x in range(space.size)]
    P = np.zeros((space.size, space.size))
    for x in range(space.size):
        for a, y in enumerate(space.neighbor_lists[x]):
            y = int(y)
            back = int(np.flatnonzero(space.neighbor_lists[y] == x)[0])
            P[x, y] += exact_mtm_move_probability(
                space.log_k[x], lw[x], a, space.log_k[y], lw[y], lw[y][back], N)
    return TransitionMatrix(_fill_diagonal(P))


def exact_lbmh_matrix(space: EnumeratedSpace, balancing: str = "sqrt") -> TransitionMatrix:
    n = space.size
    log_q, log_z = [], np.empty(n)
    for x in range(n):
        nb = space.neighbor_lists[x]
        rev = np.array([space.log_k_between(int(y), x) for y in nb])
        ell = space.log_pi[nb] + rev - space.log_pi[x] - space.log_k[x]
        logits = log_balancing(balancing, ell) + space.log_k[x]
        log_z[x] = logsumexp(logits)
        log_q.append(logits - log_z[x])
    P = np.zeros((n, n))
    for x in range(n):
        for y, lq in zip(space.neighbor_lists[x], log_q[x]):
            P[x, y] += np.exp(lq + min(0.0, log_z[x] - log_z[y]))
    return TransitionMatrix(_fill_diagonal(P))


def mc_mtm_matrix(space: EnumeratedSpace, config: MtmConfig, samples_per_state: int,
                  rng: np.random.Generator | None = None) -> TransitionMatrix:
    """Monte Carlo estimate of the MTM kernel with per-entry standard errors."""
    if samples_per_state < 10**4:
        raise ValueError("samples_per_state must be at least 1e4")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    model = EnumeratedModel(space)
    n = space.size
    counts = np.zeros((n, n))
    for x in range(n):
        lp = float(space.log_pi[x])
        for _ in range(samples_per_state):
            y, _ = mtm_step(model, x, config, rng, log_post_x=lp)
            counts[x, y] += 1
    P = counts / samples_per_state
    se = np.sqrt(P * (1 - P) / samples_per_state)
    return TransitionMatrix(P, stderr=se)


# ---------------------------------------------------------------------------
# reversibility and spectra


def _entries(P) -> np.ndarray:
    return P.entries if isinstance(P, TransitionMatrix) else np.asarray(P, dtype=float)


def detailed_balance_residual(P, space: EnumeratedSpace) -> float:
    flow = space.pi[:, None] * _entries(P)
    return float(np.max(np.abs(flow - flow.T)))


def stationarity_residual(P, space: EnumeratedSpace) -> float:
    return float(np.max(np.abs(space.pi @ _entries(P) - space.pi)))


def _check_irreducible(M: np.ndarray):
    ncomp, _ = connected_components(M > 0, directed=True, connection="strong")
    if ncomp > 1:
        raise ReducibleChain(f"chain has {ncomp} communicating classes")


def stationary_distribution(P) -> np.ndarray:
    M = _entries(P)
    _check_irreducible(M)
    vals, vecs = np.linalg.eig(M.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def _lazy(P) -> np.ndarray:
    if isinstance(P, TransitionMatrix) and P.lazy:
        return P.entries
    M = _entries(P)
    return 0.5 * (M + np.eye(M.shape[0]))


def lazy_eigenvalues(P, pi=None) -> np.ndarray:
    """Eigenvalues of the lazy chain, ascending, via the symmetric similarity."""
    L = _lazy(P)
    _check_irreducible(L)
    pi = stationary_distribution(L) if pi is None else np.asarray(pi, dtype=float)
    s = np.sqrt(pi)
    S = s[:, None] * L / s[None, :]
    return np.linalg.eigvalsh(0.5 * (S + S.T))


def spectral_gap(P, pi=None) -> float:
    """``1 - lambda_max`` of the lazy chain, where ``lambda_max`` is the second
    largest eigenvalue (lazy spectra are non-negative)."""
    ev = lazy_eigenvalues(P, pi)
    return float(1.0 - ev[-2])


def _worst_tv(L_t: np.ndarray, pi: np.ndarray) -> float:
    return float(0.5 * np.max(np.abs(L_t - pi[None, :]).sum(axis=1)))


def tv_mixing_time(P, space: EnumeratedSpace | None = None, eps: float = 0.25,
                   max_steps: int = 10**9) -> int:
    """Smallest ``t >= 0`` with ``max_x ||P_lazy^t(x, .) - pi||_TV <= eps``.

    The worst-row distance is non-increasing in ``t``; small ``t`` is found by
    direct iteration and large ``t`` by doubling then bisection on matrix powers.
    """
    L = _lazy(P)
    _check_irreducible(L)
    pi = space.pi if space is not None else stationary_distribution(L)
    Lt = np.eye(L.shape[0])
    for t in range(0, 1024):
        if _worst_tv(Lt, pi) <= eps:
            return t
        Lt = Lt @ L
    lo, hi = 1023, 2048
    while _worst_tv(np.linalg.matrix_power(L, hi), pi) > eps:
        lo, hi = hi, 2 * hi
        if hi > max_steps:
            raise RuntimeError(f"mixing time exceeds {max_steps}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _worst_tv(np.linalg.matrix_power(L, mid), pi) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# canonical paths


@dataclass
class PathEnsemble:
    """Greedy path ensemble built from the uphill map ``g``.

    ``chains[x]`` is ``x, g(x), g(g(x)), ..., mode``.  The path from ``x`` to
    ``y`` climbs from ``x`` until it meets the chain of ``y`` and then walks
    down that chain to ``y``.
    """

    g: np.ndarray
    mode: int
    chains: list
    ell: int

    def path(self, x: int, y: int) -> list:
        cx, cy = self.chains[x], self.chains[y]
        pos_y = {v: k for k, v in enumerate(cy)}
        for i, v in enumerate(cx):
            if v in pos_y:
                return cx[: i + 1] + cy[: pos_y[v]][::-1]
        raise AssertionError("chains must share the mode")

    def edges(self, x: int, y: int) -> list:
        p = self.path(x, y)
        return list(zip(p[:-1], p[1:]))


def greedy_path_ensemble(space: EnumeratedSpace) -> PathEnsemble:
    lp = space.log_pi
    mode = int(np.argmax(lp))
    g = np.empty(space.size, dtype=np.int64)
    for x in range(space.size):
        if x == mode:
            g[x] = x
            continue
        nb = np.sort(space.neighbor_lists[x])
        g[x] = nb[np.argmax(lp[nb])]  # argmax keeps the lowest index among ties
    chains, stuck = [], False
    for x in range(space.size):
        c = [x]
        while c[-1] != mode and len(c) <= space.size:
            c.append(int(g[c[-1]]))
        stuck |= c[-1] != mode
        chains.append(c)
    if stuck:
        local = [space.states[x] for x in range(space.size)
                 if x != mode and lp[x] >= lp[g[x]] and chains[x][-1] != mode]
        raise MultimodalTarget(local)
    ens = PathEnsemble(g, mode, chains, 0)
    ens.ell = max((len(ens.path(x, y)) - 1 for x in range(space.size) for y in range(space.size)
                   if x != y), default=0)
    return ens


def congestion(ens: PathEnsemble, P, space: EnumeratedSpace) -> float:
    """Maximum over directed edges of path load divided by ``pi(u) P(u, v)``.

    Every ordered pair ``(x, y)`` with ``x != y`` contributes
    ``pi(x) pi(y)`` to each directed edge on its path.
    """
    M = _entries(P)
    pi = space.pi
    load = {}
    for x in range(space.size):
        for y in range(space.size):
            if x == y:
                continue
            for e in ens.edges(x, y):
                load[e] = load.get(e, 0.0) + pi[x] * pi[y]
    rho = 0.0
    for (u, v), q in load.items():
        cap = pi[u] * M[u, v]
        if cap <= 0:
            raise InfiniteCongestion(f"path uses edge ({u}, {v}) with zero transition probability")
        rho = max(rho, q / cap)
    return rho


def sinclair_bound(rho: float, ell: int, space: EnumeratedSpace, eps: float = 0.25) -> float:
    """``2 rho ell (log(1/eps) + log(1/min pi))``."""
    return float(2.0 * rho * ell * (np.log(1.0 / eps) - np.min(space.log_pi)))


def spectral_report(space: EnumeratedSpace, P, eps: float = 0.25) -> dict:
    ens = greedy_path_ensemble(space)
    rho = congestion(ens, P, space)
    return {
        "gap": spectral_gap(P, space.pi),
        "t_mix": tv_mixing_time(P, space, eps),
        "rho": rho,
        "ell": ens.ell,
        "bound": sinclair_bound(rho, ens.ell, space, eps),
        "db_residual": detailed_balance_residual(P, space),
    }
