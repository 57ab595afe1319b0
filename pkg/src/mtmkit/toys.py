"""Small enumerable targets and the two-tier counterexample landscape."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom, multinomial

from .sampler import ModelSpace, Proposals, WeightSpec, log_weights

__all__ = [
    "EnumeratedSpace",
    "EnumeratedModel",
    "SpaceTooLarge",
    "enumerate_space",
    "hypercube_space",
    "cycle_space",
    "two_state_space",
    "TwoTierLandscape",
    "two_tier_acceptance",
]

MAX_STATES = 2**16


class SpaceTooLarge(ValueError):
    pass


@dataclass
class EnumeratedSpace:
    """A finite state space with normalized target and proposal kernel.

    ``log_k[i]`` holds ``log K(i, j)`` for ``j`` in ``neighbor_lists[i]``.
    """

    states: list
    index: dict
    log_pi: np.ndarray
    neighbor_lists: list
    log_k: list
    name: str = ""

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)

    @property
    def mode(self) -> int:
        return int(np.argmax(self.log_pi))

    def log_k_between(self, i: int, j: int) -> float:
        pos = np.flatnonzero(self.neighbor_lists[i] == j)
        return float(self.log_k[i][pos[0]]) if pos.size else -np.inf

    def kernel_matrix(self) -> np.ndarray:
        K = np.zeros((self.size, self.size))
        for i, (nb, lk) in enumerate(zip(self.neighbor_lists, self.log_k)):
            K[i, nb] = np.exp(lk)
        return K

    def max_degree(self) -> int:
        return max(len(nb) for nb in self.neighbor_lists)


def _normalize(log_pi) -> np.ndarray:
    log_pi = np.asarray(log_pi, dtype=float)
    return log_pi - logsumexp(log_pi)


def _uniform_space(states, log_pi, neighbor_lists, name) -> EnumeratedSpace:
    nbs = [np.asarray(nb, dtype=np.int64) for nb in neighbor_lists]
    log_k = [np.full(len(nb), -np.log(len(nb))) for nb in nbs]
    index = {s: i for i, s in enumerate(states)}
    return EnumeratedSpace(list(states), index, _normalize(log_pi), nbs, log_k, name)


def hypercube_space(m: int = 3, mode=None, beta: float = 1.0) -> EnumeratedSpace:
    """``{0,1}^m`` with ``pi(x) ∝ exp(-beta * d_H(x, mode))`` and single-flip moves.

    The default mode is ``(1, 1, 0, ..., 0)``.  States are ordered
    lexicographically, so the index of a bit tuple is its binary value.
    """
    if mode is None:
        mode = (1, 1) + (0,) * (m - 2)
    mode = np.asarray(mode)
    states = list(itertools.product((0, 1), repeat=m))
    log_pi = [-beta * float(np.sum(np.asarray(s) != mode)) for s in states]
    nbs = [[i ^ (1 << (m - 1 - b)) for b in range(m)] for i in range(len(states))]
    return _uniform_space(states, log_pi, nbs, f"hypercube{m}")


def cycle_space(pi=(0.2, 0.3, 0.5)) -> EnumeratedSpace:
    """A ring of ``len(pi)`` states; each state neighbors its two ring mates."""
    k = len(pi)
    if k < 3:
        raise ValueError("a cycle needs at least three states")
    nbs = [sorted({(i - 1) % k, (i + 1) % k}) for i in range(k)]
    return _uniform_space(list(range(k)), np.log(pi), nbs, f"cycle{k}")


def two_state_space(pi=(1 / 3, 2 / 3)) -> EnumeratedSpace:
    return _uniform_space([0, 1], np.log(pi), [[1], [0]], "two_state")


TOYS = {
    "hypercube3": lambda: hypercube_space(3),
    "hypercube4": lambda: hypercube_space(4),
    "cycle3": lambda: cycle_space(),
    "two_state": lambda: two_state_space(),
}


def enumerate_space(model_or_name, start=None, max_states: int = MAX_STATES) -> EnumeratedSpace:
    """Enumerate a finite space.

    ``model_or_name`` is either a built-in toy name (``hypercube3``,
    ``hypercube4``, ``cycle3``, ``two_state``) or a :class:`ModelSpace`
    with neighbor enumeration, explored breadth-first from ``start``.
    Zero-probability states are kept out of the space; moves into them are
    simply absent from the kernel rows (they would always be rejected).
    """
    if isinstance(model_or_name, str):
        try:
            return TOYS[model_or_name]()
        except KeyError:
            raise ValueError(f"unknown toy {model_or_name!r}; choose from {sorted(TOYS)}") from None
    model = model_or_name
    if start is None:
        raise ValueError("a start state is required to enumerate a model")
    keys, states, log_post = [], [], []
    index = {}
    raw_nb = []
    frontier = [start]
    index[model.state_key(start)] = 0
    keys.append(model.state_key(start))
    states.append(start)
    while frontier:
        nxt = []
        for s in frontier:
            rows = []
            for y, lf, lr in model.enumerate_neighbors(s):
                if not np.isfinite(model.log_post(y)):
                    continue
                key = model.state_key(y)
                if key not in index:
                    if len(states) >= max_states:
                        raise SpaceTooLarge(f"more than {max_states} states")
                    index[key] = len(states)
                    keys.append(key)
                    states.append(y)
                    nxt.append(y)
                rows.append((index[key], lf))
            raw_nb.append((index[model.state_key(s)], rows))
        frontier = nxt
    nbs = [None] * len(states)
    log_k = [None] * len(states)
    for i, rows in raw_nb:
        nbs[i] = np.array([j for j, _ in rows], dtype=np.int64)
        log_k[i] = np.array([lf for _, lf in rows], dtype=float)
    log_pi = np.array([model.log_post(s) for s in states])
    return EnumeratedSpace(keys, index, _normalize(log_pi), nbs, log_k,
                           type(model).__name__)


class EnumeratedModel(ModelSpace):
    """Sampling view of an :class:`EnumeratedSpace`; states are row indices."""

    def __init__(self, space: EnumeratedSpace):
        self.space = space
        self._cdf = [np.cumsum(np.exp(lk)) for lk in space.log_k]

    def log_post(self, state) -> float:
        return float(self.space.log_pi[state])

    def _draw(self, state, n, rng):
        cdf = self._cdf[state]
        return np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), len(cdf) - 1)

    def sample_neighbor(self, state, rng):
        (pos,) = self._draw(state, 1, rng)
        y = int(self.space.neighbor_lists[state][pos])
        return y, float(self.space.log_k[state][pos]), self.space.log_k_between(y, state)

    def neighborhood_size(self, state) -> int:
        return len(self.space.neighbor_lists[state])

    def enumerate_neighbors(self, state):
        sp = self.space
        return [(int(y), float(lf), sp.log_k_between(int(y), state))
                for y, lf in zip(sp.neighbor_lists[state], sp.log_k[state])]

    def propose(self, state, n, rng) -> Proposals:
        pos = self._draw(state, n, rng)
        ys = self.space.neighbor_lists[state][pos]
        lr = np.array([self.space.log_k_between(int(y), state) for y in ys])
        return Proposals(ys, self.space.log_pi[ys], self.space.log_k[state][pos], lr)

    def apply(self, state, proposals, i):
        return int(proposals.moves[i])

    def fingerprint(self, state) -> int:
        return int(state)

    def distance(self, a, b) -> float:
        return float(a != b)


# ---------------------------------------------------------------------------
# two-tier counterexample landscape


class TwoTierLandscape(ModelSpace):
    """Tree-shaped landscape where every state has ``D = p**t3`` neighbors.

    A state is the tuple of child indices from the root.  From the root all
    ``D`` neighbors are children; elsewhere one neighbor is the parent and
    ``D - 1`` are children.  Children ``0..s0-1`` sit at log ratio
    ``t2 * log p`` above their parent, the rest at ``(t1 / 2) * log p``.
    The root with one of its high children reproduces the local situation in
    which the ordinary weight ``pi(y)`` collapses the acceptance rate.
    """

    def __init__(self, p: int = 100, t1: float = 1.0, t2: float = 2.0, t3: float = 1.0, s0: int = 1):
        D = p**t3
        if abs(D - round(D)) > 1e-9:
            raise ValueError("p**t3 must be an integer neighborhood size")
        self.p, self.t1, self.t2, self.t3, self.s0 = p, t1, t2, t3, s0
        self.D = int(round(D))
        if not 1 <= s0 < self.D - 1:
            raise ValueError("need 1 <= s0 < D - 1")
        self.high = t2 * np.log(p)
        self.low = 0.5 * t1 * np.log(p)

    root = ()

    def _step(self, c: int) -> float:
        return self.high if c < self.s0 else self.low

    def log_post(self, state) -> float:
        return float(sum(self._step(c) for c in state))

    def _children(self, state):
        return self.D if state == () else self.D - 1

    def enumerate_neighbors(self, state):
        lk = -np.log(self.D)
        out = [] if state == () else [(state[:-1], lk, lk)]
        out += [(state + (c,), lk, lk) for c in range(self._children(state))]
        return out

    def sample_neighbor(self, state, rng):
        lk = -np.log(self.D)
        c = int(rng.integers(self.D))
        if state != () and c == self.D - 1:
            return state[:-1], lk, lk
        return state + (c,), lk, lk

    def neighborhood_size(self, state) -> int:
        return self.D


def two_tier_acceptance(N: int, weight: WeightSpec, p: int = 100, t1: float = 1.0, t2: float = 2.0,
                        t3: float = 1.0, s0: int = 1, tail: float = 1e-15) -> dict:
    """Exact MTM acceptance for a move from the root into its high set.

    Because trial weights take only a handful of values, the sum over trial
    tuples collapses to a sum over multinomial counts.  Count configurations
    whose probability is below ``tail`` are dropped; the dropped mass is
    reported as ``neglected_mass``.

    Returns
    -------
    dict
        ``acceptance``: P(accept | proposal in the high set);
        ``p_propose``: P(proposal in the high set); ``p_move``: their product.
    """
    land = TwoTierLandscape(p, t1, t2, t3, s0)
    D = land.D
    # trial weights from the root (log pi(root) = 0)
    lw_hi, lw_lo = log_weights(0.0, [land.high, land.low], [0.0, 0.0], [0.0, 0.0], weight)
    # weights from the proposal y: back to the root, to y's high and low children
    lp_y = land.high
    lw_back, lw_hi_y, lw_lo_y = log_weights(
        lp_y, [0.0, lp_y + land.high, lp_y + land.low], [0.0] * 3, [0.0] * 3, weight)

    k = np.arange(N + 1)
    pk = binom.pmf(k, N, s0 / D)
    keep = (pk > tail) & (k >= 1)
    k, pk = k[keep], pk[keep]
    log_num = np.logaddexp(np.log(k) + lw_hi, np.where(N - k > 0, np.log(np.maximum(N - k, 1)) + lw_lo, -np.inf))
    sel = np.exp(np.log(k) + lw_hi - log_num)

    # reference counts (c_back, c_hi, c_lo) over N - 1 draws from N(y)
    m = N - 1
    probs = np.array([1.0, s0, D - 1 - s0]) / D
    cb = np.arange(m + 1)
    cb = cb[binom.pmf(cb, m, probs[0]) > tail]
    ch = np.arange(m + 1)
    ch = ch[binom.pmf(ch, m, probs[1]) > tail]
    grid_b, grid_h = np.meshgrid(cb, ch, indexing="ij")
    grid_l = m - grid_b - grid_h
    ok = grid_l >= 0
    cnt = np.stack([grid_b[ok], grid_h[ok], grid_l[ok]], axis=1)
    pref = multinomial.pmf(cnt, m, probs) if m > 0 else np.ones(1)
    if m == 0:
        cnt = np.zeros((1, 3), dtype=int)

    def lse_count(c, lw):
        return np.where(c > 0, np.log(np.maximum(c, 1)) + lw, -np.inf)

    log_den = np.logaddexp.reduce(np.stack([
        np.log1p(cnt[:, 0]) + lw_back,
        lse_count(cnt[:, 1], lw_hi_y),
        lse_count(cnt[:, 2], lw_lo_y),
    ]), axis=0)
    alpha = np.exp(np.minimum(0.0, log_num[:, None] - log_den[None, :]))
    e_alpha = alpha @ pref
    p_prop = float(np.sum(pk * sel))
    p_move = float(np.sum(pk * sel * e_alpha))
    neglected = 1.0 - (float(pk.sum()) + float(binom.pmf(0, N, s0 / D))) + (1.0 - float(np.sum(pref)))
    return {"acceptance": p_move / p_prop, "p_propose": p_prop, "p_move": p_move,
            "neglected_mass": max(neglected, 0.0)}
