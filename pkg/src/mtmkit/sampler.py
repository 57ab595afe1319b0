"""Multiple-try Metropolis on discrete state spaces.

The step engine works against :class:`ModelSpace`, which exposes a target
log posterior and a random-walk neighborhood.  Models that can evaluate many
neighbors at once (the BVS and SBM targets) override :meth:`ModelSpace.propose`
and :meth:`ModelSpace.neighbors` so that a whole batch of trial posteriors is
computed from one base state; small models get a looping default.

Everything is carried in log space.  Trial weights, their normalizers and
the acceptance ratio all go through ``logsumexp``.
"""

from __future__ import annotations

import hashlib
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Literal, Sequence

import numpy as np

__all__ = [
    "CapabilityError",
    "DegenerateSelection",
    "InitializationError",
    "ModelSpace",
    "Proposals",
    "WeightSpec",
    "MtmConfig",
    "LbmhConfig",
    "LbmhCache",
    "StepStats",
    "ChainTrace",
    "balancing_eval",
    "log_balancing",
    "log_weight",
    "log_weights",
    "categorical_from_log_weights",
    "mtm_step",
    "lbmh_step",
    "run_chain",
    "fingerprint_bytes",
]

BALANCING = ("sqrt", "min1", "max1")
NEG_INF = -np.inf


class CapabilityError(TypeError):
    """The model lacks an optional capability (e.g. neighbor enumeration)."""


class DegenerateSelection(ValueError):
    """Every trial weight is zero, so no proposal can be selected."""


class InitializationError(ValueError):
    """The initial state has zero target probability."""


def fingerprint_bytes(data: bytes) -> int:
    """64-bit fingerprint of a canonical byte encoding."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass
class Proposals:
    """A batch of neighbor moves away from one base state.

    ``moves`` is model specific: the default implementation stores the
    neighbor states themselves, the BVS/SBM models store compact move codes
    and only build a full state in :meth:`ModelSpace.apply`.
    """

    moves: Any
    log_post: np.ndarray
    log_fwd: np.ndarray
    log_rev: np.ndarray

    def __len__(self) -> int:
        return len(self.log_post)


class ModelSpace(ABC):
    """Target distribution on a finite space with a random-walk neighborhood.

    Subclasses must provide :meth:`log_post`, :meth:`sample_neighbor` and
    :meth:`neighborhood_size`.  :meth:`enumerate_neighbors` is optional and
    needed only by the trial tuner, LBMH and the spectral tools.

    ``log_fwd`` and ``log_rev`` returned with a neighbor ``y`` of ``x`` are
    ``log K(x, y)`` and ``log K(y, x)``.  Implementations must be safe to call
    concurrently on shared immutable data.
    """

    @abstractmethod
    def log_post(self, state) -> float:
        """Unnormalized log target; ``-inf`` outside the support."""

    @abstractmethod
    def sample_neighbor(self, state, rng: np.random.Generator) -> tuple[Any, float, float]:
        """Draw ``y ~ K(x, .)`` and return ``(y, log K(x,y), log K(y,x))``."""

    @abstractmethod
    def neighborhood_size(self, state) -> int:
        ...

    def enumerate_neighbors(self, state) -> list[tuple[Any, float, float]]:
        raise CapabilityError(f"{type(self).__name__} cannot enumerate neighborhoods")

    # batch interface -------------------------------------------------

    def propose(self, state, n: int, rng: np.random.Generator) -> Proposals:
        """Draw ``n`` neighbors with replacement and evaluate their posteriors."""
        moves, lf, lr = [], np.empty(n), np.empty(n)
        for k in range(n):
            y, lf[k], lr[k] = self.sample_neighbor(state, rng)
            moves.append(y)
        lp = np.array([self.log_post(y) for y in moves], dtype=float)
        return Proposals(moves, lp, lf, lr)

    def neighbors(self, state) -> Proposals:
        """Every neighbor of ``state`` with its posterior and proposal densities."""
        nb = self.enumerate_neighbors(state)
        moves = [y for y, _, _ in nb]
        lp = np.array([self.log_post(y) for y in moves], dtype=float)
        lf = np.array([f for _, f, _ in nb], dtype=float)
        lr = np.array([r for _, _, r in nb], dtype=float)
        return Proposals(moves, lp, lf, lr)

    def apply(self, state, proposals: Proposals, i: int):
        """Materialize move ``i`` of a batch drawn from ``state``."""
        return proposals.moves[i]

    # bookkeeping -------------------------------------------------------

    def state_key(self, state):
        """Hashable canonical key; equal keys mean the same state."""
        return state

    def fingerprint(self, state) -> int:
        return fingerprint_bytes(repr(self.state_key(state)).encode())

    def snapshot(self, state):
        """Compact copy of ``state`` suitable for storing in a trace."""
        return self.state_key(state)

    def distance(self, a, b) -> float:
        """Distance between two snapshots; used for Hamming-based ESS."""
        raise CapabilityError(f"{type(self).__name__} defines no state distance")


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class WeightSpec:
    """Trial weight family.

    ``ordinary`` is ``w(y|x) = pi(y)``.  ``balanced`` is
    ``h(pi(y)K(y,x) / (pi(x)K(x,y)))`` with ``h`` one of ``sqrt``, ``min1``,
    ``max1``.
    """

    family: Literal["ordinary", "balanced"] = "balanced"
    balancing: Literal["sqrt", "min1", "max1"] | None = "sqrt"

    def __post_init__(self):
        if self.family == "ordinary":
            if self.balancing is not None:
                raise ValueError("ordinary weights take no balancing function")
        elif self.family == "balanced":
            if self.balancing not in BALANCING:
                raise ValueError(f"balancing must be one of {BALANCING}, got {self.balancing!r}")
        else:
            raise ValueError(f"unknown weight family {self.family!r}")

    @classmethod
    def parse(cls, name: str) -> "WeightSpec":
        """Build from a short name: ``ord``, ``sqrt``, ``min``, ``max``."""
        key = name.strip().lower()
        if key in ("ord", "ordinary"):
            return cls("ordinary", None)
        aliases = {"sqrt": "sqrt", "min": "min1", "min1": "min1", "max": "max1", "max1": "max1"}
        if key not in aliases:
            raise ValueError(f"unknown weight {name!r}")
        return cls("balanced", aliases[key])

    @property
    def name(self) -> str:
        if self.family == "ordinary":
            return "ord"
        return {"sqrt": "sqrt", "min1": "min", "max1": "max"}[self.balancing]


def balancing_eval(balancing: str, u: float) -> float:
    """Evaluate a balancing function ``h`` at ``u > 0``."""
    if not u > 0:
        raise ValueError(f"balancing functions are defined for u > 0, got {u}")
    if balancing == "sqrt":
        return float(np.sqrt(u))
    if balancing == "min1":
        return float(min(1.0, u))
    if balancing == "max1":
        return float(max(1.0, u))
    raise ValueError(f"unknown balancing function {balancing!r}")


def log_balancing(balancing: str, log_u):
    """``log h(exp(log_u))`` without exponentiating."""
    if balancing == "sqrt":
        return 0.5 * np.asarray(log_u, dtype=float)
    if balancing == "min1":
        return np.minimum(0.0, log_u)
    if balancing == "max1":
        return np.maximum(0.0, log_u)
    raise ValueError(f"unknown balancing function {balancing!r}")


def log_weights(lp_x: float, lp_y, log_fwd, log_rev, weight: WeightSpec) -> np.ndarray:
    """Vectorized log trial weights ``log w(y|x)`` for a batch of ``y``.

    Zero-probability trials get ``-inf`` under every family.
    """
    lp_y = np.asarray(lp_y, dtype=float)
    if weight.family == "ordinary":
        return lp_y.copy()
    dead = lp_y == NEG_INF
    with np.errstate(invalid="ignore"):
        ell = lp_y + np.asarray(log_rev, dtype=float) - lp_x - np.asarray(log_fwd, dtype=float)
        out = np.asarray(log_balancing(weight.balancing, ell), dtype=float)
    return np.where(dead, NEG_INF, out)


def log_weight(model: ModelSpace, x, y, log_fwd: float, log_rev: float, weight: WeightSpec) -> float:
    """``log w(y|x)`` for a single neighbor ``y`` of ``x``."""
    return float(log_weights(model.log_post(x), [model.log_post(y)], [log_fwd], [log_rev], weight)[0])


def logsumexp(a) -> float:
    """``log(sum(exp(a)))`` for a 1-D array, with ``-inf`` for an all-zero sum."""
    a = np.asarray(a, dtype=float)
    top = a.max()
    if top == NEG_INF:
        return NEG_INF
    return float(top + np.log(np.exp(a - top).sum()))


def categorical_from_log_weights(logw, rng: np.random.Generator) -> int:
    """Draw an index with probability proportional to ``exp(logw)``.

    Raises
    ------
    DegenerateSelection
        If every entry is ``-inf``.
    """
    logw = np.asarray(logw, dtype=float)
    top = logw.max()
    if top == NEG_INF:
        raise DegenerateSelection("all trial weights are zero")
    cdf = np.cumsum(np.exp(logw - top))
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


# ---------------------------------------------------------------------------
# configs and results


@dataclass(frozen=True)
class MtmConfig:
    num_trials: int = 1
    weight: WeightSpec = field(default_factory=WeightSpec)
    seed: int = 0

    def __post_init__(self):
        if int(self.num_trials) < 1:
            raise ValueError("num_trials must be >= 1")


@dataclass(frozen=True)
class LbmhConfig:
    """Locally balanced MH with a full-neighborhood informed proposal."""

    balancing: str = "sqrt"
    seed: int = 0

    def __post_init__(self):
        if self.balancing not in BALANCING:
            raise ValueError(f"balancing must be one of {BALANCING}")


@dataclass
class StepStats:
    accepted: bool
    log_alpha: float
    proposal_log_post: float
    weight_evals: int


@dataclass
class LbmhCache:
    """Informed proposal table of the current state, reused across steps."""

    key: Any
    table: Proposals
    log_q: np.ndarray
    log_z: float


@dataclass
class ChainTrace:
    log_post_series: np.ndarray
    state_fingerprints: np.ndarray
    acceptance_count: int
    wall_clock_marks: np.ndarray
    final_state: Any
    initial_log_post: float
    start_time: float
    states: list | None = None

    @property
    def n_steps(self) -> int:
        return len(self.log_post_series)

    @property
    def acceptance_rate(self) -> float:
        return self.acceptance_count / self.n_steps if self.n_steps else float("nan")

    def unique_states(self) -> int:
        return int(np.unique(self.state_fingerprints).size)


# ---------------------------------------------------------------------------
# steps


def _current_log_post(model: ModelSpace, x, log_post_x: float | None) -> float:
    lp = model.log_post(x) if log_post_x is None else log_post_x
    if not np.isfinite(lp):
        raise InitializationError("current state has zero target probability")
    return lp


def mtm_step(model: ModelSpace, x, config: MtmConfig, rng: np.random.Generator,
             log_post_x: float | None = None):
    """One multiple-try Metropolis transition.

    Draws ``N`` trials from ``K(x, .)`` with replacement, selects ``y`` in
    proportion to the trial weights, draws ``N - 1`` reference trials from
    ``K(y, .)`` and accepts with
    ``min(1, sum w(y_l|x) / (w(x|y) + sum w(x*_l|y)))``.

    Returns
    -------
    (state, StepStats)
        ``state`` is ``x`` itself on rejection.
    """
    lp_x = _current_log_post(model, x, log_post_x)
    n = int(config.num_trials)
    weight = config.weight

    trials = model.propose(x, n, rng)
    lw_fwd = log_weights(lp_x, trials.log_post, trials.log_fwd, trials.log_rev, weight)
    try:
        j = categorical_from_log_weights(lw_fwd, rng)
    except DegenerateSelection:
        return x, StepStats(False, NEG_INF, NEG_INF, n)

    lp_y = float(trials.log_post[j])
    y = None

    # w(x|y) reuses the densities of the selected move in reverse
    if weight.family == "ordinary":
        lw_back = lp_x
    else:
        ell = lp_x + trials.log_fwd[j] - lp_y - trials.log_rev[j]
        lw_back = float(log_balancing(weight.balancing, ell))
    if n > 1:
        y = model.apply(x, trials, j)
        refs = model.propose(y, n - 1, rng)
        lw_ref = log_weights(lp_y, refs.log_post, refs.log_fwd, refs.log_rev, weight)
        log_den = logsumexp(np.append(lw_ref, lw_back))
    else:
        log_den = lw_back
    log_alpha = min(0.0, float(logsumexp(lw_fwd) - log_den))
    accepted = rng.random() < np.exp(log_alpha)
    stats = StepStats(bool(accepted), log_alpha, lp_y, 2 * n - 1)
    if not accepted:
        return x, stats
    return (model.apply(x, trials, j) if y is None else y), stats


def _lbmh_table(model: ModelSpace, x, lp_x: float, balancing: str) -> LbmhCache:
    table = model.neighbors(x)
    with np.errstate(invalid="ignore"):
        ell = table.log_post + table.log_rev - lp_x - table.log_fwd
    logits = np.where(table.log_post == NEG_INF, NEG_INF,
                      log_balancing(balancing, ell)) + table.log_fwd
    log_z = float(logsumexp(logits))
    return LbmhCache(model.state_key(x), table, logits - log_z, log_z)


def lbmh_step(model: ModelSpace, x, balancing: str, cache: LbmhCache | None,
              rng: np.random.Generator, log_post_x: float | None = None):
    """One locally balanced MH transition with a full-neighborhood proposal.

    The proposal table of ``x`` is taken from ``cache`` when its key matches,
    so an unchanged state costs only the evaluation of ``N(y)``.

    Returns
    -------
    (state, StepStats, LbmhCache)
    """
    lp_x = _current_log_post(model, x, log_post_x)
    evals = 0
    if cache is None or cache.key != model.state_key(x):
        cache = _lbmh_table(model, x, lp_x, balancing)
        evals += len(cache.table)
    i = categorical_from_log_weights(cache.log_q, rng)
    lp_y = float(cache.table.log_post[i])
    y = model.apply(x, cache.table, i)
    y_cache = _lbmh_table(model, y, lp_y, balancing)
    evals += len(y_cache.table)
    log_alpha = min(0.0, cache.log_z - y_cache.log_z)
    accepted = rng.random() < np.exp(log_alpha)
    stats = StepStats(bool(accepted), log_alpha, lp_y, evals)
    if accepted:
        return y, stats, y_cache
    return x, stats, cache


# ---------------------------------------------------------------------------
# chains

Hook = Callable[[int, Any, "StepStats | None"], bool]


def run_chain(model: ModelSpace, x0, config: MtmConfig | LbmhConfig, T: int,
              hooks: Sequence[Hook] = (), rng: np.random.Generator | None = None,
              record_states: bool = False) -> ChainTrace:
    """Run up to ``T`` transitions from ``x0``.

    Each hook is called as ``hook(t, x_t, stats)`` for ``t = 0`` (with
    ``stats=None``) and after every step; a truthy return stops the chain
    with ``t`` steps recorded.  ``rng`` defaults to a generator seeded from
    ``config.seed``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    lp0 = model.log_post(x0)
    if not np.isfinite(lp0):
        raise InitializationError("initial state has zero target probability")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    lp_series = np.empty(T)
    fps = np.empty(T, dtype=np.uint64)
    marks = np.empty(T)
    states = [] if record_states else None
    accepted_total = 0
    x, lp_x = x0, lp0
    cache = None
    is_lbmh = isinstance(config, LbmhConfig)
    start = time.perf_counter()

    t = 0
    if not any(h(0, x, None) for h in hooks):
        for t in range(1, T + 1):
            if is_lbmh:
                x, stats, cache = lbmh_step(model, x, config.balancing, cache, rng, log_post_x=lp_x)
            else:
                x, stats = mtm_step(model, x, config, rng, log_post_x=lp_x)
            if stats.accepted:
                lp_x = stats.proposal_log_post
                accepted_total += 1
            lp_series[t - 1] = lp_x
            fps[t - 1] = model.fingerprint(x)
            marks[t - 1] = time.perf_counter()
            if record_states:
                states.append(model.snapshot(x))
            if any(h(t, x, stats) for h in hooks):
                break
    return ChainTrace(lp_series[:t].copy(), fps[:t].copy(), accepted_total, marks[:t].copy(),
                      x, lp0, start, states)
