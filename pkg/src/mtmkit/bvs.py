"""Bayesian variable selection with a g-prior marginal likelihood.

The posterior of an inclusion set ``gamma`` is

    log pi(gamma) = -kappa |gamma| log p - |gamma|/2 log(1 + G) - n/2 log SSR(gamma)

with ``SSR = y'y - G/(G+1) y'X_g (X_g'X_g)^{-1} X_g'y``.  A state carries the
upper Cholesky factor ``R`` of ``X_g'X_g`` and ``z = R^{-T} X_g'y`` so that
``q = ||z||^2`` is the explained sum of squares.  Candidate moves are scored
in batches from one base factor: additions by a triangular solve against the
new columns, deletions from ``R^{-1}``.  Only the selected move is committed,
by bordering ``R`` (addition) or Givens retriangularization (deletion).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .sampler import ModelSpace, Proposals, fingerprint_bytes

__all__ = [
    "BvsDataset",
    "BvsHyper",
    "BvsState",
    "BvsModel",
    "BvsDataSpec",
    "NumericalRankError",
    "bvs_log_posterior",
    "ssr_direct",
    "bvs_generate_dataset",
    "bvs_initial_state",
    "write_dataset",
    "read_dataset",
]

RANK_TOL = 1e-10
XTX_MAX_P = 2500
SIGNAL = np.array([2, -3, 2, 2, -3, 3, -2, 3, -2, 3], dtype=float)
MAGIC = b"MTMBVS01"


class NumericalRankError(np.linalg.LinAlgError):
    """Selected columns are (numerically) linearly dependent."""


@dataclass
class BvsDataset:
    X: np.ndarray
    y: np.ndarray
    XtX: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2 or self.X.shape[0] != self.y.size or self.y.size < 1 or self.X.shape[1] < 1:
            raise ValueError(f"incompatible shapes X{self.X.shape}, y{self.y.shape}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset has non-finite entries")
        self.yty = float(self.y @ self.y)
        self.Xty = self.X.T @ self.y
        self.col_sq = np.einsum("ij,ij->j", self.X, self.X)
        if self.XtX is None and self.p <= XTX_MAX_P:
            self.XtX = self.X.T @ self.X

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def gram(self, rows, cols) -> np.ndarray:
        if self.XtX is not None:
            return self.XtX[np.ix_(rows, cols)]
        return self.X[:, rows].T @ self.X[:, cols]


@dataclass(frozen=True)
class BvsHyper:
    """``g_scale`` defaults to ``p**3`` and ``s_max`` to ``min(100, p)``."""

    g_scale: float | None = None
    kappa: float = 2.0
    s_max: int | None = None

    def resolve(self, p: int) -> "BvsHyper":
        g = float(p) ** 3 if self.g_scale is None else float(self.g_scale)
        s = min(100, p) if self.s_max is None else int(self.s_max)
        if g <= 0 or self.kappa <= 0:
            raise ValueError("g_scale and kappa must be positive")
        if not 1 <= s <= p:
            raise ValueError(f"s_max must lie in [1, p={p}], got {s}")
        return BvsHyper(g, float(self.kappa), s)


def _indices(gamma, p: int) -> np.ndarray:
    g = np.asarray(gamma)
    if g.dtype == bool:
        if g.size != p:
            raise ValueError("inclusion vector has wrong length")
        return np.flatnonzero(g)
    return np.asarray(sorted(set(int(j) for j in g.ravel())), dtype=np.int64)


def _log_post_from_q(q, size, data: BvsDataset, hyper: BvsHyper):
    q = np.asarray(q, dtype=float)
    size = np.asarray(size)
    G = hyper.g_scale
    ssr = (data.yty - q) + q / (1.0 + G)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = (-hyper.kappa * size * np.log(data.p) - 0.5 * size * np.log1p(G)
              - 0.5 * data.n * np.log(ssr))
    return np.where((size > hyper.s_max) | ~(ssr > 0), -np.inf, lp)


def ssr_direct(data: BvsDataset, gamma, hyper: BvsHyper) -> float:
    """SSR from a fresh Cholesky factorization."""
    hyper = hyper.resolve(data.p)
    idx = _indices(gamma, data.p)
    if idx.size == 0:
        return data.yty
    R = _fresh_factor(data, idx)
    z = solve_triangular(R, data.Xty[idx], trans="T")
    q = float(z @ z)
    return data.yty - q + q / (1.0 + hyper.g_scale)


def _fresh_factor(data: BvsDataset, idx) -> np.ndarray:
    A = data.gram(idx, idx)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NumericalRankError("X_gamma'X_gamma is not positive definite") from None
    d2 = np.diag(L) ** 2
    if np.any(d2 <= RANK_TOL * data.col_sq[idx]):
        raise NumericalRankError("selected columns are collinear")
    return L.T


def bvs_log_posterior(data: BvsDataset, hyper: BvsHyper, gamma) -> float:
    """Unnormalized log posterior, computed from scratch.

    Raises
    ------
    NumericalRankError
        If the selected columns are linearly dependent.
    """
    hyper = hyper.resolve(data.p)
    idx = _indices(gamma, data.p)
    if idx.size > hyper.s_max:
        return -np.inf
    q = 0.0
    if idx.size:
        R = _fresh_factor(data, idx)
        z = solve_triangular(R, data.Xty[idx], trans="T")
        q = float(z @ z)
    return float(_log_post_from_q(q, idx.size, data, hyper))


@dataclass(eq=False)
class BvsState:
    """Inclusion set with its Cholesky factor; treat as immutable.

    ``idx`` lists included columns in factor order (not sorted).
    """

    inclusion: np.ndarray
    idx: np.ndarray
    R: np.ndarray
    z: np.ndarray
    ssr: float
    log_post: float
    _rinv: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.idx.size)

    @property
    def q(self) -> float:
        return float(self.z @ self.z)

    def rinv(self) -> np.ndarray:
        if self._rinv is None:
            self._rinv = solve_triangular(self.R, np.eye(self.size))
        return self._rinv

    def indices(self) -> tuple:
        return tuple(sorted(int(j) for j in self.idx))


def _givens_delete(R: np.ndarray, z: np.ndarray, k: int):
    """Drop column ``k`` of ``R`` and retriangularize, rotating ``z`` alongside."""
    H = np.delete(R, k, axis=1)
    z = z.copy()
    s = R.shape[0]
    for i in range(k, s - 1):
        a, b = H[i, i], H[i + 1, i]
        r = np.hypot(a, b)
        c, sn = (1.0, 0.0) if r == 0 else (a / r, b / r)
        top, bot = H[i, i:].copy(), H[i + 1, i:].copy()
        H[i, i:] = c * top + sn * bot
        H[i + 1, i:] = -sn * top + c * bot
        zi, zj = z[i], z[i + 1]
        z[i], z[i + 1] = c * zi + sn * zj, -sn * zi + c * zj
    return np.triu(H[: s - 1]), z[: s - 1]


class BvsModel(ModelSpace):
    """BVS target with the single-flip / swap random-walk proposal.

    Below ``s_max`` every coordinate flip has probability ``1/p``.  At
    ``|gamma| = s_max`` a single flip (``1/(2p)``) and a swap
    (``1/(2 |gamma| (p - |gamma|))``) are mixed half and half.  When no swap
    exists (``|gamma| = p``) the single flip is used alone.

    Moves are encoded as ``(j_add, k_remove)`` rows where ``k_remove`` is a
    position in ``state.idx`` and ``-1`` marks an absent part.
    """

    def __init__(self, data: BvsDataset, hyper: BvsHyper | None = None):
        self.data = data
        self.hyper = (hyper or BvsHyper()).resolve(data.p)
        self.p = data.p
        self._logp = np.log(self.p)

    # states ----------------------------------------------------------

    def state(self, gamma) -> BvsState:
        """Build a state from an inclusion vector or an index list."""
        idx = _indices(gamma, self.p)
        inc = np.zeros(self.p, dtype=bool)
        inc[idx] = True
        if idx.size:
            R = _fresh_factor(self.data, idx)
            z = solve_triangular(R, self.data.Xty[idx], trans="T")
        else:
            R, z = np.zeros((0, 0)), np.zeros(0)
        q = float(z @ z)
        lp = float(_log_post_from_q(q, idx.size, self.data, self.hyper))
        ssr = self.data.yty - q + q / (1 + self.hyper.g_scale)
        return BvsState(inc, idx.astype(np.int64), R, z, ssr, lp)

    def log_post(self, state) -> float:
        if isinstance(state, BvsState):
            return state.log_post
        try:
            return bvs_log_posterior(self.data, self.hyper, state)
        except NumericalRankError:
            return -np.inf

    def state_key(self, state):
        return state.indices() if isinstance(state, BvsState) else tuple(_indices(state, self.p))

    def fingerprint(self, state) -> int:
        return fingerprint_bytes(np.asarray(self.state_key(state), dtype=np.int64).tobytes())

    def snapshot(self, state):
        return self.state_key(state)

    def distance(self, a, b) -> float:
        return float(len(set(a) ^ set(b)))

    # incremental update ---------------------------------------------------

    def add(self, state: BvsState, j: int) -> BvsState:
        """Commit the addition of column ``j``."""
        if state.inclusion[j]:
            raise ValueError(f"column {j} is already included")
        d = self.data
        if state.size:
            v = d.gram(state.idx, [j])[:, 0]
            r = solve_triangular(state.R, v, trans="T")
        else:
            r = np.zeros(0)
        d2 = d.col_sq[j] - r @ r
        if not d2 > RANK_TOL * d.col_sq[j]:
            raise NumericalRankError(f"column {j} is collinear with the current selection")
        dj = np.sqrt(d2)
        s = state.size
        R = np.zeros((s + 1, s + 1))
        R[:s, :s] = state.R
        R[:s, s] = r
        R[s, s] = dj
        z = np.append(state.z, (d.Xty[j] - r @ state.z) / dj)
        return self._finish(state.inclusion, np.append(state.idx, j), R, z, flip=j)

    def remove(self, state: BvsState, j: int) -> BvsState:
        """Commit the removal of column ``j``."""
        pos = np.flatnonzero(state.idx == j)
        if pos.size == 0:
            raise ValueError(f"column {j} is not included")
        return self._remove_pos(state, int(pos[0]))

    def _remove_pos(self, state: BvsState, k: int) -> BvsState:
        j = int(state.idx[k])
        R, z = _givens_delete(state.R, state.z, k)
        return self._finish(state.inclusion, np.delete(state.idx, k), R, z, flip=j)

    def _finish(self, inclusion, idx, R, z, flip) -> BvsState:
        inc = inclusion.copy()
        inc[flip] = ~inc[flip]
        q = float(z @ z)
        lp = float(_log_post_from_q(q, idx.size, self.data, self.hyper))
        ssr = self.data.yty - q + q / (1 + self.hyper.g_scale)
        return BvsState(inc, idx, R, z, ssr, lp)

    def flip(self, state: BvsState, j: int) -> BvsState:
        return self.remove(state, j) if state.inclusion[j] else self.add(state, j)

    # batch scoring ----------------------------------------------------

    def score_moves(self, state: BvsState, moves: np.ndarray) -> np.ndarray:
        """Log posteriors of ``(j_add, k_remove)`` moves without committing them."""
        moves = np.asarray(moves, dtype=np.int64).reshape(-1, 2)
        d, s = self.data, state.size
        jj, kk = moves[:, 0], moves[:, 1]
        has_add, has_rem = jj >= 0, kk >= 0
        new_size = s + has_add.astype(int) - has_rem.astype(int)
        q_new = np.full(len(moves), state.q)
        ok = new_size <= self.hyper.s_max

        if has_rem.any():
            Rinv = state.rinv()
            beta = Rinv @ state.z
            a = np.einsum("ij,ij->i", Rinv, Rinv)
            krem = kk[has_rem]
            q_new[has_rem] -= beta[krem] ** 2 / a[krem]

        need = has_add & ok
        if need.any():
            J, inv = np.unique(jj[need], return_inverse=True)
            if s:
                r = solve_triangular(state.R, d.gram(state.idx, J), trans="T")
                quad = np.einsum("ij,ij->j", r, r)
                cross = r.T @ state.z
            else:
                r = np.zeros((0, J.size))
                quad = cross = np.zeros(J.size)
            d2 = (d.col_sq[J] - quad)[inv]
            num = (d.Xty[J] - cross)[inv]
            swap = has_rem[need]
            if swap.any():
                k = kk[need][swap]
                u = np.einsum("ij,ji->i", Rinv[k], r[:, inv[swap]])
                d2[swap] += u**2 / a[k]
                num[swap] += u * beta[k] / a[k]
            good = d2 > RANK_TOL * d.col_sq[jj[need]]
            q_add = np.where(good, num**2 / np.where(good, d2, 1.0), 0.0)
            q_new[need] += q_add
            bad = np.flatnonzero(need)[~good]
            ok[bad] = False
        lp = _log_post_from_q(q_new, new_size, d, self.hyper)
        return np.where(ok, lp, -np.inf)

    # proposal -----------------------------------------------------------

    def _swap_mode(self, s: int) -> bool:
        return s == self.hyper.s_max and s < self.p

    def _log_density_single(self, s: int) -> float:
        return -self._logp - (np.log(2.0) if self._swap_mode(s) else 0.0)

    def _single_rev(self, s_new: np.ndarray) -> np.ndarray:
        swap = (s_new == self.hyper.s_max) & (s_new < self.p)
        return -self._logp - np.where(swap, np.log(2.0), 0.0)

    def _code_single(self, state: BvsState, j: np.ndarray) -> np.ndarray:
        pos = np.full(self.p, -1, dtype=np.int64)
        pos[state.idx] = np.arange(state.size)
        k = pos[j]
        return np.stack([np.where(k >= 0, -1, j), k], axis=1)

    def _densities(self, state: BvsState, moves: np.ndarray):
        s = state.size
        swap = (moves[:, 0] >= 0) & (moves[:, 1] >= 0)
        s_new = s + (moves[:, 0] >= 0) - (moves[:, 1] >= 0)
        lf = np.full(len(moves), self._log_density_single(s))
        lr = self._single_rev(s_new)
        if swap.any():
            ls = -np.log(2.0 * s * (self.p - s))
            lf[swap] = ls
            lr[swap] = ls
        return lf, lr

    def sample_moves(self, state: BvsState, n: int, rng: np.random.Generator) -> np.ndarray:
        s = state.size
        moves = self._code_single(state, rng.integers(self.p, size=n))
        if self._swap_mode(s):
            use_swap = rng.random(n) < 0.5
            m = int(use_swap.sum())
            if m:
                k = rng.integers(s, size=m)
                excluded = np.flatnonzero(~state.inclusion)
                j = excluded[rng.integers(excluded.size, size=m)]
                moves[use_swap] = np.stack([j, k], axis=1)
        return moves

    def propose(self, state, n, rng) -> Proposals:
        moves = self.sample_moves(state, n, rng)
        lf, lr = self._densities(state, moves)
        return Proposals(moves, self.score_moves(state, moves), lf, lr)

    def neighbors(self, state) -> Proposals:
        moves = self._code_single(state, np.arange(self.p))
        s = state.size
        if self._swap_mode(s):
            excluded = np.flatnonzero(~state.inclusion)
            jj, kk = np.meshgrid(excluded, np.arange(s), indexing="ij")
            moves = np.vstack([moves, np.stack([jj.ravel(), kk.ravel()], axis=1)])
        lf, lr = self._densities(state, moves)
        return Proposals(moves, self.score_moves(state, moves), lf, lr)

    def apply(self, state: BvsState, proposals: Proposals, i: int) -> BvsState:
        return self.apply_move(state, proposals.moves[i])

    def apply_move(self, state: BvsState, move) -> BvsState:
        j, k = int(move[0]), int(move[1])
        out = state
        if k >= 0:
            out = self._remove_pos(out, k)
        if j >= 0:
            try:
                out = self.add(out, j)
            except NumericalRankError:
                inc = out.inclusion.copy()
                inc[j] = True
                return BvsState(inc, np.append(out.idx, j), out.R, out.z, np.nan, -np.inf)
        return out

    def sample_neighbor(self, state, rng):
        moves = self.sample_moves(state, 1, rng)
        lf, lr = self._densities(state, moves)
        return self.apply_move(state, moves[0]), float(lf[0]), float(lr[0])

    def enumerate_neighbors(self, state):
        nb = self.neighbors(state)
        return [(self.apply_move(state, m), float(f), float(r))
                for m, f, r in zip(nb.moves, nb.log_fwd, nb.log_rev)]

    def neighborhood_size(self, state) -> int:
        s = state.size
        return self.p + (s * (self.p - s) if self._swap_mode(s) else 0)


def bvs_sample_neighbor(model: BvsModel, state: BvsState, rng: np.random.Generator):
    """``(gamma', log K(gamma, gamma'), log K(gamma', gamma))``."""
    return model.sample_neighbor(state, rng)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class BvsDataSpec:
    """Simulation design.

    ``design`` is ``independent``, ``dependent`` (``Sigma_jk = exp(-|j-k|)``)
    or ``multimodal`` (block diagonal ``exp(-|j-k|/3)`` blocks of 20 with
    ``n_signals`` random Gaussian effects of scale ``sigma_beta``).
    """

    n: int = 1000
    p: int = 5000
    snr: float = 4.0
    design: str = "independent"
    sigma_beta: float = 0.3
    n_signals: int = 100
    block: int = 20

    def __post_init__(self):
        if self.design not in ("independent", "dependent", "multimodal"):
            raise ValueError(f"unknown design {self.design!r}")
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if self.design != "multimodal" and self.p < SIGNAL.size:
            raise ValueError(f"p must be at least {SIGNAL.size}")
        if self.design == "multimodal" and (self.n_signals > self.p or self.p % self.block):
            raise ValueError("multimodal design needs n_signals <= p and p divisible by the block size")


def _ar_cholesky(m: int, rho: float) -> np.ndarray:
    """Cholesky factor of the AR(1) correlation ``rho**|j-k|`` in closed form."""
    L = np.zeros((m, m))
    L[:, 0] = rho ** np.arange(m)
    c = np.sqrt(1 - rho**2)
    for k in range(1, m):
        L[k:, k] = c * rho ** np.arange(m - k)
    return L


def bvs_generate_dataset(spec: BvsDataSpec, rng: np.random.Generator):
    """Simulate ``(BvsDataset, true_gamma)`` with ``y = X beta + N(0, I)``."""
    n, p = spec.n, spec.p
    Z = rng.standard_normal((n, p))
    beta = np.zeros(p)
    if spec.design == "independent":
        X = Z
    elif spec.design == "dependent":
        # AR(1) recursion: x_j = rho x_{j-1} + sqrt(1-rho^2) e_j
        rho = np.exp(-1.0)
        X = np.empty_like(Z)
        X[:, 0] = Z[:, 0]
        c = np.sqrt(1 - rho**2)
        for j in range(1, p):
            X[:, j] = rho * X[:, j - 1] + c * Z[:, j]
    else:
        L = _ar_cholesky(spec.block, np.exp(-1.0 / 3.0))
        X = (Z.reshape(n, p // spec.block, spec.block) @ L.T).reshape(n, p)
    if spec.design == "multimodal":
        sig = rng.choice(p, size=spec.n_signals, replace=False)
        beta[sig] = rng.normal(0.0, spec.sigma_beta, size=spec.n_signals)
    else:
        beta[: SIGNAL.size] = spec.snr * np.sqrt(np.log(p) / n) * SIGNAL
    y = X @ beta + rng.standard_normal(n)
    return BvsDataset(X, y), beta != 0


def bvs_initial_state(model: BvsModel, true_gamma, distance: int, rng: np.random.Generator) -> BvsState:
    """Start at Hamming distance ``distance`` from ``true_gamma``.

    The start includes ``distance - |true_gamma|`` random non-true columns and
    none of the true ones, as in the simulation protocol with the null
    model replaced by random decoys.
    """
    true_idx = np.flatnonzero(np.asarray(true_gamma, dtype=bool))
    extra = distance - true_idx.size
    if extra < 0:
        raise ValueError("distance must be at least |true_gamma|")
    pool = np.setdiff1d(np.arange(model.p), true_idx)
    if extra > min(pool.size, model.hyper.s_max):
        raise ValueError("distance too large for p and s_max")
    return model.state(rng.choice(pool, size=extra, replace=False))


# ---------------------------------------------------------------------------
# files


def write_dataset(data: BvsDataset, path, fmt: str | None = None):
    """Write ``csv`` (header, ``y`` first) or ``bin`` (magic, n, p, then y, X row-major)."""
    path = Path(path)
    fmt = fmt or ("bin" if path.suffix in (".bin", ".dat") else "csv")
    if fmt == "csv":
        header = ",".join(["y"] + [f"x{j}" for j in range(data.p)])
        np.savetxt(path, np.column_stack([data.y, data.X]), delimiter=",", header=header,
                   comments="", fmt="%.17g")
    elif fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<qq", data.n, data.p))
            fh.write(data.y.astype("<f8").tobytes())
            fh.write(data.X.astype("<f8").tobytes())
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_dataset(path) -> BvsDataset:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head == MAGIC:
            n, p = struct.unpack("<qq", fh.read(16))
            buf = np.frombuffer(fh.read(), dtype="<f8")
            if buf.size != n * (p + 1):
                raise ValueError("truncated binary dataset")
            return BvsDataset(buf[n:].reshape(n, p), buf[:n])
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return BvsDataset(arr[:, 1:], arr[:, 0])
