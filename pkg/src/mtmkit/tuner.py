"""Choosing the number of trials from one scan of the initial neighborhood."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .sampler import InitializationError, ModelSpace

__all__ = [
    "RatioScan",
    "TunerEstimates",
    "DegeneratePartition",
    "neighbor_log_ratio_scan",
    "two_means_split",
    "select_num_trials",
]


class DegeneratePartition(ValueError):
    pass


@dataclass(frozen=True)
class RatioScan:
    """Base-``p`` log posterior ratios ``log_p(pi(y)/pi(x0))`` over ``N(x0)``."""

    ratios: np.ndarray
    t3: float
    t4: float
    p: int

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be at least 2")
        if self.t3 > self.t4:
            raise ValueError("t3 must not exceed t4")
        if len(self.ratios) == 0:
            raise ValueError("empty neighborhood")


@dataclass(frozen=True)
class TunerEstimates:
    t1_hat: float
    t2_hat: float
    s0_hat: int
    psi: float
    n_selected: int
    degenerate: bool = False


def neighbor_log_ratio_scan(model: ModelSpace, x0, p: int) -> RatioScan:
    """Evaluate every neighbor of ``x0`` once.

    ``t3 = t4 = log_p |N(x0)|``, which is exact for proposals with a
    constant neighborhood size.
    """
    lp0 = model.log_post(x0)
    if not np.isfinite(lp0):
        raise InitializationError("x0 has zero target probability")
    nb = model.neighbors(x0)
    logp = np.log(p)
    ratios = (np.asarray(nb.log_post, dtype=float) - lp0) / logp
    t = np.log(len(nb)) / logp
    return RatioScan(ratios, t, t, int(p))


def two_means_split(values) -> tuple[np.ndarray, np.ndarray]:
    """Optimal 1-D two-cluster partition by exhaustive contiguous splits.

    Cuts are only placed between distinct values, so tied values always land
    in the same cluster.  Ties in the objective go to the leftmost cut.

    Returns
    -------
    (C1, C2)
        Sorted lower and upper clusters.
    """
    v = np.sort(np.asarray(values, dtype=float))
    cuts = np.flatnonzero(np.diff(v) > 0) + 1
    if cuts.size == 0:
        raise DegeneratePartition("need at least two distinct values")
    n = v.size
    c1 = np.concatenate([[0.0], np.cumsum(v)])
    c2 = np.concatenate([[0.0], np.cumsum(v * v)])
    k = cuts
    sse_lo = c2[k] - c1[k] ** 2 / k
    sse_hi = (c2[n] - c2[k]) - (c1[n] - c1[k]) ** 2 / (n - k)
    best = int(k[np.argmin(sse_lo + sse_hi)])
    return v[:best], v[best:]


def select_num_trials(scan: RatioScan, psi: float = 0.9) -> TunerEstimates:
    """Estimate ``t1, t2, s0`` from the scan and return ``N = floor((p^t3/s0)^psi)``.

    If all ratios coincide there is nothing to cluster; ``N = 1`` is returned
    with ``degenerate=True`` and a warning.
    """
    if not 0.0 < psi < 1.0:
        raise ValueError("psi must lie in (0, 1)")
    logp = np.log(scan.p)
    t3, t4 = scan.t3, scan.t4
    try:
        C1, C2 = two_means_split(scan.ratios)
    except DegeneratePartition:
        warnings.warn("all neighbor ratios are equal; falling back to N = 1", stacklevel=2)
        r = float(scan.ratios[0])
        return TunerEstimates(r, r, 1, psi, 1, degenerate=True)

    if C2[0] < t4:
        # the good set must sit strictly above t4
        allv = np.concatenate([C1, C2])
        C1, C2 = allv[allv <= t4], allv[allv > t4]
    if C2.size == 0:
        t2, s0 = t4, 1
    else:
        t2, s0 = float(C2[0]), int(C2.size)
    C1 = list(C1)
    t1 = float(C1[-1]) if C1 else -np.inf

    # while p^((t2-t1)/2) < p^t3 / s0, absorb the largest small ratio
    while C1 and (t2 - t1) / 2 < t3 - np.log(s0) / logp:
        C1.pop()
        s0 += 1
        t1 = float(C1[-1]) if C1 else -np.inf

    log_n = psi * (t3 * logp - np.log(s0))
    n = max(1, int(np.floor(np.exp(log_n) + 1e-9)))
    return TunerEstimates(t1, t2, s0, psi, n)
