import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtmkit.bvs import BvsDataset, BvsHyper, BvsModel, bvs_log_posterior
from mtmkit.sampler import CapabilityError
from mtmkit.toys import EnumeratedModel, cycle_space
from mtmkit.tuner import (
    DegeneratePartition,
    RatioScan,
    neighbor_log_ratio_scan,
    select_num_trials,
    two_means_split,
)


def _sse(a):
    a = np.asarray(a, dtype=float)
    return float(((a - a.mean()) ** 2).sum()) if a.size else 0.0


def _brute_two_means(values):
    """Best split over every bipartition into two non-empty sets."""
    v = list(values)
    best = np.inf
    for mask in itertools.product([0, 1], repeat=len(v)):
        if 0 < sum(mask) < len(v):
            a = [x for x, m in zip(v, mask) if m == 0]
            b = [x for x, m in zip(v, mask) if m == 1]
            best = min(best, _sse(a) + _sse(b))
    return best


def test_two_means_examples():
    c1, c2 = two_means_split([3.0, -1.0, 3.2, -1.1])
    assert list(c1) == [-1.1, -1.0] and list(c2) == [3.0, 3.2]
    c1, c2 = two_means_split([10, 0])
    assert list(c1) == [0] and list(c2) == [10]
    with pytest.raises(DegeneratePartition):
        two_means_split([5, 5, 5])


@settings(max_examples=60)
@given(st.lists(st.integers(-20, 20).map(lambda k: k / 4), min_size=2, max_size=9).filter(
    lambda v: len(set(v)) >= 2))
def test_two_means_is_optimal_over_all_bipartitions(values):
    c1, c2 = two_means_split(values)
    assert c1.max() < c2.min()
    assert len(c1) + len(c2) == len(values)
    assert _sse(c1) + _sse(c2) == pytest.approx(_brute_two_means(values), abs=1e-9)


def test_hand_traced_selection():
    scan = RatioScan(np.array([-1.0] * 95 + [3.0] * 5), 1.0, 1.0, 100)
    est = select_num_trials(scan, 0.9)
    assert (est.t1_hat, est.t2_hat, est.s0_hat) == (-1.0, 3.0, 5)
    assert est.n_selected == 14 == int(np.floor(20**0.9))
    assert not est.degenerate


def test_dagger_resplits_at_t4():
    # two-means puts {0.5, 0.6} above, but t4 = 1 forces them into C1
    scan = RatioScan(np.array([-2.0] * 50 + [0.5, 0.6, 1.5]), 1.0, 1.0, 100)
    est = select_num_trials(scan, 0.9)
    assert est.t2_hat == 1.5
    assert est.t1_hat <= 1.0 < est.t2_hat


def test_dagger_without_any_ratio_above_t4():
    scan = RatioScan(np.array([-3.0] * 60 + [0.2] * 40), 1.0, 1.0, 100)
    est = select_num_trials(scan, 0.9)
    # t2 = t4 = 1, s0 = 1, t1 = 0.2; each loop absorbs one 0.2 while
    # (1 - 0.2)/2 < 1 - log_100(s0), i.e. until s0 >= 100**0.6, so s0 = 16
    assert est.t2_hat == 1.0
    assert est.s0_hat == 16 and est.t1_hat == 0.2
    assert est.n_selected == int(np.floor((100 / 16) ** 0.9)) == 5


def test_while_loop_exhausting_c1():
    scan = RatioScan(np.array([0.9, 0.95, 1.2]), 1.0, 1.0, 100)
    est = select_num_trials(scan, 0.5)
    assert est.s0_hat == 3 and est.t1_hat == -np.inf
    assert est.n_selected == int(np.floor((100 / 3) ** 0.5))


def test_degenerate_scan_falls_back_to_one_trial():
    scan = RatioScan(np.zeros(10), 1.0, 1.0, 10)
    with pytest.warns(UserWarning):
        est = select_num_trials(scan)
    assert est.n_selected == 1 and est.degenerate
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert select_num_trials(scan) == est


def test_invalid_inputs():
    with pytest.raises(ValueError):
        RatioScan(np.zeros(3), 1.0, 1.0, 1)
    with pytest.raises(ValueError):
        RatioScan(np.zeros(3), 1.2, 1.0, 10)
    with pytest.raises(ValueError):
        select_num_trials(RatioScan(np.array([0.0, 1.0]), 1.0, 1.0, 10), psi=1.0)


@settings(max_examples=100)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=60),
       st.sampled_from([2, 10, 100, 1000]), st.floats(0.05, 0.95))
def test_output_bound_determinism_and_dagger_guarantee(ratios, p, psi):
    ratios = np.asarray(ratios)
    if np.unique(ratios).size < 2:
        return
    t = np.log(ratios.size) / np.log(p)
    scan = RatioScan(ratios, t, t, p)
    est = select_num_trials(scan, psi)
    assert est == select_num_trials(scan, psi)
    assert 1 <= est.n_selected <= max(1, int(np.floor(np.exp(psi * t * np.log(p)) + 1e-9)))
    # N is the formula at the returned s0, and s0 only grew from the initial good set
    assert est.n_selected == max(1, int(np.floor((p**t / est.s0_hat) ** psi + 1e-9)))
    assert est.t1_hat < est.t2_hat and est.t2_hat >= t
    if np.any(ratios > t):
        assert est.t2_hat > t
        assert est.s0_hat >= np.sum(ratios >= est.t2_hat)
    if two_means_split(ratios)[1].min() < t and np.any(ratios > t):
        # the re-split branch places t4 between the clusters
        assert est.t1_hat <= t < est.t2_hat


def test_scan_of_uniform_neighborhood():
    m = EnumeratedModel(cycle_space((1 / 3, 1 / 3, 1 / 3)))
    scan = neighbor_log_ratio_scan(m, 0, 2)
    assert np.all(scan.ratios == 0) and scan.t3 == scan.t4 == pytest.approx(1.0)


def test_scan_t3_is_log_p_of_neighborhood_size():
    m = EnumeratedModel(cycle_space())
    scan = neighbor_log_ratio_scan(m, 0, 2)
    assert scan.t3 == pytest.approx(1.0)


def test_scan_bvs_matches_direct_posteriors():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 20))
    y = X[:, :3] @ [2.0, -1.0, 1.0] + rng.standard_normal(30)
    data = BvsDataset(X, y)
    hyper = BvsHyper(s_max=10)
    model = BvsModel(data, hyper)
    x0 = model.state([4, 7])
    scan = neighbor_log_ratio_scan(model, x0, 20)
    assert scan.t3 == pytest.approx(1.0)
    lp0 = bvs_log_posterior(data, hyper, [4, 7])
    direct = []
    for j in range(20):
        g = {4, 7} ^ {j}
        direct.append((bvs_log_posterior(data, hyper, sorted(g)) - lp0) / np.log(20))
    assert np.allclose(scan.ratios, direct, atol=1e-9)


def test_scan_requires_enumeration():
    from tests.test_sampler import Line

    with pytest.raises(CapabilityError):
        neighbor_log_ratio_scan(Line([0.0, 1.0, 2.0]), 1, 10)
