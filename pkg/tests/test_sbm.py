import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import betaln

from mtmkit.sampler import MtmConfig, WeightSpec, run_chain
from mtmkit.sbm import (
    SbmGraph,
    SbmHyper,
    SbmModel,
    block_counts,
    canonical_labels,
    ch_divergence,
    perm_invariant_hamming,
    read_graph,
    sbm_generate_graph,
    sbm_initial_state,
    sbm_log_posterior,
    within_prob_for_ch,
    write_graph,
)


def _random_graph(p, K, a, b, seed):
    return sbm_generate_graph(p, K, a, b, np.random.default_rng(seed))


def _brute_counts(graph, labels, K):
    """Pair-by-pair edge and non-edge counts over u <= v."""
    A = graph.adj.toarray()
    m = np.zeros((K, K), dtype=np.int64)
    mbar = np.zeros((K, K), dtype=np.int64)
    for i, j in itertools.combinations(range(graph.p), 2):
        u, v = sorted((labels[i], labels[j]))
        if A[i, j]:
            m[u, v] += 1
        else:
            mbar[u, v] += 1
    return m, mbar


def test_graph_validation_and_symmetry():
    g = SbmGraph(4, [[0, 1], [1, 0], [2, 3]])
    assert g.n_edges == 2
    A = g.adj.toarray()
    assert np.array_equal(A, A.T) and np.all(np.diag(A) == 0)
    with pytest.raises(ValueError):
        SbmGraph(3, [[1, 1]])
    with pytest.raises(ValueError):
        SbmGraph(3, [[0, 3]])
    with pytest.raises(ValueError):
        SbmHyper(K=1)


def test_empty_graph_example():
    g = SbmGraph(3, np.zeros((0, 2)))
    lp = sbm_log_posterior(g, SbmHyper(K=2, alpha=1000), [0, 0, 1])
    assert lp == pytest.approx(np.log(1 / 2) + np.log(1 / 3))


def test_posterior_matches_beta_function_oracle():
    g, _ = _random_graph(24, 3, 0.5, 0.1, 0)
    rng = np.random.default_rng(1)
    h = SbmHyper(K=3, kappa1=0.7, kappa2=2.5)
    for _ in range(5):
        z = rng.integers(3, size=24)
        m, mbar = _brute_counts(g, z, 3)
        iu = np.triu_indices(3)
        expected = betaln(h.kappa1 + m[iu], h.kappa2 + mbar[iu]).sum()
        assert sbm_log_posterior(g, h, z) == pytest.approx(expected, rel=1e-12)


def test_label_permutation_invariance():
    g, _ = _random_graph(30, 3, 0.4, 0.1, 2)
    h = SbmHyper(K=3)
    rng = np.random.default_rng(3)
    for _ in range(50):
        z = rng.integers(3, size=30)
        sigma = rng.permutation(3)
        assert abs(sbm_log_posterior(g, h, z) - sbm_log_posterior(g, h, sigma[z])) < 1e-10


def test_empty_block_outside_support():
    g, _ = _random_graph(10, 2, 0.5, 0.1, 0)
    assert sbm_log_posterior(g, SbmHyper(K=2, alpha=1.5), np.zeros(10, int)) == -np.inf
    assert sbm_log_posterior(g, SbmHyper(K=2, alpha=1000), np.zeros(10, int)) == -np.inf
    one = np.r_[np.zeros(9, int), 1]
    assert np.isfinite(sbm_log_posterior(g, SbmHyper(K=2, alpha=1000), one))
    assert sbm_log_posterior(g, SbmHyper(K=2, alpha=1.5), one) == -np.inf


def test_count_identities():
    g, z = _random_graph(40, 4, 0.3, 0.05, 4)
    sizes, m, M = block_counts(g, z, 4)
    bm, bmbar = _brute_counts(g, z, 4)
    iu = np.triu_indices(4)
    assert np.array_equal(m[iu], bm[iu])
    assert np.array_equal(m, m.T)
    assert m[iu].sum() == g.n_edges
    pairs = np.outer(sizes, sizes)
    np.fill_diagonal(pairs, sizes * (sizes - 1) // 2)
    assert np.array_equal(bm[iu] + bmbar[iu], pairs[iu])
    assert np.array_equal(M.sum(axis=1), g.degree)


def test_move_and_move_back_restore_counts():
    g, z = _random_graph(30, 3, 0.4, 0.1, 5)
    model = SbmModel(g, SbmHyper(K=3))
    x = model.state(z)
    y = model.move(model.move(x, 7, 2 if z[7] != 2 else 0), 7, int(z[7]))
    for f in ("labels", "sizes", "m", "M"):
        assert np.array_equal(getattr(x, f), getattr(y, f))
    assert y.log_post == pytest.approx(x.log_post, abs=1e-12)
    with pytest.raises(ValueError):
        model.move(x, 0, int(z[0]))


def test_incremental_counts_match_recount_over_random_walk():
    g, _ = _random_graph(60, 3, 0.3, 0.05, 6)
    model = SbmModel(g, SbmHyper(K=3))
    rng = np.random.default_rng(7)
    x = model.state(rng.integers(3, size=60))
    worst = 0.0
    for _ in range(1000):
        i = int(rng.integers(60))
        b = int((x.labels[i] + rng.integers(1, 3)) % 3)
        x = model.move(x, i, b)
        sizes, m, M = block_counts(g, x.labels, 3)
        assert np.array_equal(sizes, x.sizes) and np.array_equal(m, x.m) and np.array_equal(M, x.M)
        worst = max(worst, abs(x.log_post - sbm_log_posterior(g, model.hyper, x.labels)))
    assert worst < 1e-8


def test_isolated_node_move():
    g = SbmGraph(6, [[0, 1], [1, 2], [3, 4]])
    model = SbmModel(g, SbmHyper(K=2))
    x = model.state([0, 0, 0, 1, 1, 1])
    y = model.move(x, 5, 0)
    assert np.array_equal(x.m, y.m)
    assert y.sizes.tolist() == [4, 2]
    iu = np.triu_indices(2)
    from mtmkit.sbm import _non_edges

    assert not np.array_equal(_non_edges(x.sizes, x.m)[iu], _non_edges(y.sizes, y.m)[iu])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 5))
def test_batch_scores_match_committed_moves(seed, K):
    g, _ = _random_graph(5 * K, K, 0.5, 0.1, seed % 11)
    model = SbmModel(g, SbmHyper(K=K, alpha=3))
    rng = np.random.default_rng(seed)
    x = model.state(rng.integers(K, size=5 * K))
    nb = model.neighbors(x)
    for (i, b), lp in zip(nb.moves, nb.log_post):
        direct = model.move(x, int(i), int(b)).log_post
        assert lp == direct or abs(lp - direct) < 1e-10


def test_neighbor_proposal_k2_is_single_flip():
    g, z = _random_graph(10, 2, 0.5, 0.1, 0)
    model = SbmModel(g, SbmHyper(K=2))
    x = model.state(z)
    y, lf, lr = model.sample_neighbor(x, np.random.default_rng(0))
    assert np.sum(y.labels != x.labels) == 1
    assert np.exp(lf) == pytest.approx(1 / 10) and lf == lr
    assert len(model.enumerate_neighbors(x)) == model.neighborhood_size(x) == 10


def test_empirical_move_frequencies_are_uniform():
    g, z = _random_graph(6, 3, 0.5, 0.1, 1)
    model = SbmModel(g, SbmHyper(K=3))
    x = model.state(z)
    n = 10**6
    moves = model.sample_moves(x, n, np.random.default_rng(2))
    assert np.all(moves[:, 1] != x.labels[moves[:, 0]])
    counts = np.bincount(moves[:, 0] * 3 + moves[:, 1], minlength=18)
    counts = counts[counts > 0]
    assert counts.size == 12
    p = 1 / 12
    se = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(counts / n - p) < 3 * se)


def test_proposal_outside_support_is_returned():
    g = SbmGraph(4, [[0, 1]])
    model = SbmModel(g, SbmHyper(K=2, alpha=1.01))
    x = model.state([0, 0, 1, 1])
    nb = model.neighbors(x)
    assert len(nb.moves) == 4 and np.all(nb.log_post == -np.inf)


def test_hamming_examples():
    assert perm_invariant_hamming([0, 0, 1, 1], [1, 1, 0, 0], 2) == 0
    assert perm_invariant_hamming([0, 0, 0, 1], [0, 0, 1, 1], 2) == 1
    with pytest.raises(ValueError):
        perm_invariant_hamming([0, 2], [0, 1], 2)
    with pytest.raises(ValueError):
        perm_invariant_hamming([0, 1], [0, 1, 1], 2)


@settings(max_examples=50)
@given(st.integers(2, 5), st.integers(0, 10**6))
def test_hamming_symmetry_identity_and_brute_force(K, seed):
    rng = np.random.default_rng(seed)
    z, zp = rng.integers(K, size=9), rng.integers(K, size=9)
    d = perm_invariant_hamming(z, zp, K)
    assert perm_invariant_hamming(z, z, K) == 0
    assert d == perm_invariant_hamming(zp, z, K)
    brute = min(int(np.sum(z != np.array(s)[zp])) for s in itertools.permutations(range(K)))
    assert d == brute


def test_hamming_assignment_branch_matches_enumeration():
    rng = np.random.default_rng(0)
    K = 7
    for _ in range(5):
        z, zp = rng.integers(K, size=30), rng.integers(K, size=30)
        C = np.zeros((K, K), int)
        np.add.at(C, (z, zp), 1)
        brute = 30 - max(C[list(s), np.arange(K)].sum() for s in itertools.permutations(range(K)))
        assert perm_invariant_hamming(z, zp, K) == brute


def test_canonical_labels_collapse_permutations():
    assert canonical_labels([2, 2, 0, 1]).tolist() == [0, 0, 1, 2]
    g, z = _random_graph(8, 2, 0.5, 0.1, 0)
    model = SbmModel(g, SbmHyper(K=2))
    assert model.fingerprint(z) == model.fingerprint(1 - z)
    assert model.state_key(z) != model.state_key(1 - z)


def test_ch_divergence_examples():
    assert ch_divergence(0.1, 0.1, 2, 1000) == 0.0
    assert ch_divergence(0.222, 0.01, 2, 1000) == pytest.approx(10, abs=0.1)
    assert ch_divergence(0.07, 0.01, 2, 1000) == pytest.approx(2, abs=0.1)
    a = within_prob_for_ch(10, 0.01, 2, 1000)
    assert ch_divergence(a, 0.01, 2, 1000) == pytest.approx(10)
    with pytest.raises(ValueError):
        within_prob_for_ch(1000, 0.5, 2, 100)


def test_generated_within_density():
    g, z = sbm_generate_graph(1000, 2, 0.222, 0.01, np.random.default_rng(0))
    A = g.adj
    same = z[g.edges[:, 0]] == z[g.edges[:, 1]]
    n_within = 2 * (500 * 499 // 2)
    n_across = 500 * 500
    for count, n, q in ((same.sum(), n_within, 0.222), ((~same).sum(), n_across, 0.01)):
        se = np.sqrt(q * (1 - q) / n)
        assert abs(count / n - q) < 3 * se
    assert A.shape == (1000, 1000)
    with pytest.raises(ValueError):
        sbm_generate_graph(9, 2, 0.5, 0.1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sbm_generate_graph(10, 2, 0.1, 0.5, np.random.default_rng(0))


def test_graph_file_round_trip(tmp_path):
    g, _ = _random_graph(20, 2, 0.5, 0.1, 3)
    path = tmp_path / "g.csv"
    write_graph(g, path)
    back = read_graph(path)
    assert back.p == 20 and np.array_equal(back.edges, g.edges)
    bad = tmp_path / "bad.csv"
    bad.write_text("0,1\n")
    with pytest.raises(ValueError):
        read_graph(bad)


def test_initial_state_distance():
    g, z = _random_graph(100, 2, 0.3, 0.05, 0)
    model = SbmModel(g, SbmHyper(K=2))
    x0 = sbm_initial_state(model, z, 20, np.random.default_rng(1))
    assert perm_invariant_hamming(x0.labels, z, 2) == 20
    assert np.isfinite(x0.log_post)


def test_chain_cached_posterior_tracks_state():
    g, z = _random_graph(40, 2, 0.4, 0.05, 8)
    model = SbmModel(g, SbmHyper(K=2))
    x0 = model.state(np.random.default_rng(0).integers(2, size=40))
    tr = run_chain(model, x0, MtmConfig(5, WeightSpec.parse("sqrt"), seed=3), 300, record_states=True)
    direct = np.array([sbm_log_posterior(g, model.hyper, s) for s in tr.states])
    assert np.max(np.abs(direct - tr.log_post_series)) < 1e-8
