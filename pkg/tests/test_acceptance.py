"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criteria 1 to 3 run desk-scale hitting-time experiments (minutes each, marked
``slow``).  Criterion 4 is the full-scale reproduction and only runs with
``MTMKIT_FULL_SCALE=1``.
"""

import os
import warnings

import numpy as np
import pytest

from mtmkit.bench import ExperimentConfig, ess_series, run_experiment
from mtmkit.bvs import BvsDataset, BvsHyper, BvsModel, ssr_direct
from mtmkit.sampler import MtmConfig, WeightSpec
from mtmkit.sbm import SbmHyper, SbmModel, block_counts, sbm_generate_graph
from mtmkit.spectral import (
    detailed_balance_residual,
    exact_mtm_matrix,
    spectral_report,
    stationarity_residual,
)
from mtmkit.toys import hypercube_space, cycle_space, two_tier_acceptance
from mtmkit.tuner import RatioScan, select_num_trials

WEIGHTS = ("ord", "sqrt", "min", "max")
TOYS = {"hypercube3": lambda: hypercube_space(3), "hypercube4": lambda: hypercube_space(4),
        "cycle3": cycle_space}


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


def _rows(rep, label, N):
    return [r for r in rep.rows if r["weight"] == label and r["N"] == N]


def _median_lower(rows):
    """Median H with censored runs at their budget (a lower bound on the true median)."""
    return float(np.median([r["H"] for r in rows]))


def _median_upper(rows):
    """Median H with censored runs at infinity (an upper bound on the true median)."""
    return float(np.median([np.inf if r["censored"] else r["H"] for r in rows]))


def _hit_fraction(rows):
    return float(np.mean([not r["censored"] for r in rows]))


def _desk_bvs(**kw):
    base = dict(model="bvs", n=300, p=1000, snr=4.0, design="independent", s_max=50,
                init_distance=20, replicates=20, seed=2024)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.mark.slow
def test_criterion_01_factor_n_speedup_desk_bvs(report):
    cfg = _desk_bvs(samplers=["mh", "mtm:sqrt:10", "mtm:sqrt:50"], T=50000)
    rep = run_experiment(cfg)
    mh = _median_lower(_rows(rep, "mh", 1))
    n10 = _median_upper(_rows(rep, "sqrt", 10))
    n50 = _median_upper(_rows(rep, "sqrt", 50))
    ok = n10 <= mh / 5 and n50 <= mh / 20
    report(1, ok, f"median H: MH>={mh:.0f}, sqrt N=10<={n10:.0f} (need <={mh / 5:.0f}), "
                  f"sqrt N=50<={n50:.0f} (need <={mh / 20:.0f})")


@pytest.mark.slow
def test_criterion_02_ordinary_weight_degradation(report):
    # ordinary weights cost ~2 ms/step at N=1000; censoring at T keeps this in budget
    cfg = _desk_bvs(samplers=["mtm:sqrt:1000", "mtm:ord:1000"], T=5000)
    rep = run_experiment(cfg)
    sq, od = _rows(rep, "sqrt", 1000), _rows(rep, "ord", 1000)
    m_sq, m_od = _median_upper(sq), _median_lower(od)
    clause1 = m_od >= 5 * m_sq
    clause2 = _hit_fraction(od) < 0.5 and _hit_fraction(sq) > 0.9
    report(2, clause1 or clause2,
           f"median H sqrt<={m_sq:.0f}, ord>={m_od:.0f}; hit rate sqrt={_hit_fraction(sq):.2f}, "
           f"ord={_hit_fraction(od):.2f} (T={cfg.T})")


@pytest.mark.slow
def test_criterion_03_sbm_desk(report):
    cfg = ExperimentConfig(model="sbm", sbm_p=200, K=2, ch=10.0, b=0.01, init_distance=80,
                           samplers=["mh", "mtm:sqrt:10"], replicates=10, T=30000, seed=2024)
    rep = run_experiment(cfg)
    mh = _median_lower(_rows(rep, "mh", 1))
    n10 = _median_upper(_rows(rep, "sqrt", 10))
    report(3, n10 <= mh / 3, f"median H: MH>={mh:.0f}, sqrt N=10<={n10:.0f} (need <={mh / 3:.0f})")


@pytest.mark.fullscale
@pytest.mark.skipif(os.environ.get("MTMKIT_FULL_SCALE") != "1",
                    reason="full-scale reproduction; set MTMKIT_FULL_SCALE=1")
def test_criterion_04_full_scale_bvs(report):
    cfg = _desk_bvs(n=1000, p=5000, s_max=100, samplers=["mh", "mtm:sqrt:10"], T=200000)
    rep = run_experiment(cfg)
    mh = rep.summary()["bvs/mh/1"]["H"]
    n10 = rep.summary()["bvs/sqrt/10"]["H"]
    ok = (mh != "Fail" and n10 != "Fail" and 19414 / 2 <= mh <= 19414 * 2
          and 1787 / 2 <= n10 <= 1787 * 2)
    report(4, ok, f"median H: MH={mh} (target 19414), sqrt N=10={n10} (target 1787)")


def test_criterion_05_reversibility_suite(report):
    worst_db, worst_st = 0.0, 0.0
    for name, make in TOYS.items():
        space = make()
        for w in WEIGHTS:
            for N in (1, 2, 3):
                P = exact_mtm_matrix(space, MtmConfig(N, WeightSpec.parse(w)))
                worst_db = max(worst_db, detailed_balance_residual(P, space))
                worst_st = max(worst_st, stationarity_residual(P, space))
    report(5, worst_db < 1e-12 and worst_st < 1e-10,
           f"max detailed-balance residual {worst_db:.2e}, max stationarity residual {worst_st:.2e}")


def test_criterion_06_bound_soundness(report):
    failures, n = [], 0
    for name, make in TOYS.items():
        space = make()
        for w in WEIGHTS:
            for N in (1, 2, 3):
                P = exact_mtm_matrix(space, MtmConfig(N, WeightSpec.parse(w)))
                rep = spectral_report(space, P, 0.25)
                n += 1
                if not rep["t_mix"] <= rep["bound"]:
                    failures.append((name, w, N, rep["t_mix"], rep["bound"]))
    report(6, not failures, f"{n - len(failures)}/{n} combinations satisfy t_mix <= bound {failures}")


def test_criterion_07_two_tier_counterexample(report):
    lines, ok = [], True
    for N in (100, 1000):
        od = two_tier_acceptance(N, WeightSpec.parse("ord"))["acceptance"]
        sq = two_tier_acceptance(N, WeightSpec.parse("sqrt"))["acceptance"]
        ok &= od <= 2 / 100**0.5 and sq > 0.5
        lines.append(f"N={N}: ord={od:.2e} sqrt={sq:.3f}")
    report(7, ok, "; ".join(lines) + " (need ord <= 0.2, sqrt > 0.5)")


def test_criterion_08_incremental_oracles(report):
    rng = np.random.default_rng(8)
    X = rng.standard_normal((200, 50))
    y = X[:, :5] @ np.ones(5) + rng.standard_normal(200)
    data = BvsDataset(X, y)
    model = BvsModel(data, BvsHyper(s_max=50))
    x = model.state([])
    worst = 0.0
    for _ in range(1000):
        x = model.flip(x, int(rng.integers(50)))
        fresh = ssr_direct(data, x.inclusion, model.hyper)
        worst = max(worst, abs(x.ssr - fresh) / fresh)

    graph, _ = sbm_generate_graph(60, 3, 0.3, 0.05, rng)
    sbm = SbmModel(graph, SbmHyper(K=3))
    z = sbm.state(rng.integers(3, size=60))
    mismatches = 0
    for _ in range(1000):
        i = int(rng.integers(60))
        z = sbm.move(z, i, int((z.labels[i] + rng.integers(1, 3)) % 3))
        sizes, m, M = block_counts(graph, z.labels, 3)
        mismatches += not (np.array_equal(sizes, z.sizes) and np.array_equal(m, z.m)
                           and np.array_equal(M, z.M))
    report(8, worst < 1e-8 and mismatches == 0,
           f"BVS max rel SSR error {worst:.2e}; SBM count mismatches {mismatches}/1000")


def test_criterion_09_algorithm2_trace(report):
    main = select_num_trials(RatioScan(np.array([-1.0] * 95 + [3.0] * 5), 1.0, 1.0, 100), 0.9)
    dagger = [select_num_trials(RatioScan(np.array([-3.0] * 60 + [0.2] * 40), 1.0, 1.0, 100), 0.9)
              for _ in range(2)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        degen = [select_num_trials(RatioScan(np.zeros(10), 1.0, 1.0, 10)) for _ in range(2)]
    ok = (main.n_selected == 14 and dagger[0] == dagger[1] and dagger[0].n_selected == 5
          and dagger[0].t2_hat == 1.0 and degen[0] == degen[1] and degen[0].n_selected == 1
          and degen[0].degenerate)
    report(9, ok, f"N={main.n_selected}; dagger N={dagger[0].n_selected} (t2={dagger[0].t2_hat}); "
                  f"degenerate N={degen[0].n_selected}")


def test_criterion_10_ess_calibration(report):
    rng = np.random.default_rng(10)
    T = 10**5
    e = rng.standard_normal(T)
    x = np.empty(T)
    x[0] = e[0] / np.sqrt(1 - 0.25)
    for t in range(1, T):
        x[t] = 0.5 * x[t - 1] + e[t]
    ess = ess_series(x)
    rel = abs(ess - T / 3) / (T / 3)
    report(10, rel < 0.15, f"ESS={ess:.0f}, T/3={T / 3:.0f}, relative error {rel:.3f}")
