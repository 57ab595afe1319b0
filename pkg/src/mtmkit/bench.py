"""Replicated hitting-time experiments, ESS and report files."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bvs import BvsDataSpec, BvsHyper, BvsModel, bvs_generate_dataset, bvs_initial_state
from .sampler import LbmhConfig, MtmConfig, WeightSpec, run_chain
from .sbm import (SbmHyper, SbmModel, canonical_labels, sbm_generate_graph, sbm_initial_state,
                  within_prob_for_ch)
from .toys import EnumeratedModel, enumerate_space
from .tuner import neighbor_log_ratio_scan, select_num_trials

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "SamplerSpec",
    "ConstantSeries",
    "ess_series",
    "ess_hamming",
    "censored_median",
    "replicate_seeds",
    "run_experiment",
    "write_report",
    "load_report",
    "COLUMNS",
]

COLUMNS = ("model", "weight", "N", "replicate", "seed", "H", "censored", "T_H_seconds",
           "acc_rate", "unique_states", "ess")


class ConstantSeries(ValueError):
    """ESS is undefined for a series with zero variance."""


# ---------------------------------------------------------------------------
# ESS


def _autocorr(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def ess_series(x) -> float:
    """ESS with the initial positive sequence truncation.

    Autocorrelations are paired as ``rho_{2k} + rho_{2k+1}`` and summed while
    the pair sums stay positive.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        raise ConstantSeries("series is constant; ESS is undefined")
    rho = _autocorr(x)
    n_pairs = rho.size // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    neg = np.flatnonzero(pairs <= 0)
    m = neg[0] if neg.size else n_pairs
    tau = -1.0 + 2.0 * pairs[:m].sum()
    return float(x.size / max(tau, 1e-12))


def ess_hamming(states, log_posts, model, burn_in: int) -> float:
    """ESS of the distance series to the highest-posterior state in the trace."""
    if len(states) <= burn_in + 10:
        raise ValueError("trace too short for the requested burn-in")
    ref = states[int(np.argmax(log_posts))]
    d = np.array([model.distance(ref, s) for s in states[burn_in:]])
    return ess_series(d)


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class SamplerSpec:
    """``mh``, ``mtm:<weight>:<N>`` (``N`` may be ``auto``) or ``lbmh:<h>``."""

    kind: str
    weight: str = "sqrt"
    n_trials: int | None = 1

    @classmethod
    def parse(cls, text: str) -> "SamplerSpec":
        parts = text.strip().lower().split(":")
        if parts[0] == "mh" and len(parts) == 1:
            return cls("mh", "sqrt", 1)
        if parts[0] == "mtm" and len(parts) == 3:
            WeightSpec.parse(parts[1])
            n = None if parts[2] == "auto" else int(parts[2])
            if n is not None and n < 1:
                raise ValueError("N must be positive")
            return cls("mtm", parts[1], n)
        if parts[0] == "lbmh" and len(parts) in (1, 2):
            h = WeightSpec.parse(parts[1] if len(parts) == 2 else "sqrt")
            if h.family != "balanced":
                raise ValueError("LBMH needs a balancing function")
            return cls("lbmh", h.name, None)
        raise ValueError(f"bad sampler spec {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "mh":
            return "mh"
        if self.kind == "lbmh":
            return f"lbmh-{self.weight}"
        return self.weight


@dataclass
class ExperimentConfig:
    """Flat experiment description; every field maps to one config key."""

    model: str = "bvs"
    samplers: list = field(default_factory=lambda: ["mh", "mtm:sqrt:10"])
    replicates: int = 20
    T: int = 50000
    burn_in: int | None = None
    seed: int = 0
    stop_on_hit: bool = True
    compute_ess: bool = False
    init_distance: int | None = None
    # bvs
    n: int = 300
    p: int = 1000
    snr: float = 4.0
    design: str = "independent"
    sigma_beta: float = 0.3
    s_max: int | None = 50
    g_scale: float | None = None
    kappa: float = 2.0
    # sbm
    sbm_p: int = 200
    K: int = 2
    ch: float = 10.0
    b: float = 0.01
    a: float | None = None
    alpha: float = 1000.0
    # toy
    toy: str = "hypercube3"
    init_state: int = 0
    psi: float = 0.9

    def __post_init__(self):
        if isinstance(self.samplers, str):
            self.samplers = [s for s in self.samplers.replace(";", ",").split(",") if s.strip()]
        self.samplers = [s.strip() for s in self.samplers]
        for s in self.samplers:
            SamplerSpec.parse(s)
        if self.model not in ("bvs", "sbm", "toy"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.replicates < 1 or self.T < 1:
            raise ValueError("replicates and T must be positive")
        if self.init_distance is None:
            self.init_distance = {"bvs": 20, "sbm": 80, "toy": None}[self.model]
        if self.burn_in is None:
            self.burn_in = self.T // 5
        if not 0 <= self.burn_in < self.T:
            raise ValueError("burn_in must lie in [0, T)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(v, known[k].type) for k, v in d.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(value, annot: str):
    if not isinstance(value, str):
        return value
    v = value.strip()
    if v.lower() in ("none", "null", ""):
        return None
    if annot.startswith("bool"):
        if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {value!r}")
        return v.lower() in ("true", "1", "yes")
    if annot.startswith("int"):
        return int(v)
    if annot.startswith("float"):
        return float(v)
    return v


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentReport:
    rows: list
    config: dict

    def summary(self) -> dict:
        groups = {}
        for r in self.rows:
            groups.setdefault((r["model"], r["weight"], r["N"]), []).append(r)
        out = {}
        for (model, weight, n), rs in groups.items():
            hits = [not r["censored"] for r in rs]
            out[f"{model}/{weight}/{n}"] = {
                "H": censored_median([r["H"] for r in rs], hits),
                "T_H_seconds": censored_median([r["T_H_seconds"] for r in rs], hits),
                "acc_rate": float(np.median([r["acc_rate"] for r in rs])),
                "replicates": len(rs),
                "hits": int(sum(hits)),
            }
        return out


def censored_median(values, hit_flags):
    """Median over hitting replicates, or ``"Fail"`` unless more than half hit."""
    vals = [v for v, h in zip(values, hit_flags) if h]
    if len(vals) * 2 <= len(hit_flags):
        return "Fail"
    return float(np.median(vals))


def replicate_seeds(master: int, replicates: int) -> list[int]:
    children = np.random.SeedSequence(master).spawn(replicates)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def _build(cfg: ExperimentConfig, rng: np.random.Generator):
    """Return ``(model, x0, is_hit)`` for one replicate."""
    if cfg.model == "bvs":
        spec = BvsDataSpec(cfg.n, cfg.p, cfg.snr, cfg.design, cfg.sigma_beta)
        data, truth = bvs_generate_dataset(spec, rng)
        model = BvsModel(data, BvsHyper(cfg.g_scale, cfg.kappa, cfg.s_max))
        x0 = bvs_initial_state(model, truth, cfg.init_distance, rng)
        target = tuple(np.flatnonzero(truth))
        return model, x0, lambda x: x.indices() == target
    if cfg.model == "sbm":
        a = cfg.a if cfg.a is not None else within_prob_for_ch(cfg.ch, cfg.b, cfg.K, cfg.sbm_p)
        graph, truth = sbm_generate_graph(cfg.sbm_p, cfg.K, a, cfg.b, rng)
        model = SbmModel(graph, SbmHyper(cfg.K, alpha=cfg.alpha))
        x0 = sbm_initial_state(model, truth, cfg.init_distance, rng)
        canon = canonical_labels(truth)
        return model, x0, lambda x: np.array_equal(canonical_labels(x.labels), canon)
    space = enumerate_space(cfg.toy)
    model = EnumeratedModel(space)
    mode = space.mode
    return model, cfg.init_state, lambda x: x == mode


def _sampler_config(spec: SamplerSpec, model, x0, cfg: ExperimentConfig):
    if spec.kind == "lbmh":
        return LbmhConfig(WeightSpec.parse(spec.weight).balancing), "-"
    n = spec.n_trials
    if n is None:
        n = select_num_trials(neighbor_log_ratio_scan(model, x0, _complexity(model, cfg)), cfg.psi).n_selected
    return MtmConfig(n, WeightSpec.parse(spec.weight)), n


def _complexity(model, cfg) -> int:
    if isinstance(model, (BvsModel, SbmModel)):
        return model.p
    return max(2, model.neighborhood_size(0))


def run_replicate(cfg: ExperimentConfig, replicate: int, seed: int) -> list[dict]:
    data_rng = np.random.default_rng([seed, 0])
    model, x0, is_hit = _build(cfg, data_rng)
    rows = []
    for k, text in enumerate(cfg.samplers):
        spec = SamplerSpec.parse(text)
        sconf, n = _sampler_config(spec, model, x0, cfg)
        chain_rng = np.random.default_rng([seed, 1, k])
        hit_at = []

        def hook(t, x, stats):
            if not hit_at and is_hit(x):
                hit_at.append(t)
                return cfg.stop_on_hit
            return False

        trace = run_chain(model, x0, sconf, cfg.T, hooks=[hook], rng=chain_rng,
                          record_states=cfg.compute_ess)
        if hit_at:
            H = hit_at[0]
            t_h = 0.0 if H == 0 else float(trace.wall_clock_marks[H - 1] - trace.start_time)
        else:
            H, t_h = trace.n_steps, float("nan")
        ess = float("nan")
        if cfg.compute_ess and trace.n_steps > cfg.burn_in + 10:
            try:
                ess = ess_hamming(trace.states, trace.log_post_series, model, cfg.burn_in)
            except ValueError:
                pass
        rows.append({
            "model": cfg.model, "weight": spec.label, "N": n, "replicate": replicate,
            "seed": seed, "H": int(H), "censored": not hit_at, "T_H_seconds": t_h,
            "acc_rate": trace.acceptance_rate if trace.n_steps else float("nan"),
            "unique_states": trace.unique_states(), "ess": ess,
        })
    return rows


def _run_one(args):
    cfg_dict, rep, seed = args
    return run_replicate(ExperimentConfig.from_dict(cfg_dict), rep, seed)


def run_experiment(cfg: ExperimentConfig, threads: int | None = None, on_rows=None) -> ExperimentReport:
    """Run every sampler on every replicate.

    Replicate ``r`` derives its data and chain streams from the ``r``-th child
    of the master seed, so results do not depend on ``threads``.  ``on_rows``
    is called with each finished replicate's rows, in replicate order.
    """
    if threads is None:
        threads = int(os.environ.get("MTMKIT_THREADS", "1"))
    seeds = replicate_seeds(cfg.seed, cfg.replicates)
    jobs = [(cfg.to_dict(), r, s) for r, s in enumerate(seeds)]
    rows = []
    if threads <= 1:
        results = map(_run_one, jobs)
        for res in results:
            rows.extend(res)
            if on_rows:
                on_rows(res)
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            for res in ex.map(_run_one, jobs):
                rows.extend(res)
                if on_rows:
                    on_rows(res)
    return ExperimentReport(rows, cfg.to_dict())


# ---------------------------------------------------------------------------
# reports


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".17g")
    return str(v)


def write_report(report: ExperimentReport, path, fmt: str = "csv"):
    """Write the rows as CSV (fixed column order) or JSON with config and summary."""
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in report.rows:
                w.writerow([_fmt(r[c]) for c in COLUMNS])
    elif fmt == "json":
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        payload = {
            "config": report.config,
            "rows": [{c: clean(r[c]) for c in COLUMNS} for r in report.rows],
            "summary": report.summary(),
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def load_report(path) -> ExperimentReport:
    payload = json.loads(Path(path).read_text())
    rows = [{c: (float("nan") if v is None else v) for c, v in r.items()} for r in payload["rows"]]
    return ExperimentReport(rows, payload["config"])
