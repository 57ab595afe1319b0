"""Command line entry point: ``mtmkit {datagen,run,tune-n,spectral}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import bench
from .bvs import BvsDataSpec, BvsHyper, BvsModel, bvs_generate_dataset, bvs_initial_state, write_dataset
from .config import load_config, parse_overrides
from .sampler import MtmConfig, WeightSpec
from .sbm import (SbmHyper, SbmModel, sbm_generate_graph, sbm_initial_state, within_prob_for_ch,
                  write_graph)
from .spectral import (exact_lbmh_matrix, exact_mh_matrix, exact_mtm_matrix, spectral_report)
from .toys import TOYS, enumerate_space
from .tuner import RatioScan, neighbor_log_ratio_scan, select_num_trials


def _experiment_config(args) -> bench.ExperimentConfig:
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_config(args.config, overrides)
    return bench.ExperimentConfig.from_dict(overrides)


def cmd_datagen(args) -> int:
    cfg = _experiment_config(args)
    rng = np.random.default_rng([cfg.seed, 0])
    out = Path(args.out)
    if cfg.model == "bvs":
        spec = BvsDataSpec(cfg.n, cfg.p, cfg.snr, cfg.design, cfg.sigma_beta)
        data, truth = bvs_generate_dataset(spec, rng)
        write_dataset(data, out, "bin" if args.format == "bin" else "csv")
        truth_idx = np.flatnonzero(truth).tolist()
    elif cfg.model == "sbm":
        a = cfg.a if cfg.a is not None else within_prob_for_ch(cfg.ch, cfg.b, cfg.K, cfg.sbm_p)
        graph, truth = sbm_generate_graph(cfg.sbm_p, cfg.K, a, cfg.b, rng)
        write_graph(graph, out)
        truth_idx = truth.tolist()
    else:
        raise ValueError("datagen supports model=bvs or model=sbm")
    Path(str(out) + ".truth.json").write_text(json.dumps({"truth": truth_idx}) + "\n")
    print(f"wrote {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _experiment_config(args)
    out = Path(args.out or "report")
    rows = []

    def flush():
        rep = bench.ExperimentReport(rows, cfg.to_dict())
        if args.format == "json":
            bench.write_report(rep, out.with_suffix(".json"), "json")
        else:
            bench.write_report(rep, out.with_suffix(".csv"), "csv")
            bench.write_report(rep, out.with_suffix(".json"), "json")
        return rep

    try:
        bench.run_experiment(cfg, threads=args.threads, on_rows=rows.extend)
    except KeyboardInterrupt:
        flush()
        print("interrupted; partial report written", file=sys.stderr)
        return 130
    rep = flush()
    print(json.dumps(rep.summary(), indent=2))
    return 0


def cmd_tune_n(args) -> int:
    if args.ratios_file:
        ratios = np.loadtxt(args.ratios_file, ndmin=1)
        t3 = args.t3 if args.t3 is not None else np.log(ratios.size) / np.log(args.p)
        t4 = args.t4 if args.t4 is not None else t3
        scan = RatioScan(ratios, t3, t4, args.p)
    else:
        cfg = _experiment_config(args)
        rng = np.random.default_rng([cfg.seed, 0])
        if cfg.model == "bvs":
            data, truth = bvs_generate_dataset(
                BvsDataSpec(cfg.n, cfg.p, cfg.snr, cfg.design, cfg.sigma_beta), rng)
            model = BvsModel(data, BvsHyper(cfg.g_scale, cfg.kappa, cfg.s_max))
            x0 = bvs_initial_state(model, truth, cfg.init_distance, rng)
            p = cfg.p
        elif cfg.model == "sbm":
            a = cfg.a if cfg.a is not None else within_prob_for_ch(cfg.ch, cfg.b, cfg.K, cfg.sbm_p)
            graph, truth = sbm_generate_graph(cfg.sbm_p, cfg.K, a, cfg.b, rng)
            model = SbmModel(graph, SbmHyper(cfg.K, alpha=cfg.alpha))
            x0 = sbm_initial_state(model, truth, cfg.init_distance, rng)
            p = cfg.sbm_p
        else:
            raise ValueError("tune-n supports model=bvs or model=sbm, or --ratios-file")
        scan = neighbor_log_ratio_scan(model, x0, p)
    est = select_num_trials(scan, args.psi)
    print(json.dumps(asdict(est)))
    print(f"N={est.n_selected}")
    return 0


def cmd_spectral(args) -> int:
    space = enumerate_space(args.toy)
    if args.sampler == "mh":
        P = exact_mh_matrix(space)
    elif args.sampler == "lbmh":
        P = exact_lbmh_matrix(space, WeightSpec.parse(args.weight).balancing)
    else:
        P = exact_mtm_matrix(space, MtmConfig(args.N, WeightSpec.parse(args.weight)))
    rep = spectral_report(space, P, args.eps)
    rep = {"target": args.toy, "sampler": args.sampler, "weight": args.weight, "N": args.N, **rep}
    text = json.dumps(rep, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mtmkit", description="Multiple-try Metropolis experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value or JSON experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("datagen", help="write a synthetic BVS dataset or SBM graph")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "bin"], default="csv")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("run", help="run a replicated experiment")
    common(p)
    p.add_argument("--out", help="report path prefix")
    p.add_argument("--threads", type=int)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tune-n", help="choose the number of trials from one neighborhood scan")
    common(p)
    p.add_argument("--ratios-file", help="text file of base-p log ratios, one per line")
    p.add_argument("--p", type=int, default=100)
    p.add_argument("--t3", type=float)
    p.add_argument("--t4", type=float)
    p.add_argument("--psi", type=float, default=0.9)
    p.set_defaults(func=cmd_tune_n)

    p = sub.add_parser("spectral", help="exact spectral report on a toy space")
    p.add_argument("--toy", choices=sorted(TOYS), default="hypercube3")
    p.add_argument("--sampler", choices=["mtm", "mh", "lbmh"], default="mtm")
    p.add_argument("--weight", default="sqrt")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--eps", type=float, default=0.25)
    p.add_argument("--out")
    p.add_argument("--format", choices=["json"], default="json")
    p.set_defaults(func=cmd_spectral)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"mtmkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
