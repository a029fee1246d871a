"""Command-line entry point: ``cfaudit <subcommand> [flags]``.

Exit codes: 0 success, 1 configuration error, 2 partial failures in results.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..numerics import NumericError
from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config overlaid on the profile")
    common.add_argument("--profile", choices=("desk", "paper"), default="desk")
    common.add_argument("--seed", type=int, help="master seed (u64)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="parallel classifier cells")
    common.add_argument("--dataset", action="append", help="restrict to these variants (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cfaudit", description="Counterfactual invariance audits on synthetic SCMs.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write SCM specs and train/test CSVs")
    sub.add_parser("train-gen", parents=[common], help="train and store generative bundles")
    sub.add_parser("train-zoo", parents=[common], help="train and store the classifier pool")
    t = sub.add_parser("test", parents=[common], help="audit one classifier with all three tests")
    t.add_argument("--family", required=True)
    t.add_argument("--zoo-seed", type=int, default=0)
    sub.add_parser("sweep", parents=[common], help="run the full audit and write results.csv")
    r = sub.add_parser("report", parents=[common], help="correlation report from results.csv")
    r.add_argument("--results", help="results.csv path (default <out>/results.csv)")
    return p


def _config(args) -> ExperimentConfig:
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be a non-negative integer")
    over = {"seed": args.seed, "out": args.out, "workers": args.workers, "variants": args.dataset}
    return load_config(args.config, args.profile, over)


def cmd_gen_data(cfg: ExperimentConfig) -> int:
    from .sweep import dataset_paths, prepare_dataset

    for v in cfg.variants:
        prepare_dataset(cfg, v)
        print(dataset_paths(Path(cfg.out), v)["dir"])
    return EXIT_OK


def cmd_train_gen(cfg: ExperimentConfig) -> int:
    from .sweep import get_bundle, prepare_dataset

    for v in cfg.variants:
        _, train_d, _ = prepare_dataset(cfg, v)
        get_bundle(cfg, v, train_d)
        print(Path(cfg.out) / "bundles" / v)
    return EXIT_OK


def cmd_train_zoo(cfg: ExperimentConfig) -> int:
    from ..zoo import build_pool, save_pool
    from .sweep import prepare_dataset

    for v in cfg.variants:
        _, train_d, _ = prepare_dataset(cfg, v)
        pool = build_pool(train_d, seeds=cfg.zoo_seeds, families=cfg.families)
        print(save_pool(pool, cfg.out, v))
    return EXIT_OK


def cmd_test(cfg: ExperimentConfig, family: str, seed: int) -> int:
    from ..citest import draw_counterfactuals
    from .sweep import evaluate_cell, get_bundle, prepare_dataset

    status = EXIT_OK
    for v in cfg.variants:
        spec, train_d, test_d = prepare_dataset(cfg, v)
        draws = draw_counterfactuals(get_bundle(cfg, v, train_d), test_d, cfg.cit)
        row, _, reports = evaluate_cell(cfg, v, spec, train_d, test_d, draws, family, seed)
        print(json.dumps({"row": row, "reports": {k: json.loads(s) for k, s in reports.items()}}, sort_keys=True))
        if row["error"]:
            status = EXIT_PARTIAL
    return status


def cmd_sweep(cfg: ExperimentConfig) -> int:
    from .report import correlation_report, report_csv
    from .sweep import run_sweep

    res = run_sweep(cfg)
    rep = correlation_report(res.rows)
    (Path(cfg.out) / "report.csv").write_text(report_csv(rep))
    _print_report(rep)
    if res.n_failed:
        print(f"{res.n_failed} of {len(res.rows)} rows carry errors", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, results: str | None) -> int:
    from .report import correlation_report, report_csv
    from .sweep import SweepResult

    path = Path(results) if results else Path(cfg.out) / "results.csv"
    try:
        res = SweepResult.from_csv(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read results {path}: {exc}") from exc
    rep = correlation_report(res.rows)
    (path.parent / "report.csv").write_text(report_csv(rep))
    _print_report(rep)
    return EXIT_PARTIAL if res.n_failed else EXIT_OK


def _print_report(rep):
    from .report import alignment_summary

    for rec in rep:
        r = "undefined" if rec["error"] else f"{rec['r']:+.3f}"
        print(f"{rec['dataset']:<14}{rec['method']:<8}r={r:<10}n={rec['n']}")
    for ds, s in alignment_summary(rep).items():
        print(f"{ds:<14}CIT-LR positive={s['positive']} beats DP and EO={s['beats_baselines']}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train-gen":
            return cmd_train_gen(cfg)
        if args.command == "train-zoo":
            return cmd_train_zoo(cfg)
        if args.command == "test":
            if args.family not in cfg.families and args.family not in _families():
                raise ConfigError(f"unknown family {args.family!r}")
            return cmd_test(cfg, args.family, args.zoo_seed)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_report(cfg, args.results)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, RuntimeError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


def _families():
    from ..zoo import FAMILIES

    return FAMILIES


if __name__ == "__main__":
    sys.exit(main())
