"""Command line entry point: ``pretrain-lab <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import yaml

from .config import ConfigError, load_config
from .report import clean_json, emit_report, evaluate_checks, read_results
from .sweep import run_sweep
from .verify import DEFAULTS as VERIFY_DEFAULTS
from .verify import run_verify

SWEEP_COMMANDS = ("factor", "gmm", "contrastive", "counterexample")
log = logging.getLogger("pretrain_lab")


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pretrain-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SWEEP_COMMANDS + ("verify", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name in SWEEP_COMMANDS)
        p.add_argument("--seed", type=_u64)
        p.add_argument("--out", type=Path)
        p.add_argument("--trials", type=_positive)
        p.add_argument("--jobs", type=_positive, default=1)
        p.add_argument("--mc-count", type=_positive)
        if name == "report":
            p.add_argument("--results", type=Path, help="existing results.csv (default: <out>/results.csv)")
    return parser


def _print_checks(checks):
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {json.dumps(c.details, default=str)}")


def _sweep(args) -> int:
    cfg = load_config(args.config)
    if cfg.instantiation != args.command:
        raise ConfigError(f"config is for {cfg.instantiation!r}, not {args.command!r}", "instantiation",
                          source=str(args.config))
    cfg = cfg.with_overrides(args.seed, args.trials, args.mc_count, args.out)
    start = time.perf_counter()
    results = run_sweep(cfg, args.jobs)
    checks, rates = evaluate_checks(cfg, results)
    emit_report(results, rates, cfg.out, cfg, checks)
    print(f"{len(results)} rows in {time.perf_counter() - start:.1f}s -> {cfg.out}")
    _print_checks(checks)
    return 0 if all(c.passed for c in checks) else 1


def _report(args) -> int:
    if args.config is None:
        raise ConfigError("report needs --config to know which checks to evaluate")
    cfg = load_config(args.config).with_overrides(args.seed, args.trials, args.mc_count, args.out)
    path = args.results or Path(cfg.out) / "results.csv"
    results = read_results(path)
    checks, rates = evaluate_checks(cfg, results)
    emit_report(results, rates, cfg.out, cfg, checks)
    _print_checks(checks)
    return 0 if all(c.passed for c in checks) else 1


def _verify(args) -> int:
    settings = {}
    if args.config is not None:
        settings = yaml.safe_load(args.config.read_text()) or {}
        unknown = sorted(set(settings) - set(VERIFY_DEFAULTS) - {"out"})
        if unknown:
            raise ConfigError(f"unknown key {unknown[0]!r}", unknown[0], source=str(args.config))
    out = Path(args.out or settings.pop("out", "results/verify"))
    if args.seed is not None:
        settings["master_seed"] = args.seed
    if args.mc_count is not None:
        settings["mc_count"] = args.mc_count
    suites = run_verify(settings)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "settings": {**VERIFY_DEFAULTS, **settings},
        "suites": [{**{k: v for k, v in asdict(s).items() if k != "records"}, "passed": s.passed,
                    "records": s.records} for s in suites],
        "all_passed": all(s.passed for s in suites),
    }
    (out / "summary.json").write_text(json.dumps(clean_json(summary), indent=2, sort_keys=True) + "\n")
    for s in suites:
        print(f"{'PASS' if s.passed else 'FAIL'} {s.name}: {s.holds}/{s.instances} hold, "
              f"max ratio {s.max_ratio:.4g}")
    return 0 if summary["all_passed"] else 1


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command in SWEEP_COMMANDS:
            return _sweep(args)
        if args.command == "report":
            return _report(args)
        return _verify(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
