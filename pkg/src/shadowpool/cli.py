"""Command-line driver: ``shadowpool STAGE [--config FILE] [--out DIR]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .exceptions import ShadowPoolError
from .pipeline import STAGES, Pipeline, load_reports, run_seeds, write_multi_summary

FIVE_SEEDS = range(5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shadowpool",
                                     description="Shadow-pool privacy auditing pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("run", "init-config"):
        p = sub.add_parser(name)
        if name == "init-config":
            p.add_argument("path", help="where to write the default config")
            continue
        p.add_argument("--config", help="YAML experiment config (defaults when omitted)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--force", action="store_true", help="rerun even if up to date")
        if name in ("run", "report"):
            p.add_argument("--five-seeds", action="store_true",
                           help="use seeds 0..4 under OUT/seed-K and report their means")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out:
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "init-config":
            ExperimentConfig().dump(args.path)
            return 0
        cfg = _config(args)
        root = Path(cfg.output_dir)
        five = getattr(args, "five_seeds", False)
        if args.command == "run":
            if five:
                summary = run_seeds(cfg, FIVE_SEEDS, root, force=args.force)
                print(json.dumps(summary["rows"], sort_keys=True))
            else:
                Pipeline(cfg, root).run_all(force=args.force)
                print(Pipeline(cfg, root).path("summary.txt").read_text(encoding="utf-8"), end="")
            return 0
        if args.command == "report" and five:
            runs = [load_reports(root / f"seed-{s}") for s in FIVE_SEEDS]
            write_multi_summary(root, runs)
            print((root / "summary.txt").read_text(encoding="utf-8"), end="")
            return 0
        pipe = Pipeline(cfg, root)
        pipe.out.mkdir(parents=True, exist_ok=True)
        pipe.config.dump(pipe.path("config.yaml"))
        ran = pipe.run_stage(args.command, force=args.force)
        if args.command == "report":
            print(pipe.path("summary.txt").read_text(encoding="utf-8"), end="")
        elif args.command == "gradcheck":
            rep = json.loads(pipe.path("gradcheck.json").read_text(encoding="utf-8"))
            print(f"max relative error {rep['max_rel_error']:.3e} over {rep['n_pools']} pools")
            return 0 if rep["passed"] else 1
        elif not ran:
            print(f"{args.command}: up to date")
        return 0
    except ShadowPoolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
