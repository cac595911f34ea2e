"""Command-line entry point: ``distloss {generate,train,evaluate,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import experiment
from .nn import DivergenceDetected

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("distloss")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config file (INI)")
    common.add_argument("--seed", type=int, default=None, help="override synth and train seeds")
    common.add_argument("--out", default=None, help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log every training epoch")

    parser = _Parser(prog="distloss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="generate and split the synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train one arm (or all arms)")
    p.add_argument("--arm", default=None, help="arm name; default trains every arm")
    p.add_argument("--parallel-arms", action="store_true", help="train arms in separate processes")
    p = sub.add_parser("evaluate", parents=[common], help="evaluate every arm and write the report")
    p.add_argument("--no-figures", action="store_true", help="skip rendering PNG figures")
    sub.add_parser("report", parents=[common], help="print the comparison table and re-render figures")
    return parser


def cmd_generate(cfg: config_mod.ExperimentConfig) -> int:
    path = experiment.generate(cfg)
    print(f"dataset written to {path}")
    return EXIT_OK


def cmd_train(cfg: config_mod.ExperimentConfig, arm: str | None, parallel: bool) -> int:
    names = [cfg.arm(arm).name] if arm else None
    experiment.train_all(cfg, names, parallel=parallel)
    for name in names or [a.name for a in cfg.arms]:
        print(f"arm {name}: checkpoint {experiment.Paths(cfg.output_dir).checkpoint(name)}")
    return EXIT_OK


def cmd_evaluate(cfg: config_mod.ExperimentConfig, render: bool = True) -> int:
    report = experiment.evaluate(cfg, render=render)
    print(experiment.comparison_table(report), end="")
    return EXIT_OK


def cmd_report(cfg: config_mod.ExperimentConfig) -> int:
    directory = experiment.Paths(cfg.output_dir).report
    path = directory / "report.json"
    if not path.exists():
        raise experiment.MissingArtifact(f"no report at {path}; run 'evaluate' first")
    report = json.loads(path.read_text())
    print(experiment.comparison_table(report), end="")
    for fig in experiment.render_figures(directory):
        print(f"figure {fig}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load(args.config, seed_override=args.seed, out_override=args.out)
        if args.command == "train" and args.arm:
            cfg.arm(args.arm)
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.arm, args.parallel_arms)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, render=not args.no_figures)
        return cmd_report(cfg)
    except DivergenceDetected as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (experiment.MissingArtifact, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
