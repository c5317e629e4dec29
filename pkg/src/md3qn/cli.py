"""Command-line entry point: ``md3qn <command> [--config PATH] [--seed N] ...``.

Exit codes: 0 success, 1 usage or config error, 2 verification failure,
3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments
from .config import ConfigError, load_config
from .maze import layout_text

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3

COMMANDS = {
    "eval-policy": "learn the random walker's initial-state joint return and compare to the oracle",
    "control": "epsilon-greedy control; writes the greedy return curve",
    "constraint-task": "constraint-greedy control for each method and seed",
    "verify": "exact-operator and estimator checks; exit 2 on any violation",
    "ablate-bandwidth": "policy evaluation per kernel preset under a fixed reference kernel",
    "oracle": "dump Monte-Carlo return samples at the initial state",
    "dump-layout": "print a built-in maze layout",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="md3qn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="INI file; unknown keys are errors")
        p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
        p.add_argument("--out", type=Path, help="artifact directory (overrides run.out)")
        p.add_argument("--env", help="environment name (overrides run.env)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value; repeatable")
        if name == "oracle":
            p.add_argument("--count", type=int, help="number of samples (overrides oracle.count)")
        if name == "ablate-bandwidth":
            p.add_argument("--presets", help="comma-separated kernel presets")
        if name == "constraint-task":
            p.add_argument("--methods", help="comma-separated methods: joint, marginal-sum, marginal-prod")
    return parser


# environment used when neither the config nor --env names one
DEFAULT_ENV = {
    "eval-policy": "maze-exclusive",
    "control": "random-mdp",
    "constraint-task": "maze-constraint",
    "verify": "random-mdp",
    "ablate-bandwidth": "maze-exclusive",
    "oracle": "maze-exclusive",
    "dump-layout": "maze-exclusive",
}


def _resolve(args) -> dict:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    if args.env is not None:
        overrides.append(f"run.env={args.env}")
    if getattr(args, "count", None) is not None:
        overrides.append(f"oracle.count={args.count}")
    if getattr(args, "presets", None):
        overrides.append(f"ablation.presets={args.presets}")
    if getattr(args, "methods", None):
        overrides.append(f"constraint.methods={args.methods}")
    cfg = load_config(args.config, overrides)
    if not cfg["run"]["env"]:
        cfg["run"]["env"] = DEFAULT_ENV[args.command]
    return cfg


def _print(summary: dict) -> None:
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.command == "dump-layout":
            text = layout_text(cfg["run"]["env"])
            if args.out is not None:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / f"{cfg['run']['env']}.txt").write_text(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        if args.command == "verify":
            summary, passed = experiments.run_verify(cfg)
            print(experiments.format_verify_table(summary))
            return EXIT_OK if passed else EXIT_VERIFY
        runner = {
            "eval-policy": experiments.run_eval_policy,
            "control": experiments.run_control,
            "constraint-task": experiments.run_constraint_task,
            "ablate-bandwidth": experiments.run_ablate_bandwidth,
            "oracle": experiments.run_oracle,
        }[args.command]
        _print(runner(cfg))
        return EXIT_OK
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
