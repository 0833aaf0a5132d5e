"""Main entry point for the lcg command line.

This module allows the package to be run as a module:
python -m lcg
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any
from typing import Dict
from typing import List
from typing import NoReturn
from typing import Optional

from . import commands
from .config import ExperimentConfig
from .config import load_config
from .config import load_packaged_defaults
from .config import load_user_document
from .core.exceptions import EXIT_USAGE
from .core.exceptions import LcgError
from .core.types import SamplerKind
from .presets import ExperimentManager
from .runner import run_context

logger = logging.getLogger("lcg")


class UsageErrorParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the usage code."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="Path to an experiment config (JSON or YAML)")
    common.add_argument("--preset", "-p", help="Experiment preset name or index")
    common.add_argument("--seed", type=int, help="Root seed for every random stage")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--sampler", choices=[k.value for k in SamplerKind], help="Reverse sampler")
    common.add_argument("--t-start", type=int, dest="t_start", help="Start timestep for edits")
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default=None,
        help="Logging level (default: INFO)",
    )
    common.add_argument("--verbose", "-v", action="store_true", help="Shorthand for --log-level DEBUG")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = UsageErrorParser(prog="lcg", description="Latent classifier guidance experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageErrorParser)

    sub.add_parser("genworld", parents=[common], help="Sample the synthetic world dataset")
    train = sub.add_parser("train", parents=[common], help="Train the denoiser or classifiers")
    train.add_argument("target", help="diffusion, classifiers, or classifier:<attribute>")
    sub.add_parser("compose", parents=[common], help="Compositional guided generation")
    edit = sub.add_parser("edit", parents=[common], help="Compositional manipulation of source latents")
    edit.add_argument("--linear", action="store_true", help="Closed-form linear edit only")
    edit.add_argument("--sequential", action="store_true", help="Apply the edits one at a time")
    evaluate = sub.add_parser("eval", parents=[common], help="Metrics and disentanglement reports")
    evaluate.add_argument("--samples", help="Samples CSV to evaluate (default: compose output)")
    plot = sub.add_parser("plot", parents=[common], help="SVG scatter plots and correlation heatmap")
    plot.add_argument("--samples", help="Samples CSV to plot")
    sub.add_parser("elbo-check", parents=[common], help="Check the conditional ELBO decomposition")
    sub.add_parser("presets", parents=[common], help="List and validate experiment presets")
    return parser


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Nested config values given as flags."""
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.sampler is not None:
        overrides.setdefault("sampling", {})["sampler"] = args.sampler
        overrides.setdefault("edit", {})["sampler"] = args.sampler
    if args.t_start is not None:
        overrides.setdefault("sampling", {})["t_start"] = args.t_start
    if getattr(args, "linear", False):
        overrides.setdefault("edit", {})["linear"] = True
    if getattr(args, "sequential", False):
        overrides.setdefault("edit", {})["sequential"] = True
    return overrides


def _configure_logging(args: argparse.Namespace) -> None:
    level = "DEBUG" if args.verbose else (args.log_level or "INFO")
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _list_presets(config_path: Optional[str]) -> int:
    _, experiments = load_packaged_defaults()
    experiments.update(load_user_document(config_path).get("experiments", {}) or {})
    manager = ExperimentManager(experiments)
    for info in manager.get_list():
        print(f"{info['index']:>3}  {info['name']:<28} {info['world'] or '-':<14} {info['description']}")
    errors = manager.validate()
    for error in errors:
        print(f"invalid: {error}", file=sys.stderr)
    return EXIT_USAGE if errors else 0


def run(args: argparse.Namespace) -> int:
    if args.command == "presets":
        return _list_presets(args.config)
    merged = load_config(config_path=args.config, preset=args.preset, cli_overrides=cli_overrides(args))
    config = ExperimentConfig.from_mapping(merged)
    with run_context(config, args.command) as ctx:
        if args.command == "genworld":
            result: Any = commands.cmd_genworld(ctx)
        elif args.command == "train":
            result = commands.cmd_train(ctx, args.target)
        elif args.command == "compose":
            result = commands.cmd_compose(ctx)
        elif args.command == "edit":
            result = commands.cmd_edit(ctx, linear=config.edit.linear, sequential=config.edit.sequential)
        elif args.command == "eval":
            result = commands.cmd_eval(ctx, Path(args.samples) if args.samples else None)
        elif args.command == "plot":
            result = commands.cmd_plot(ctx, Path(args.samples) if args.samples else None)
        else:
            residual = commands.cmd_elbo_check(ctx)
            print(f"elbo-check residual: {residual:.3e}")
            return 0
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Run one lcg command and return its exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return run(args)
    except LcgError as e:
        logger.error(str(e))
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure")
        print(f"Error running lcg {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
