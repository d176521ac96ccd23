"""Command-line entry point for FinRay Tactile Lab."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add src directory to path for imports
sys.path.insert(0, str(Path(__file__).parent))

# Handle imports - try relative first, then absolute
try:
    from .api import ExperimentAPI
    from .config import Config
    from .exceptions import FinRayError
    from .logger import Logger
except ImportError:
    # Fallback to absolute imports when running as script
    from api import ExperimentAPI
    from config import Config
    from exceptions import FinRayError
    from logger import Logger

COMMANDS = {
    "simulate": "render a synthetic classification or regression dataset",
    "train": "train one learner on a dataset manifest",
    "eval": "score a checkpoint on a dataset manifest",
    "ablation": "train and compare several learners on the same data",
    "grad-check": "check every autodiff primitive against finite differences",
    "unwarp": "unwarp every frame of a directory with the configured calibration",
}

EPILOG = ("Any setting can be overridden with --key value or --section.key value, "
          "e.g. --epochs 10 --model.widths 8,16 --out runs/cnn3.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finray", description="FinRay tactile perception lab",
                                     epilog=EPILOG)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, epilog=EPILOG, allow_abbrev=False)
        sub.add_argument("--config", help="INI file with settings (see resolved_config.ini)")
    return parser


def _dispatch(api: ExperimentAPI, command: str) -> int:
    if command == "simulate":
        manifest = api.simulate()
        print(f"{len(manifest)} {manifest.kind} records -> {api.output_dir / 'manifest.jsonl'}")
    elif command == "train":
        result = api.train()
        print(f"{result.spec.arch.display_name}: {len(result.history)} epochs, "
              f"best epoch {result.best_epoch} -> {api.output_dir / 'checkpoint.ftckpt'}")
    elif command == "eval":
        _, table = api.evaluate()
        print(table, end="")
    elif command == "ablation":
        _, table = api.ablation()
        print(table, end="")
    elif command == "grad-check":
        results = api.grad_check()
        for name, report in results.items():
            verdict = "ok" if report.passed else "FAIL"
            print(f"{name:<24} {report.max_rel_error:.3e}  {verdict}")
        if not all(report.passed for report in results.values()):
            return 1
    elif command == "unwarp":
        count = api.unwarp_frames()
        print(f"{count} frames -> {api.output_dir / 'unwarped'}")
    return 0


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command, and return its exit code."""
    parser = build_parser()
    args, overrides = parser.parse_known_args(argv)

    logger_instance = Logger()
    logger = Logger.get_logger(__name__)
    try:
        config = Config(args.command)
        if args.config:
            config.load_file(args.config)
        config.apply_overrides(overrides)

        level = logging.getLevelName(str(config.get("output", "log_level")).upper())
        logger_instance.log_level = level if isinstance(level, int) else logging.INFO
        config.write_resolved(config.output_dir)
        logger_instance.attach_file(str(config.output_dir / "run.log"))
        logger.info(f"=== finray {args.command} -> {config.output_dir} ===")

        return _dispatch(ExperimentAPI(config), args.command)
    except FinRayError as e:
        logger.debug(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        return 130


def main():
    sys.exit(run())


if __name__ == '__main__':
    try:
        main()
    except Exception as e:
        print(f"Fatal error: {e}")
        sys.exit(1)
