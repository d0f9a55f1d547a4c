import argparse
import logging
import sys
from typing import List, Optional

from cli.commands import analysis, curve, encode, evaluate, supervise, sweep, train
from cli.core.inputs import UsageError
from config.settings import get_config
from core.errors import ParasentError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

COMMANDS = (train, evaluate, encode, analysis, curve, sweep, supervise)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports bad usage as an exception instead of exiting with 2."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (defaults to PARASENT_SEED)")
    common.add_argument("--log-level", help="logging level (defaults to PARASENT_LOG_LEVEL)")
    common.add_argument("--no-progress", action="store_true", help="hide progress bars")
    return common


def build_parser() -> CliParser:
    parser = CliParser(prog="parasent", description="Train and evaluate paraphrastic sentence embeddings.")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    common = common_arguments()
    for command in COMMANDS:
        command.register(subparsers, [common])
    return parser


def configure_logging(level: Optional[str]) -> None:
    level = (level or get_config().log_level).upper()
    if level not in logging.getLevelNamesMapping():
        raise UsageError(f"unknown log level {level!r}")
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.log_level)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_USAGE

    try:
        return args.run(args)
    except UsageError as e:
        print(f"parasent {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ParasentError, OSError) as e:
        print(f"parasent {args.command}: error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        logger.exception("Unexpected failure in %s", args.command)
        print(f"parasent {args.command}: internal error: {e}", file=sys.stderr)
        return EXIT_FAILURE
