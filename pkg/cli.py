"""
Command-line entry point: cpsor <command> [options].

Exit codes: 0 success, 1 usage or domain error, 2 missing prerequisite artifact.
"""
import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError

from commands import ablate, compare_dbn, discretize, evaluate, generate, learn_dbn, plot, train
from settings import load_run_config
from utils.errors import LabError, MissingArtifactError
from utils.logger_factory import new_logger

log = new_logger("cli")

EXIT_OK, EXIT_USAGE, EXIT_MISSING = 0, 1, 2
COMMANDS = [generate, discretize, learn_dbn, train, evaluate, ablate, compare_dbn, plot]


class LabArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped onto exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> LabArgumentParser:
    parser = LabArgumentParser(prog="cpsor", description="Cognitive trajectory prediction laboratory")
    parser.add_argument("--config", help="JSON run config; flags override it (default: $CPSOR_CONFIG if set)")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=LabArgumentParser)
    for module in COMMANDS:
        module.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config)
        args.handler(args, config)
    except MissingArtifactError as e:
        log.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (LabError, ValidationError, OSError) as e:
        log.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
