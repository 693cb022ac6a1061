"""Command-line entrypoint that registers the subcommand groups."""

import argparse
import sys
from typing import List, Optional

from fractal_penergy import __version__
from fractal_penergy.commands import analysis, cache, check, construct
from fractal_penergy.commands.context import common_parser
from fractal_penergy.core.errors import PEnergyError


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="penergy",
        description="Discrete p-energies, conductance scaling and cutoff constructions "
        "on self-similar partitions.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    parents = [common_parser()]
    check.register(subparsers, parents)
    analysis.register(subparsers, parents)
    construct.register(subparsers, parents)
    cache.register(subparsers, parents)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = create_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except PEnergyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
