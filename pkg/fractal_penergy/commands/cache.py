import argparse
from typing import List

from fractal_penergy.commands.context import resolve_settings
from fractal_penergy.core.dependency import get_result_store
from fractal_penergy.utils.logging import configure_logging


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("cache", help="result cache maintenance")
    actions = parser.add_subparsers(dest="action", required=True)
    compact = actions.add_parser("compact", parents=parents, help="keep one line per input hash")
    compact.set_defaults(handler=cmd_cache_compact)


def cmd_cache_compact(args: argparse.Namespace) -> int:
    cfg = resolve_settings(args)
    configure_logging(cfg, args.log_level)
    store = get_result_store(cfg.results_path)
    dropped = store.compact()
    print(f"{cfg.results_path}: {sum(1 for _ in store.records())} records, {dropped} lines dropped")
    return 0
