"""
Command router: aggregates the command modules into one parser.
"""
import argparse
import logging
from typing import List, Optional

from app.cli.commands import differential, hs, render, strebel, trajectories
from app.core.config import settings
from app.core.exceptions import EXIT_SCHEMA, handle_exception

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdiff", description=f"{settings.APP_NAME} {settings.APP_VERSION}")
    parser.add_argument("--seed", type=int, default=None, help="random seed (KDIFF_SEED)")
    parser.add_argument("--threads", type=int, default=None, help="worker cap (KDIFF_THREADS)")
    parser.add_argument("--debug", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Include all command modules
    differential.register(subparsers)
    trajectories.register(subparsers)
    strebel.register(subparsers)
    hs.register(subparsers)
    render.register(subparsers)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """
    Parse a command line and dispatch it.

    Returns:
        Exit status: 0 ok, 2 schema or usage, 3 numeric budget, 4 refusal, 1 otherwise
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_SCHEMA if e.code not in (0, None) else 0
    if args.seed is not None:
        settings.KDIFF_SEED = args.seed
    if args.threads is not None:
        settings.KDIFF_THREADS = max(1, args.threads)
    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
    logger.debug(f"Running command {args.command}")
    try:
        return args.handler(args)
    except Exception as e:
        return handle_exception(e)
