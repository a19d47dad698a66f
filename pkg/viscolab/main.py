import argparse
import logging
from typing import List, Optional

from viscolab.exceptions import ViscoLabError, exit_code_for

logger = logging.getLogger(__name__)


def setup_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viscolab",
        description="Pseudo-spectral simulator for compressible power-law Oldroyd-B flow",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    from viscolab.handlers import check, entropy, plot, run

    run.register(subparsers)
    check.register(subparsers)
    entropy.register(subparsers)
    plot.register(subparsers)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = setup_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ViscoLabError as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed ({type(e).__name__}, exit {code}): {e}")
        return code
