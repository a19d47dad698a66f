import argparse
import json
import logging

from storage.models import load_config
from viscolab.services.driver import run

logger = logging.getLogger(__name__)

HELP_TEXT = "Run a simulation from a JSON config and write CSV, snapshots and status.json"


def add_config_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="PATH", help="JSON run configuration")
    parser.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="random seed (overrides the config)")
    parser.add_argument(
        "--override", metavar="KEY=VALUE", action="append", default=[],
        help="dotted config key, value parsed as JSON (repeatable)",
    )


def register(subparsers):
    parser = subparsers.add_parser("run", help=HELP_TEXT, description=HELP_TEXT)
    add_config_arguments(parser)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    run_config = load_config(args.config, args.override, seed=args.seed, output=args.out)
    logger.info(f"RUN scenario={run_config.scenario} seed={run_config.seed} -> {run_config.output}")
    result = run(run_config)
    print(json.dumps(result.to_status(), indent=2))
    return result.exit_code
