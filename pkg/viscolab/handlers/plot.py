import argparse
import logging

from viscolab.services.chart import plot_timeseries

logger = logging.getLogger(__name__)

HELP_TEXT = "Plot the time-series CSV of a run as PNG"


def register(subparsers):
    parser = subparsers.add_parser("plot", help=HELP_TEXT, description=HELP_TEXT)
    parser.add_argument("csv", help="timeseries.csv of a run")
    parser.add_argument("--png", help="output image (default: next to the CSV)")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    path = plot_timeseries(args.csv, args.png)
    print(path)
    return 0
