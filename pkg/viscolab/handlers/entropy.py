import argparse
import json
import logging

from storage.snapshots import read_state
from viscolab.services.diagnostics import relative_entropy
from viscolab.services.twin_run import restrict

logger = logging.getLogger(__name__)

HELP_TEXT = "Relative entropy between two snapshot sets (the reference is restricted to the first grid)"


def register(subparsers):
    parser = subparsers.add_parser("entropy", help=HELP_TEXT, description=HELP_TEXT)
    parser.add_argument("snapshots", help="snapshot directory of the compared state")
    parser.add_argument("reference", help="snapshot directory of the reference state")
    parser.add_argument("--step", type=int, help="step of the compared set (default: latest)")
    parser.add_argument("--ref-step", type=int, help="step of the reference set (default: latest)")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    state = read_state(args.snapshots, args.step)
    ref = read_state(args.reference, args.ref_step)
    if ref.grid != state.grid:
        logger.info(f"Restricting reference from n={ref.grid.n} to n={state.grid.n}")
        ref = restrict(ref, state.grid)
    if abs(ref.time - state.time) > 1e-9 * max(1.0, abs(state.time)):
        logger.warning(f"Comparing states at different times: {state.time:.6g} vs {ref.time:.6g}")

    report = relative_entropy(state, ref)
    print(json.dumps({"time": state.time, "reference_time": ref.time, **report.as_dict()}, indent=2))
    return 0
