import argparse
import json
import logging
from dataclasses import asdict

from storage.snapshots import read_state
from viscolab.exceptions import BarrierError, PositivityError
from viscolab.services.diagnostics import positivity_report, trace_log_inequality_check

logger = logging.getLogger(__name__)

HELP_TEXT = "Check admissibility invariants and the trace-log inequality on a snapshot set"
DEFAULT_SIGMA = 0.1


def register(subparsers):
    parser = subparsers.add_parser("check", help=HELP_TEXT, description=HELP_TEXT)
    parser.add_argument("snapshots", help="snapshot directory")
    parser.add_argument("--step", type=int, help="step of the snapshot set (default: latest)")
    parser.add_argument("--sigma", type=float, default=DEFAULT_SIGMA, help="cutoff level for the trace-log check")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    state = read_state(args.snapshots, args.step)
    report = positivity_report(state)
    lhs, rhs, margin = trace_log_inequality_check(state.T, args.sigma)

    violations = []
    if report.min_rho <= 0:
        violations.append(PositivityError(f"min rho = {report.min_rho:.6g}"))
    if report.min_eta < 0:
        violations.append(PositivityError(f"min eta = {report.min_eta:.6g}"))
    if report.max_div_u_b >= 1.0:
        violations.append(BarrierError(f"b·max|div u| = {report.max_div_u_b:.6g}"))
    if report.min_eig_T <= 0:
        violations.append(PositivityError(f"min eig T = {report.min_eig_T:.6g}"))

    summary = {
        "time": state.time,
        "positivity": asdict(report),
        "trace_log": {"sigma": args.sigma, "lhs": lhs, "rhs": rhs, "margin": margin},
        "violations": [str(v) for v in violations],
    }
    print(json.dumps(summary, indent=2))
    for violation in violations:
        logger.error(f"Invariant violated: {violation}")
    return 4 if violations else 0
