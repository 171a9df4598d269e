"""
Check subcommands: one per family of verification checks
"""

import argparse
from functools import partial

from models import Subcommand
from controllers import get_checks_controller
from commands.common import add_common_arguments, execute

CHECKS = {
    Subcommand.evi_check: ("evi_check", "integral and differential EVI, regularization and continuity bounds"),
    Subcommand.convexity_check: ("convexity_check", "displacement convexity along the computed geodesic"),
    Subcommand.contraction_check: ("contraction_check", "lambda-contraction of the flow in W2"),
    Subcommand.action_identity: ("action_identity", "action derivative identity with an N vs 2N refinement study"),
    Subcommand.bochner_check: ("bochner_check", "Bochner identity and Hessian trace inequality on random fields"),
    Subcommand.mccann_check: ("mccann_check", "McCann conditions of the entropy in dimension --dim"),
}


def register(subparsers: argparse._SubParsersAction):
    for command, (method, description) in CHECKS.items():
        parser = subparsers.add_parser(command.value, help=description)
        add_common_arguments(parser)
        parser.set_defaults(handler=partial(handle_check, command, method))


def handle_check(command: Subcommand, method: str, args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    return execute(args, parser, command, getattr(get_checks_controller(), method))
