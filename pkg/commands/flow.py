"""
Flow subcommand: evolve mu0 and export the trajectory
"""

import argparse

from models import Subcommand
from controllers import get_flow_controller
from commands.common import add_common_arguments, execute


def register(subparsers: argparse._SubParsersAction):
    parser = subparsers.add_parser(
        Subcommand.flow.value,
        help="evolve mu0 to the last of --times; writes trajectory.csv and the binary trajectory",
    )
    add_common_arguments(parser)
    parser.add_argument("--resume", dest="resume_from", help="continue from the trajectory saved in an earlier flow output directory")
    parser.set_defaults(handler=handle_flow)


def handle_flow(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    return execute(args, parser, Subcommand.flow, get_flow_controller().run_flow)
