"""
Suite subcommand: the full check battery
"""

import argparse

from models import Subcommand
from controllers import get_suite_controller
from commands.common import add_common_arguments, execute


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("--parallel must be >= 1")
    return value


def register(subparsers: argparse._SubParsersAction):
    parser = subparsers.add_parser(Subcommand.suite.value, help="run every check for one manifold and entropy")
    add_common_arguments(parser)
    parser.add_argument("--parallel", type=_positive_int, help="number of checks run concurrently")
    parser.set_defaults(handler=handle_suite)


def handle_suite(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    return execute(args, parser, Subcommand.suite, get_suite_controller().run_suite)
