"""
Transport subcommands: w2, geodesic
"""

import argparse
import logging

from models import Subcommand
from controllers import get_transport_controller
from commands.common import add_common_arguments, execute

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction):
    w2 = subparsers.add_parser(
        Subcommand.w2.value,
        help="dynamic W2 between mu0 and mu1, cross-checked against the LP oracle on small grids",
    )
    add_common_arguments(w2)
    w2.set_defaults(handler=handle_w2)

    geodesic = subparsers.add_parser(
        Subcommand.geodesic.value,
        help="constant-speed geodesic between mu0 and mu1 with geodesic-property checks",
    )
    add_common_arguments(geodesic)
    geodesic.set_defaults(handler=handle_geodesic)


def handle_w2(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    return execute(args, parser, Subcommand.w2, get_transport_controller().compute_w2)


def handle_geodesic(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    return execute(args, parser, Subcommand.geodesic, get_transport_controller().compute_geodesic)
