"""Commands package initialization"""

import argparse

from . import checks, flow, suite, transport


def build_parser() -> argparse.ArgumentParser:
    """Top-level parser with one sub-parser per subcommand"""
    parser = argparse.ArgumentParser(
        prog="otflow",
        description="Dynamic optimal transport, nonlinear diffusion and gradient-flow verification checks",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for module in (transport, flow, checks, suite):
        module.register(subparsers)
    return parser


__all__ = ['build_parser']
