"""
otflow - Dynamic optimal transport and gradient-flow verification
Command-line entry point: ``python main.py <subcommand> [flags]``
"""

import logging
import sys
from typing import List, Optional

# Load environment variables from .env
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass  # If dotenv is not installed, settings fall back to the process environment

from config import Settings, get_settings
from commands import build_parser

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(settings: Settings):
    """Human-readable or JSON records on stderr; stdout carries only the PASS/FAIL summary"""
    handler = logging.StreamHandler(sys.stderr)
    if settings.log_format.lower() == "json":
        try:
            from pythonjsonlogger.json import JsonFormatter
        except ImportError:  # python-json-logger < 3
            from pythonjsonlogger.jsonlogger import JsonFormatter
        handler.setFormatter(JsonFormatter(LOG_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))

    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(settings.log_level.upper())


def run(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run one subcommand and return its exit code

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:])

    Returns:
        0 all checks passed, 1 a check failed, 2 usage error, 3 solver failure
    """
    configure_logging(get_settings())
    parser = build_parser()
    args = parser.parse_args(argv)
    logger.info(f"Running {args.command}")
    return args.handler(args, parser)


if __name__ == "__main__":
    sys.exit(run())
