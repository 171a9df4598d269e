"""
Shared CLI plumbing: common flags, configuration resolution and exit codes

Configuration layers, later wins: Settings (environment / .env), the
``--config`` JSON file, explicit flags.
"""

import argparse
import asyncio
import json
import logging
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict

from pydantic import ValidationError

from config import Settings, get_settings
from models import RunConfig, RunResult, Subcommand
from services.errors import OTFlowError
from utils.helpers import merge_dicts
from utils.reporting import print_summary, write_reports

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_SOLVER_FAILURE = 3

Runner = Callable[[RunConfig], Awaitable[RunResult]]


def _float_list(text: str):
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated reals, got {text!r}")


def add_common_arguments(parser: argparse.ArgumentParser):
    """Flags shared by every subcommand"""
    parser.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    parser.add_argument("--manifold", help="circle:N | torus2:NxM | sphere2:NxM, optional @length")
    parser.add_argument("--entropy", help="log | power:m=<real>")
    parser.add_argument("--mu0", help="density generator of the first measure")
    parser.add_argument("--mu1", help="density generator of the second measure")
    parser.add_argument("--times", type=_float_list, help="comma-separated flow times")
    parser.add_argument("--s", dest="s_samples", type=_float_list, help="comma-separated path parameters in [0, 1]")
    parser.add_argument("--slices", type=int, help="number K of s-intervals of the dynamic solver")
    parser.add_argument("--penalty", type=float, help="augmented Lagrangian penalty")
    parser.add_argument("--max-iterations", type=int, help="iteration cap of the dynamic solver")
    parser.add_argument("--dt", type=float, help="diffusion time step")
    parser.add_argument("--scheme", choices=["auto", "exact", "implicit"], help="diffusion time integrator")
    parser.add_argument("--save-every", type=int, help="store every k-th diffusion state")
    parser.add_argument("--lambda", dest="lambda_override", type=float, help="override the Ricci lower bound")
    parser.add_argument("--dim", type=int, help="dimension used by the McCann check")
    parser.add_argument("--tolerance", type=float, help="relative tolerance of the checks")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--output-dir", help="directory for reports and exports")


def settings_layer(settings: Settings) -> Dict[str, Any]:
    layer = {
        "output_dir": settings.output_dir,
        "seed": settings.seed,
        "transport": {
            "slices": settings.transport_slices,
            "penalty": settings.transport_penalty,
            "max_iterations": settings.transport_max_iterations,
            "tolerance": settings.transport_tolerance,
            "check_every": settings.transport_check_every,
            "density_floor": settings.density_floor,
            "cg_tolerance": settings.cg_tolerance,
            "cg_max_iterations": settings.cg_max_iterations,
        },
        "diffusion": {
            "newton_tolerance": settings.newton_tolerance,
            "newton_max_iterations": settings.newton_max_iterations,
            "positivity_floor": settings.positivity_floor,
        },
    }
    if settings.diffusion_dt is not None:
        layer["diffusion"]["dt"] = settings.diffusion_dt
    return layer


def flags_layer(args: argparse.Namespace) -> Dict[str, Any]:
    flat = {
        "manifold": args.manifold,
        "entropy": args.entropy,
        "mu0": args.mu0,
        "mu1": args.mu1,
        "times": args.times,
        "s_samples": args.s_samples,
        "lambda_override": args.lambda_override,
        "dim": args.dim,
        "tolerance": args.tolerance,
        "seed": args.seed,
        "output_dir": args.output_dir,
        "parallel": getattr(args, "parallel", None),
        "resume_from": getattr(args, "resume_from", None),
    }
    layer = {k: v for k, v in flat.items() if v is not None}
    transport = {"slices": args.slices, "penalty": args.penalty, "max_iterations": args.max_iterations}
    diffusion = {"dt": args.dt, "scheme": args.scheme, "save_every": args.save_every}
    layer["transport"] = {k: v for k, v in transport.items() if v is not None}
    layer["diffusion"] = {k: v for k, v in diffusion.items() if v is not None}
    return layer


def resolve_config(args: argparse.Namespace, command: Subcommand) -> RunConfig:
    """
    Merge the configuration layers into a validated RunConfig

    Raises:
        ValueError: Unreadable config file or invalid values
    """
    file_layer: Dict[str, Any] = {}
    if args.config is not None:
        try:
            file_layer = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ValueError(f"cannot read config file {args.config}: {e}") from e
        file_layer.pop("command", None)
    merged = merge_dicts(settings_layer(get_settings()), file_layer, flags_layer(args))
    try:
        return RunConfig.model_validate({**merged, "command": command})
    except ValidationError as e:
        raise ValueError(str(e)) from e


def exit_code(result: RunResult) -> int:
    if result.error is not None:
        return EXIT_SOLVER_FAILURE
    return EXIT_PASS if result.passed else EXIT_CHECK_FAILED


def execute(args: argparse.Namespace, parser: argparse.ArgumentParser, command: Subcommand, runner: Runner) -> int:
    """
    Resolve the configuration, run the controller coroutine and write the reports

    Returns:
        Process exit code
    """
    try:
        config = resolve_config(args, command)
    except ValueError as e:
        parser.error(str(e))

    output_dir = Path(config.output_dir) / command.value
    try:
        result = asyncio.run(runner(config))
    except ValueError as e:
        parser.error(str(e))
    except OTFlowError as e:
        logger.error(f"{command.value} failed: {type(e).__name__}: {e}")
        result = RunResult(command=command, config_digest=config.digest(), error=f"{type(e).__name__}: {e}")
    except Exception as e:
        logger.exception(f"{command.value} failed unexpectedly: {type(e).__name__}: {e}")
        result = RunResult(command=command, config_digest=config.digest(), error=f"{type(e).__name__}: {e}")

    extra = dict(result.results)
    if result.error is not None:
        extra["error"] = result.error
    if result.artifacts:
        extra["artifacts"] = result.artifacts
    write_reports(result.reports, output_dir, config_digest=result.config_digest, extra=extra)
    print_summary(result.reports)
    if result.error is not None:
        print(f"ERROR {command.value}: {result.error}")
    code = exit_code(result)
    logger.info(f"{command.value} finished with exit code {code}")
    return code
