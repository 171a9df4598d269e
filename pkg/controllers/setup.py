"""
Experiment setup shared by the controllers: grid, entropy model, endpoint
densities and the flow-check context resolved from a RunConfig
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

from config import get_settings
from models import DensityField, ManifoldSpec, RunConfig
from services.entropy import EntropyModel, make_entropy
from services.evi import FlowCheckContext
from services.manifold import ManifoldGrid, build_grid
from utils.densities import make_density
from utils.helpers import sanitize_filename

logger = logging.getLogger(__name__)


@lru_cache(maxsize=8)
def _grid_for(kind: str, resolution: Tuple[int, ...], length: float) -> ManifoldGrid:
    return build_grid(ManifoldSpec(kind=kind, resolution=list(resolution), length=length))


def cached_grid(spec: ManifoldSpec) -> ManifoldGrid:
    """Grids are immutable and expensive on the sphere; reuse them within a process"""
    return _grid_for(spec.kind.value, tuple(spec.resolution), spec.length)


@dataclass
class ExperimentSetup:
    config: RunConfig
    grid: ManifoldGrid
    model: EntropyModel
    mu0: DensityField
    mu1: DensityField
    ctx: FlowCheckContext

    @property
    def digest(self) -> str:
        return self.ctx.config_digest

    def output_path(self, *parts: str) -> Path:
        path = Path(self.config.output_dir).joinpath(self.config.command.value, *map(sanitize_filename, parts))
        path.parent.mkdir(parents=True, exist_ok=True)
        return path


def build_setup(config: RunConfig, spec: Optional[ManifoldSpec] = None) -> ExperimentSetup:
    """
    Resolve a run configuration into solver inputs

    Flow checks default to the fixed check step (Settings.check_dt) when the
    configuration leaves dt unset; the flow command keeps the grid heuristic.
    """
    settings = get_settings()
    grid = cached_grid(spec or config.manifold)
    model = make_entropy(config.entropy)
    diffusion = config.diffusion
    if diffusion.dt is None:
        diffusion = diffusion.model_copy(update={"dt": settings.check_dt})
    ctx = FlowCheckContext.build(
        grid,
        model,
        lambda_override=config.lambda_override,
        diffusion_params=diffusion,
        transport_params=config.transport,
        relative_tolerance=config.tolerance,
        config_digest=config.digest(),
    )
    setup = ExperimentSetup(
        config=config,
        grid=grid,
        model=model,
        mu0=make_density(grid, config.mu0),
        mu1=make_density(grid, config.mu1),
        ctx=ctx,
    )
    logger.debug(f"Setup {config.command.value} on {grid.spec.label()} with {model.label} (digest {setup.digest})")
    return setup
