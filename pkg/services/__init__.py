"""Services package initialization"""

from .errors import (
    OTFlowError,
    GridError,
    EntropyModelError,
    DiffusionError,
    TransportError,
    ConvergenceError,
    CheckInputError,
    DensityError,
)
from .manifold import ManifoldGrid, build_grid
from .entropy import EntropyModel, make_entropy, check_mccann
from .diffusion import step, evolve, flow
from .transport import solve_w2, solve_potential, reparametrize, interpolate
from .lp_oracle import lp_w2_oracle

__all__ = [
    'OTFlowError',
    'GridError',
    'EntropyModelError',
    'DiffusionError',
    'TransportError',
    'ConvergenceError',
    'CheckInputError',
    'DensityError',
    'ManifoldGrid',
    'build_grid',
    'EntropyModel',
    'make_entropy',
    'check_mccann',
    'step',
    'evolve',
    'flow',
    'solve_w2',
    'solve_potential',
    'reparametrize',
    'interpolate',
    'lp_w2_oracle',
]
