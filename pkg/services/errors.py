"""
Exception hierarchy shared by the numerical services
"""


class OTFlowError(Exception):
    """Base class for every solver-side failure"""


class GridError(OTFlowError):
    """Invalid manifold spec or a field that does not live on the grid"""


class EntropyModelError(OTFlowError):
    """Invalid entropy parameters or a density the model cannot evaluate"""


class DiffusionError(OTFlowError):
    """Positivity loss or a failed implicit solve in the diffusion stepper"""


class TransportError(OTFlowError):
    """Endpoint/mass mismatch, oracle size cap or infeasible transport input"""


class ConvergenceError(TransportError):
    """An iterative solver exhausted its iteration budget"""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class CheckInputError(OTFlowError):
    """A verification was asked for with inputs outside its scope"""


class DensityError(OTFlowError):
    """A density that is not strictly positive with unit mass on its grid"""
