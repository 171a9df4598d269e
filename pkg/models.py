"""
Pydantic models for every solver input, numeric value type and check report
"""

import hashlib
import json
import math
import re
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

if TYPE_CHECKING:
    from services.manifold import ManifoldGrid


# ==================== MANIFOLD MODELS ====================

class ManifoldKind(str, Enum):
    """Supported closed manifolds"""
    circle = "circle"
    torus2 = "torus2"
    sphere2 = "sphere2"


MIN_RESOLUTION = 8


class ManifoldSpec(BaseModel):
    """Description of a discretized compact manifold"""
    model_config = ConfigDict(frozen=True)

    kind: ManifoldKind = Field(..., description="Manifold family")
    resolution: List[int] = Field(..., description="Nodes per axis (circle: [N], torus2: [Nx, Ny], sphere2: [Ntheta, Nphi])")
    length: float = Field(1.0, gt=0.0, description="Side length for circle/torus2; the sphere always has unit radius")

    @field_validator("resolution")
    @classmethod
    def _check_resolution(cls, value: List[int]) -> List[int]:
        if any(n < MIN_RESOLUTION for n in value):
            raise ValueError(f"resolution must be >= {MIN_RESOLUTION} per axis, got {value}")
        return value

    @model_validator(mode="after")
    def _check_axes(self) -> "ManifoldSpec":
        expected = {ManifoldKind.circle: 1, ManifoldKind.torus2: 2, ManifoldKind.sphere2: 2}[self.kind]
        if len(self.resolution) != expected:
            raise ValueError(f"{self.kind.value} needs {expected} resolution value(s), got {self.resolution}")
        if self.kind == ManifoldKind.sphere2:
            if self.length != 1.0:
                raise ValueError("sphere2 uses unit radius only")
            if self.resolution[1] % 2:
                raise ValueError("sphere2 needs an even number of longitudes")
        return self

    @classmethod
    def parse(cls, text: str) -> "ManifoldSpec":
        """
        Parse the CLI form ``circle:64``, ``torus2:32x32``, ``sphere2:48x96``

        A single number for torus2 means a square grid; for sphere2 it is the
        latitude count and the longitude count is twice that. An optional
        ``@<length>`` suffix sets the side length of circle/torus2.
        """
        kind, _, rest = text.partition(":")
        if not rest:
            raise ValueError(f"manifold must look like kind:resolution, got {text!r}")
        rest, _, length = rest.partition("@")
        resolution = [int(part) for part in rest.lower().split("x")]
        if kind == ManifoldKind.torus2.value and len(resolution) == 1:
            resolution = resolution * 2
        if kind == ManifoldKind.sphere2.value and len(resolution) == 1:
            resolution = [resolution[0], 2 * resolution[0]]
        return cls(kind=kind, resolution=resolution, length=float(length) if length else 1.0)

    def label(self) -> str:
        return f"{self.kind.value}:{'x'.join(str(n) for n in self.resolution)}"


# ==================== ENTROPY MODELS ====================

class EntropyKind(str, Enum):
    """Internal-energy families"""
    log = "log"
    power = "power"


class EntropySpec(BaseModel):
    """Selection of the entropy integrand e"""
    model_config = ConfigDict(frozen=True)

    kind: EntropyKind = Field(EntropyKind.log, description="log: e = r log r; power: e = r^m/(m-1)")
    m: Optional[float] = Field(None, description="Exponent of the power family")

    @classmethod
    def parse(cls, text: str) -> "EntropySpec":
        """Parse ``log`` or ``power:m=<real>``"""
        if text == EntropyKind.log.value:
            return cls(kind=EntropyKind.log)
        kind, _, rest = text.partition(":")
        if kind != EntropyKind.power.value or not rest.startswith("m="):
            raise ValueError(f"entropy must be 'log' or 'power:m=<real>', got {text!r}")
        return cls(kind=EntropyKind.power, m=float(rest[2:]))

    def label(self) -> str:
        return "log" if self.kind == EntropyKind.log else f"power:m={self.m:g}"


# ==================== SOLVER PARAMETER MODELS ====================

class DiffusionScheme(str, Enum):
    """Time integrator selection"""
    auto = "auto"          # exact propagator for the heat flow, implicit Euler otherwise
    exact = "exact"
    implicit = "implicit"


class DiffusionParams(BaseModel):
    """Parameters of the nonlinear diffusion stepper"""
    dt: Optional[float] = Field(None, gt=0.0, description="Time step; None selects the grid heuristic")
    scheme: DiffusionScheme = Field(DiffusionScheme.auto, description="Time integrator")
    newton_tolerance: float = Field(1e-12, gt=0.0)
    newton_max_iterations: int = Field(50, ge=1)
    positivity_floor: float = Field(1e-10, gt=0.0)
    save_every: int = Field(1, ge=1, description="Keep every k-th state in trajectories")


class TransportParams(BaseModel):
    """Parameters of the dynamic W2 solver and the potential recovery"""
    slices: int = Field(16, ge=8, description="Number K of s-intervals; the path has K+1 slices")
    penalty: float = Field(1.0, gt=0.0, description="Augmented Lagrangian penalty r")
    max_iterations: int = Field(20000, ge=1)
    tolerance: float = Field(1e-7, gt=0.0, description="Relative action change over one check window")
    check_every: int = Field(50, ge=1)
    density_floor: float = Field(1e-9, gt=0.0)
    cg_tolerance: float = Field(1e-12, gt=0.0)
    cg_max_iterations: int = Field(5000, ge=1)


class TolerancePolicy(BaseModel):
    """Additive tolerance scaled by the natural magnitude of a check"""
    relative: float = Field(5e-3, gt=0.0)
    floor: float = Field(1e-8, gt=0.0)

    def scaled(self, *magnitudes: float) -> float:
        return self.relative * max([abs(m) for m in magnitudes] + [self.floor])


# ==================== CHECK REPORT MODELS ====================

class CheckKind(str, Enum):
    inequality = "inequality"
    identity = "identity"


class CheckReport(BaseModel):
    """Structured outcome of one identity or inequality verification"""
    name: str = Field(..., description="Check name, unique within a run")
    reference: str = Field("", description="Name of the result the check verifies")
    kind: CheckKind = Field(CheckKind.inequality)
    inputs_digest: str = Field("", description="Digest of the inputs and the run configuration")
    measured: Dict[str, float] = Field(default_factory=dict)
    lhs: float = 0.0
    rhs: float = 0.0
    slack: float = Field(0.0, description="rhs - lhs for inequalities, -|residual| for identities")
    tolerance: float = 0.0
    passed: bool = False
    notes: List[str] = Field(default_factory=list)

    @classmethod
    def inequality(
        cls,
        name: str,
        lhs: float,
        rhs: float,
        tolerance: float,
        reference: str = "",
        measured: Optional[Dict[str, float]] = None,
        notes: Optional[List[str]] = None,
    ) -> "CheckReport":
        """Report for ``lhs <= rhs``; passes iff rhs - lhs >= -tolerance"""
        slack = float(rhs) - float(lhs)
        return cls(
            name=name,
            reference=reference,
            kind=CheckKind.inequality,
            measured=measured or {},
            lhs=float(lhs),
            rhs=float(rhs),
            slack=slack,
            tolerance=float(tolerance),
            passed=bool(slack >= -tolerance),
            notes=notes or [],
        )

    @classmethod
    def identity(
        cls,
        name: str,
        lhs: float,
        rhs: float,
        tolerance: float,
        reference: str = "",
        measured: Optional[Dict[str, float]] = None,
        notes: Optional[List[str]] = None,
    ) -> "CheckReport":
        """Report for ``lhs == rhs``; passes iff |lhs - rhs| <= tolerance"""
        residual = abs(float(lhs) - float(rhs))
        return cls(
            name=name,
            reference=reference,
            kind=CheckKind.identity,
            measured=measured or {},
            lhs=float(lhs),
            rhs=float(rhs),
            slack=-residual,
            tolerance=float(tolerance),
            passed=bool(residual <= tolerance),
            notes=notes or [],
        )

    def summary_line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} slack={self.slack:.3e} tol={self.tolerance:.3e}"


# ==================== NUMERIC VALUE TYPES ====================

MASS_TOLERANCE = 1e-10


class DensityField(BaseModel):
    """
    Strictly positive grid density with unit mass under the grid quadrature

    The grid annotation is resolved by services.manifold once ManifoldGrid exists.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    grid: "ManifoldGrid" = Field(..., description="Grid the values live on")

    @model_validator(mode="after")
    def _check_density(self) -> "DensityField":
        from services.errors import DensityError

        if self.values.shape != self.grid.shape:
            raise DensityError(f"density shape {self.values.shape} does not match grid {self.grid.shape}")
        low = float(np.min(self.values))
        if not low > 0.0 or not np.all(np.isfinite(self.values)):
            raise DensityError(f"density must be finite and strictly positive, min = {low:.3e}")
        mass = self.mass()
        if abs(mass - 1.0) > MASS_TOLERANCE:
            raise DensityError(f"density must have unit mass, got {mass:.12g}")
        return self

    def mass(self) -> float:
        return float(self.grid.integrate(self.values))

    def minimum(self) -> float:
        return float(np.min(self.values))


class DiffusionTrajectory(BaseModel):
    """Sampled solution of the diffusion equation"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    times: np.ndarray
    states: List[DensityField]
    entropies: np.ndarray = Field(..., description="Entropy of every stored state")

    @property
    def final(self) -> DensityField:
        return self.states[-1]


class TransportPath(BaseModel):
    """Discrete curve s -> (rho^s, phi^s) solving the continuity equation"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    s_nodes: np.ndarray
    rho: List[DensityField]
    phi: List[np.ndarray]
    action_per_s: np.ndarray
    w2_sq_estimate: float
    drift: Optional[np.ndarray] = Field(None, description="Constant velocity added to grad phi per slice, shape (K+1, dim)")
    metric_length_sq: Optional[float] = Field(None, description="L^2 of a reparametrized path")
    continuity_residual: float = 0.0
    continuity_tolerance: float = 0.0
    floor_active: bool = False
    iterations: int = 0
    notes: List[str] = Field(default_factory=list)

    @property
    def slices(self) -> int:
        return len(self.rho)

    @property
    def w2(self) -> float:
        return math.sqrt(max(self.w2_sq_estimate, 0.0))


class CouplingPlan(BaseModel):
    """Sparse optimal coupling between two node-supported discrete measures"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    source_marginal: np.ndarray
    target_marginal: np.ndarray
    cost: float
    duality_gap: float


# ==================== RUN CONFIGURATION ====================

class Subcommand(str, Enum):
    w2 = "w2"
    geodesic = "geodesic"
    flow = "flow"
    evi_check = "evi-check"
    convexity_check = "convexity-check"
    contraction_check = "contraction-check"
    action_identity = "action-identity"
    bochner_check = "bochner-check"
    mccann_check = "mccann-check"
    suite = "suite"


_REAL = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
DENSITY_GENERATOR = re.compile(
    rf"^(?:uniform|bump:{_REAL}(?:,{_REAL})?|two-bump:{_REAL},{_REAL}|random:\d+|mode:\d+)$"
)


class RunConfig(BaseModel):
    """Fully resolved configuration of one CLI run"""
    command: Subcommand
    manifold: ManifoldSpec = Field(default_factory=lambda: ManifoldSpec(kind=ManifoldKind.circle, resolution=[64]))
    entropy: EntropySpec = Field(default_factory=EntropySpec)
    lambda_override: Optional[float] = Field(None, description="Replaces the Ricci lower bound of the grid")
    diffusion: DiffusionParams = Field(default_factory=DiffusionParams)
    transport: TransportParams = Field(default_factory=TransportParams)
    mu0: str = Field("bump:0", description="Density generator for the first measure")
    mu1: str = Field("bump:0.25", description="Density generator for the second measure")
    times: List[float] = Field(default_factory=lambda: [0.0, 0.01])
    s_samples: List[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75])
    dim: Optional[int] = Field(None, description="Dimension used by the McCann check")
    tolerance: Optional[float] = Field(None, gt=0.0, description="Overrides the grid's relative tolerance")
    output_dir: str = "runs"
    seed: int = 0
    parallel: int = Field(1, ge=1)
    resume_from: Optional[str] = Field(None, description="Directory of an earlier flow run to continue from")

    @field_validator("manifold", mode="before")
    @classmethod
    def _parse_manifold(cls, value: Any) -> Any:
        return ManifoldSpec.parse(value) if isinstance(value, str) else value

    @field_validator("entropy", mode="before")
    @classmethod
    def _parse_entropy(cls, value: Any) -> Any:
        return EntropySpec.parse(value) if isinstance(value, str) else value

    @field_validator("mu0", "mu1")
    @classmethod
    def _check_generator(cls, value: str) -> str:
        if not DENSITY_GENERATOR.match(value):
            raise ValueError(f"unknown density generator {value!r}")
        return value

    @field_validator("times")
    @classmethod
    def _check_times(cls, value: List[float]) -> List[float]:
        if not value or min(value) < 0.0:
            raise ValueError("times must be a nonempty list of nonnegative reals")
        return value

    @field_validator("s_samples")
    @classmethod
    def _check_s_samples(cls, value: List[float]) -> List[float]:
        if not value or any(not 0.0 <= s <= 1.0 for s in value):
            raise ValueError("s samples must lie in [0, 1]")
        return value

    @property
    def lambda_overridden(self) -> bool:
        return self.lambda_override is not None

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; output_dir does not enter"""
        payload = self.model_dump(mode="json", exclude={"output_dir", "parallel"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class RunResult(BaseModel):
    """Outcome of one controller call: its check reports and any computed values"""
    command: Subcommand
    config_digest: str = ""
    reports: List[CheckReport] = Field(default_factory=list)
    results: Dict[str, Any] = Field(default_factory=dict, description="Computed values such as W2 estimates")
    artifacts: List[str] = Field(default_factory=list, description="Files written besides the reports")
    error: Optional[str] = Field(None, description="Diagnostic of a solver failure")

    @property
    def passed(self) -> bool:
        return self.error is None and all(r.passed for r in self.reports)
