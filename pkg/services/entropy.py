"""
Internal-energy integrands e, pressures U and the McCann admissibility test
"""

import logging
import math
from typing import Optional, Union

import numpy as np

from models import CheckReport, DensityField, EntropyKind, EntropySpec
from services.errors import EntropyModelError

logger = logging.getLogger(__name__)

MCCANN_RANGE = (1e-6, 1e6)


class EntropyModel:
    """
    Entropy density e with its derivative, pressure U = r e'(r) - (e(r) - e(0+))
    and U'. Instances are immutable.
    """

    def __init__(self, spec: EntropySpec):
        self.spec = spec
        self.kind = spec.kind
        self.m = spec.m
        if self.kind == EntropyKind.power:
            if self.m is None or not self.m > 0.0 or self.m == 1.0:
                raise EntropyModelError(f"power entropy needs m > 0 and m != 1, got m={self.m}")
        self.e_at_zero_limit = 0.0
        self.superlinear = self.kind == EntropyKind.log or self.m > 1.0
        # e'(inf): metadata only
        self.e_prime_at_infinity = math.inf if self.superlinear else 0.0

    @property
    def label(self) -> str:
        return self.spec.label()

    @property
    def linear_pressure(self) -> bool:
        """True when U(r) = r, so the flow is the heat equation"""
        return self.kind == EntropyKind.log

    def e(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == EntropyKind.log:
            return r * np.log(r)
        return r ** self.m / (self.m - 1.0)

    def de(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == EntropyKind.log:
            return np.log(r) + 1.0
        return self.m * r ** (self.m - 1.0) / (self.m - 1.0)

    def U(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == EntropyKind.log:
            return r.copy()
        return r ** self.m

    def dU(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == EntropyKind.log:
            return np.ones_like(r)
        return self.m * r ** (self.m - 1.0)

    def pressure_defect(self, r):
        """r U'(r) - U(r); vanishes identically for the heat flow"""
        r = np.asarray(r, dtype=float)
        if self.kind == EntropyKind.log:
            return np.zeros_like(r)
        return (self.m - 1.0) * r ** self.m

    def __repr__(self) -> str:
        return f"EntropyModel({self.label})"


def make_entropy(kind: Union[EntropySpec, str]) -> EntropyModel:
    """
    Build an entropy model from a spec or its CLI string

    Args:
        kind: EntropySpec or text such as ``log`` / ``power:m=2``

    Returns:
        Validated EntropyModel
    """
    if isinstance(kind, str):
        try:
            kind = EntropySpec.parse(kind)
        except ValueError as e:
            raise EntropyModelError(str(e)) from e
    return EntropyModel(kind)


def check_mccann(model: EntropyModel, n: int, samples: int = 512) -> CheckReport:
    """
    Sampled test of U >= 0 and r U'(r) - (1 - 1/n) U(r) >= 0

    Both margins are normalized by max(|U|, |r U'|) per sample so the worst
    sample is meaningful across the twelve decades of the range.
    """
    if n < 1:
        raise EntropyModelError(f"dimension must be >= 1, got {n}")
    r = np.logspace(math.log10(MCCANN_RANGE[0]), math.log10(MCCANN_RANGE[1]), samples)
    U = model.U(r)
    rdU = r * model.dU(r)
    scale = np.maximum(np.maximum(np.abs(U), np.abs(rdU)), np.finfo(float).tiny)

    pressure_margin = U / scale
    mccann_margin = (rdU - (1.0 - 1.0 / n) * U) / scale
    i_p = int(np.argmin(pressure_margin))
    i_m = int(np.argmin(mccann_margin))

    notes = []
    if n == 1:
        notes.append("dimension 1: inequalities applied with n = 1")
    if pressure_margin[i_p] < mccann_margin[i_m]:
        worst, lhs, rhs = i_p, 0.0, pressure_margin[i_p]
        violated = "pressure nonnegativity U >= 0"
    else:
        worst, lhs, rhs = i_m, (1.0 - 1.0 / n) * U[i_m] / scale[i_m], rdU[i_m] / scale[i_m]
        violated = "r U'(r) - (1 - 1/n) U(r) >= 0"

    report = CheckReport.inequality(
        name=f"mccann[{model.label},n={n}]",
        reference="McCann conditions",
        lhs=lhs,
        rhs=rhs,
        tolerance=1e-12,
        measured={
            "worst_pressure_margin": float(pressure_margin[i_p]),
            "worst_mccann_margin": float(mccann_margin[i_m]),
            "rho_at_worst": float(r[worst]),
            "dim": float(n),
            "samples": float(samples),
        },
        notes=notes,
    )
    if not report.passed:
        report.notes.append(f"violated: {violated} at rho={r[worst]:.6g}")
        logger.info(f"McCann check failed for {model.label}, n={n}: {violated}")
    return report


def evaluate(model: EntropyModel, grid, rho: Union[DensityField, np.ndarray]) -> float:
    """Integral of e(rho) under the grid quadrature; rho must be strictly positive"""
    values = rho.values if isinstance(rho, DensityField) else np.asarray(rho, dtype=float)
    values = grid.check_scalar(values, "density")
    if np.min(values) <= 0.0:
        raise EntropyModelError(f"entropy needs a strictly positive density, min={np.min(values):.3e}")
    return grid.integrate(model.e(values))


def entropy_lower_bound(model: EntropyModel, volume: float) -> float:
    """Jensen floor vol * e(1/vol) of the entropy over unit-mass densities"""
    return float(volume * model.e(1.0 / volume))


def dissipation_integrand(model: EntropyModel, grid, values: np.ndarray) -> np.ndarray:
    """Pointwise <grad U(rho), grad e'(rho)>, the entropy production density of the flow"""
    return grid.inner(grid.gradient(model.U(values)), grid.gradient(model.de(values)))


def mccann_valid(model: EntropyModel, n: Optional[int]) -> bool:
    return n is not None and check_mccann(model, n).passed
