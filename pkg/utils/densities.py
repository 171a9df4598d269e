"""
Named density generators used by the CLI and the tests

    uniform             constant density
    bump:<c>[,<w>]      (1 + cos(pi u / w))^2 for |u| < w, zero elsewhere, u the periodic offset from c
                        as a fraction of the period; w defaults to 1/8 and w = 1/2 gives the
                        full-support (1 + cos(2 pi u))^2 profile (sphere: (1 + <x, p>)^4, p at
                        colatitude c*pi)
    two-bump:<c1>,<c2>  equal mixture of two bumps
    random:<seed>       uniform plus a band-limited perturbation of sup-norm <= 1/2
    mode:<k>            1 + 0.1 cos(2 pi k x) on flat grids (the heat eigenmode test datum)

Every generator adds ``bump_floor`` times its mean before normalizing to unit
mass, so generated densities are strictly positive.
"""

import logging
import math
from typing import Optional

import numpy as np

from config import get_settings
from models import DensityField
from services.manifold import ManifoldGrid

logger = logging.getLogger(__name__)

RANDOM_MAX_MODE = 3
# support 1/4 plus a shift of 1/4 keeps every transported pair within half a period
BUMP_HALF_WIDTH = 0.125


def _bump(grid: ManifoldGrid, center: float, half_width: Optional[float] = None) -> np.ndarray:
    if grid.is_sphere:
        if half_width is not None:
            raise ValueError("bump width only applies to flat grids")
        pole = np.array([math.sin(center * math.pi), 0.0, math.cos(center * math.pi)])
        return ((1.0 + grid.embedding() @ pole) ** 4).reshape(grid.shape)
    w = BUMP_HALF_WIDTH if half_width is None else half_width
    if not 0.0 < w <= 0.5:
        raise ValueError(f"bump half-width must lie in (0, 0.5], got {w}")
    out = np.ones(grid.shape)
    for coord in grid.coordinates:
        u = ((coord - center) / grid.length + 0.5) % 1.0 - 0.5
        out = out * np.where(np.abs(u) < w, (1.0 + np.cos(math.pi * u / w)) ** 2, 0.0)
    return out


def _random(grid: ManifoldGrid, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if grid.is_sphere:
        xyz = grid.embedding()
        basis = [xyz[:, 0], xyz[:, 1], xyz[:, 2], xyz[:, 0] * xyz[:, 1], xyz[:, 1] * xyz[:, 2],
                 xyz[:, 0] * xyz[:, 2], xyz[:, 2] ** 2 - 1.0 / 3.0]
        basis = [b.reshape(grid.shape) for b in basis]
    else:
        basis = []
        for coord in grid.coordinates:
            for k in range(1, RANDOM_MAX_MODE + 1):
                arg = 2.0 * math.pi * k * coord / grid.length
                basis.extend([np.cos(arg), np.sin(arg)])
    coeffs = rng.standard_normal(len(basis))
    perturbation = sum(c * b for c, b in zip(coeffs, basis))
    peak = float(np.max(np.abs(perturbation)))
    return 1.0 + 0.5 * perturbation / peak if peak > 0 else np.ones(grid.shape)


def _mode(grid: ManifoldGrid, k: int) -> np.ndarray:
    if grid.is_sphere:
        raise ValueError("mode:<k> is only defined on flat grids")
    return 1.0 + 0.1 * np.cos(2.0 * math.pi * k * grid.coordinates[0] / grid.length)


def normalize(grid: ManifoldGrid, values: np.ndarray) -> DensityField:
    """Rescale positive values to unit mass under the grid quadrature"""
    return DensityField(values=values / grid.integrate(values), grid=grid)


def make_density(grid: ManifoldGrid, text: str, floor: Optional[float] = None) -> DensityField:
    """
    Build a density from its generator name

    Args:
        grid: Grid the density lives on
        text: Generator string such as ``bump:0.25``
        floor: Positivity floor relative to the mean (defaults to Settings.bump_floor)

    Returns:
        Unit-mass, strictly positive density
    """
    floor = get_settings().bump_floor if floor is None else floor
    name, _, arg = text.strip().partition(":")
    try:
        if name == "uniform":
            return normalize(grid, np.ones(grid.shape))
        if name == "bump":
            parts = [float(p) for p in arg.split(",")]
            if len(parts) > 2:
                raise ValueError("expected bump:<center>[,<half-width>]")
            raw = _bump(grid, *parts)
        elif name == "two-bump":
            c1, c2 = (float(c) for c in arg.split(","))
            raw = 0.5 * (_bump(grid, c1) + _bump(grid, c2))
        elif name == "random":
            raw = _random(grid, int(arg))
        elif name == "mode":
            return normalize(grid, _mode(grid, int(arg)))
        else:
            raise ValueError(f"unknown density generator {name!r}")
    except (TypeError, ValueError) as e:
        raise ValueError(f"invalid density generator {text!r}: {e}") from e
    raw = raw / np.mean(raw)
    return normalize(grid, raw + floor)


def band_limited_field(grid: ManifoldGrid, rng: np.random.Generator) -> np.ndarray:
    """
    Smooth random scalar field

    Flat grids use Fourier modes strictly below N/4 per axis so that products
    of derivatives stay resolved; the sphere uses polynomials of degree <= 3
    in the embedding coordinates.
    """
    if grid.is_sphere:
        x, y, z = grid.embedding().T
        monomials = [x, y, z, x * y, y * z, x * z, x * x - y * y, z * z, x * y * z, z ** 3, x ** 3, y ** 3]
        coeffs = rng.standard_normal(len(monomials))
        return sum(c * mono for c, mono in zip(coeffs, monomials)).reshape(grid.shape)
    out = np.zeros(grid.shape)
    max_modes = [max(1, n // 4 - 1) for n in grid.shape]
    for _ in range(4):
        phase = rng.uniform(0.0, 2.0 * math.pi)
        arg = phase
        for coord, kmax in zip(grid.coordinates, max_modes):
            k = int(rng.integers(-kmax, kmax + 1))
            arg = arg + 2.0 * math.pi * k * coord / grid.length
        out += rng.standard_normal() * np.cos(arg)
    return out
