"""
Shared fixtures: desk-scale grids, entropy models and standard densities
"""

import math

import numpy as np
import pytest

from config import get_settings
from models import DensityField, ManifoldSpec
from services.entropy import make_entropy
from services.evi import FlowCheckContext
from services.manifold import build_grid
from utils.densities import make_density


@pytest.fixture(autouse=True)
def _fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(scope="session")
def circle32():
    return build_grid(ManifoldSpec.parse("circle:32"))


@pytest.fixture(scope="session")
def circle64():
    return build_grid(ManifoldSpec.parse("circle:64"))


@pytest.fixture(scope="session")
def torus16():
    return build_grid(ManifoldSpec.parse("torus2:16"))


@pytest.fixture(scope="session")
def torus32():
    return build_grid(ManifoldSpec.parse("torus2:32"))


@pytest.fixture(scope="session")
def sphere12():
    return build_grid(ManifoldSpec.parse("sphere2:12x24"))


@pytest.fixture(scope="session")
def sphere48():
    return build_grid(ManifoldSpec.parse("sphere2:48x96"))


@pytest.fixture(scope="session")
def log_model():
    return make_entropy("log")


@pytest.fixture(scope="session")
def porous_model():
    return make_entropy("power:m=2")


@pytest.fixture
def heat_ctx(circle32, log_model):
    return FlowCheckContext.build(circle32, log_model)


@pytest.fixture
def cosine_density():
    """Factory for (1 + a cos(2 pi k x)) normalized to unit mass"""
    def build(grid, amplitude: float, k: int = 1) -> DensityField:
        values = 1.0 + amplitude * np.cos(2.0 * math.pi * k * grid.coordinates[0] / grid.length)
        return DensityField(values=values / grid.integrate(values), grid=grid)
    return build


@pytest.fixture
def bumps32(circle32):
    return make_density(circle32, "bump:0"), make_density(circle32, "bump:0.25")


@pytest.fixture
def wide_bumps32(circle32):
    """Full-support bumps; fractional Fourier shifts of them stay positive"""
    return make_density(circle32, "bump:0,0.5"), make_density(circle32, "bump:0.25,0.5")
