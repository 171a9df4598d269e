"""
Tests for the named density generators
"""

import numpy as np
import pytest

from models import DensityField
from services.errors import DensityError
from utils.densities import band_limited_field, make_density

FLAT_GENERATORS = ["uniform", "bump:0.25", "two-bump:0.1,0.6", "random:4", "mode:2"]
SPHERE_GENERATORS = ["uniform", "bump:0.25", "two-bump:0.1,0.6", "random:4"]


@pytest.mark.parametrize("generator", FLAT_GENERATORS)
def test_flat_densities_are_normalized(circle32, torus16, generator):
    for grid in (circle32, torus16):
        rho = make_density(grid, generator)
        assert rho.mass() == pytest.approx(1.0, abs=1e-12)
        assert rho.minimum() > 0.0


@pytest.mark.parametrize("generator", SPHERE_GENERATORS)
def test_sphere_densities_are_normalized(sphere12, generator):
    rho = make_density(sphere12, generator)
    assert rho.mass() == pytest.approx(1.0, abs=1e-12)
    assert rho.minimum() > 0.0


def test_bump_peaks_at_center(circle32):
    assert int(np.argmax(make_density(circle32, "bump:0.25").values)) == 8


def test_bump_is_compactly_supported(circle32):
    values = make_density(circle32, "bump:0").values
    # nodes at distance >= 1/8 from the center carry only the floor
    assert int(np.sum(values == values.min())) == 25


def test_wide_bump_vanishes_only_at_antipode(circle32):
    values = make_density(circle32, "bump:0,0.5").values
    assert int(np.argmin(values)) == 16
    assert int(np.sum(values == values.min())) == 1


def test_floor_bounds_minimum(circle32):
    loose = make_density(circle32, "bump:0", floor=1e-2)
    tight = make_density(circle32, "bump:0", floor=1e-4)
    assert tight.minimum() < loose.minimum()


def test_random_is_seeded(torus16):
    assert np.array_equal(make_density(torus16, "random:3").values, make_density(torus16, "random:3").values)
    assert not np.array_equal(make_density(torus16, "random:3").values, make_density(torus16, "random:4").values)


@pytest.mark.parametrize("text", ["blob:1", "bump:x", "two-bump:0.1", "random:", "bump:0,0", "bump:0,0.7", "bump:0,0.1,0.2"])
def test_invalid_generators(circle32, text):
    with pytest.raises(ValueError):
        make_density(circle32, text)


def test_mode_needs_flat_grid(sphere12):
    with pytest.raises(ValueError):
        make_density(sphere12, "mode:1")


def test_bump_width_needs_flat_grid(sphere12):
    with pytest.raises(ValueError):
        make_density(sphere12, "bump:0.2,0.1")


def test_band_limited_field_stays_below_quarter_band(torus32):
    f = band_limited_field(torus32, np.random.default_rng(5))
    spectrum = np.abs(np.fft.fft2(f))
    k = np.abs(np.fft.fftfreq(32, d=1.0 / 32))
    high = (k[:, None] >= 8) | (k[None, :] >= 8)
    assert np.max(spectrum[high]) <= 1e-9 * np.max(spectrum)


class TestDensityField:
    def test_unit_mass_accepted(self, circle32):
        rho = DensityField(values=np.ones(32), grid=circle32)
        assert rho.mass() == pytest.approx(1.0)

    def test_negative_values_rejected(self, circle32):
        values = np.ones(32)
        values[3] = -1.0
        values[4] = 3.0
        with pytest.raises(DensityError):
            DensityField(values=values, grid=circle32)

    def test_uniformly_negative_values_rejected(self, circle32):
        with pytest.raises(DensityError):
            DensityField(values=-3.0 * np.ones(32), grid=circle32)

    def test_unnormalized_values_rejected(self, circle32):
        with pytest.raises(DensityError):
            DensityField(values=2.0 * np.ones(32), grid=circle32)

    def test_mass_tolerance(self, circle32):
        DensityField(values=np.full(32, 1.0 + 1e-12), grid=circle32)
        with pytest.raises(DensityError):
            DensityField(values=np.full(32, 1.0 + 1e-8), grid=circle32)

    def test_non_finite_values_rejected(self, circle32):
        values = np.ones(32)
        values[0] = np.nan
        with pytest.raises(DensityError):
            DensityField(values=values, grid=circle32)

    def test_shape_must_match_grid(self, circle32, torus16):
        with pytest.raises(DensityError):
            DensityField(values=np.ones(16), grid=circle32)
        with pytest.raises(DensityError):
            DensityField(values=np.ones(256), grid=torus16)
