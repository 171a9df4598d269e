"""
Tests for the entropy families and the McCann conditions
"""

import math

import numpy as np
import pytest

from models import EntropyKind, ManifoldSpec
from services.entropy import (
    check_mccann,
    entropy_lower_bound,
    evaluate,
    make_entropy,
    mccann_valid,
)
from services.errors import EntropyModelError
from services.manifold import build_grid
from utils.densities import make_density

SAMPLES = np.array([0.1, 0.5, 1.0, 2.0, 10.0])


class TestMakeEntropy:
    def test_log_pressure(self):
        model = make_entropy("log")
        assert model.kind == EntropyKind.log
        assert float(model.U(2.0)) == 2.0

    def test_power_two(self):
        model = make_entropy("power:m=2")
        assert float(model.e(3.0)) == pytest.approx(9.0)
        assert float(model.U(3.0)) == pytest.approx(9.0)

    @pytest.mark.parametrize("text", ["power:m=1", "power:m=0", "power:m=-1", "power", "entropy"])
    def test_invalid_models(self, text):
        with pytest.raises(EntropyModelError):
            make_entropy(text)

    @pytest.mark.parametrize("text", ["log", "power:m=2", "power:m=0.5", "power:m=3.5"])
    def test_pressure_identity(self, text):
        model = make_entropy(text)
        expected = SAMPLES * model.de(SAMPLES) - (model.e(SAMPLES) - model.e_at_zero_limit)
        np.testing.assert_allclose(model.U(SAMPLES), expected, rtol=1e-12, atol=1e-12)

    def test_pressure_defect_vanishes_for_log(self):
        assert np.all(make_entropy("log").pressure_defect(SAMPLES) == 0.0)

    def test_superlinear_metadata(self):
        assert make_entropy("log").e_prime_at_infinity == math.inf
        assert make_entropy("power:m=0.5").e_prime_at_infinity == 0.0


class TestMcCann:
    def test_log_any_dimension(self):
        assert check_mccann(make_entropy("log"), 3).passed

    def test_porous_medium_dimension_two(self):
        assert check_mccann(make_entropy("power:m=2"), 2).passed

    def test_threshold_exponent_passes(self):
        assert check_mccann(make_entropy("power:m=0.5"), 2).passed

    def test_below_threshold_fails(self):
        report = check_mccann(make_entropy("power:m=0.4"), 2)
        assert not report.passed
        assert report.name == "mccann[power:m=0.4,n=2]"
        assert report.measured["worst_mccann_margin"] == pytest.approx(-0.1)
        assert any("violated" in note for note in report.notes)

    def test_dimension_one_is_flagged(self):
        report = check_mccann(make_entropy("log"), 1)
        assert report.passed
        assert any("dimension 1" in note for note in report.notes)

    def test_invalid_dimension(self):
        with pytest.raises(EntropyModelError):
            check_mccann(make_entropy("log"), 0)

    def test_mccann_valid_helper(self):
        assert mccann_valid(make_entropy("power:m=2"), 2)
        assert not mccann_valid(make_entropy("power:m=0.4"), 2)
        assert not mccann_valid(make_entropy("log"), None)


class TestEvaluate:
    def test_log_uniform_is_zero(self, circle64, log_model):
        assert evaluate(log_model, circle64, np.ones(circle64.shape)) == pytest.approx(0.0, abs=1e-15)

    def test_power_uniform(self, circle64, porous_model):
        assert evaluate(porous_model, circle64, np.ones(circle64.shape)) == pytest.approx(1.0)

    def test_matches_fine_quadrature(self, log_model):
        coarse = build_grid(ManifoldSpec.parse("circle:128"))
        fine = build_grid(ManifoldSpec.parse("circle:4096"))

        def value(grid):
            return evaluate(log_model, grid, 1.0 + 0.5 * np.cos(2.0 * math.pi * grid.coordinates[0]))

        assert value(coarse) == pytest.approx(value(fine), abs=1e-9)

    def test_nonpositive_density_raises(self, circle32, log_model):
        values = np.ones(circle32.shape)
        values[3] = 0.0
        with pytest.raises(EntropyModelError):
            evaluate(log_model, circle32, values)

    def test_translation_invariance(self, torus16, porous_model):
        rho = make_density(torus16, "random:4")
        shifted = torus16.translate(rho.values, (3, 5))
        assert evaluate(porous_model, torus16, shifted) == pytest.approx(
            evaluate(porous_model, torus16, rho), abs=1e-12
        )

    @pytest.mark.parametrize("generator", ["bump:0.3", "random:1", "two-bump:0.1,0.6"])
    def test_jensen_floor(self, circle32, log_model, porous_model, generator):
        rho = make_density(circle32, generator)
        for model in (log_model, porous_model):
            assert evaluate(model, circle32, rho) >= entropy_lower_bound(model, circle32.volume) - 1e-12
