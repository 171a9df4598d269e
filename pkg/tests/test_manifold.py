"""
Tests for the discretized manifolds and their differential operators
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from controllers import get_checks_controller
from controllers.setup import build_setup
from models import ManifoldKind, ManifoldSpec, RunConfig, Subcommand
from services.errors import GridError
from services.manifold import build_grid
from utils.densities import band_limited_field


class TestManifoldSpec:
    def test_parse_square_torus(self):
        spec = ManifoldSpec.parse("torus2:16")
        assert spec.kind == ManifoldKind.torus2
        assert spec.resolution == [16, 16]

    def test_parse_sphere_doubles_longitudes(self):
        assert ManifoldSpec.parse("sphere2:12").resolution == [12, 24]

    def test_parse_length_suffix(self):
        spec = ManifoldSpec.parse("circle:32@2.5")
        assert spec.length == 2.5

    def test_resolution_too_small(self):
        with pytest.raises(ValidationError):
            ManifoldSpec(kind="circle", resolution=[4])

    def test_sphere_rejects_radius(self):
        with pytest.raises(ValidationError):
            ManifoldSpec(kind="sphere2", resolution=[12, 24], length=2.0)

    def test_axis_count_must_match_kind(self):
        with pytest.raises(ValidationError):
            ManifoldSpec(kind="torus2", resolution=[16])


class TestQuadrature:
    def test_circle_weights_sum_to_length(self, circle64):
        assert circle64.vol_weights.sum() == pytest.approx(1.0, rel=1e-12)

    def test_torus_weights_sum_to_area(self, torus32):
        assert torus32.vol_weights.sum() == pytest.approx(1.0, rel=1e-12)

    def test_sphere_weights_sum_to_area(self):
        grid = build_grid(ManifoldSpec.parse("sphere2:48x96"))
        assert grid.vol_weights.sum() == pytest.approx(4.0 * math.pi, abs=1e-10)
        assert np.all(grid.vol_weights > 0.0)

    def test_integrate_zero_mean_mode(self, circle64):
        x = circle64.coordinates[0]
        assert abs(circle64.integrate(np.cos(2.0 * math.pi * x))) <= 1e-14

    def test_integrate_constant_on_sphere(self, sphere12):
        assert sphere12.integrate(np.ones(sphere12.shape)) == pytest.approx(4.0 * math.pi, abs=1e-10)

    def test_curvature_bounds(self, circle32, torus16, sphere12):
        assert circle32.ricci_lambda == 0.0
        assert torus16.ricci_lambda == 0.0
        assert sphere12.ricci_lambda == 1.0


class TestOperators:
    def test_gradient_of_cosine(self, circle64):
        x = circle64.coordinates[0]
        grad = circle64.gradient(np.cos(2.0 * math.pi * x))
        np.testing.assert_allclose(grad[0], -2.0 * math.pi * np.sin(2.0 * math.pi * x), atol=1e-10)

    def test_laplacian_of_cosine(self, circle64):
        x = circle64.coordinates[0]
        lap = circle64.laplacian(np.cos(2.0 * math.pi * x))
        np.testing.assert_allclose(lap, -4.0 * math.pi ** 2 * np.cos(2.0 * math.pi * x), atol=1e-10)

    def test_divergence_of_zero_field(self, torus16):
        assert np.all(torus16.divergence(np.zeros((2,) + torus16.shape)) == 0.0)

    @pytest.mark.parametrize("fixture", ["circle64", "torus16"])
    def test_laplacian_of_constant_flat(self, fixture, request):
        grid = request.getfixturevalue(fixture)
        assert np.max(np.abs(grid.laplacian(np.ones(grid.shape)))) <= 1e-12

    def test_laplacian_of_constant_sphere(self, sphere12):
        assert np.max(np.abs(sphere12.laplacian(np.ones(sphere12.shape)))) <= 1e-9

    @pytest.mark.parametrize("fixture", ["circle64", "torus16", "sphere12"])
    def test_divergence_is_negative_adjoint(self, fixture, request):
        grid = request.getfixturevalue(fixture)
        rng = np.random.default_rng(3)
        f = rng.standard_normal(grid.shape)
        X = rng.standard_normal((grid.dim,) + grid.shape)
        lhs = grid.integrate(grid.inner(grid.gradient(f), X))
        rhs = -grid.integrate(f * grid.divergence(X))
        scale = math.sqrt(grid.integrate(f * f) * grid.integrate(grid.inner(X, X)))
        assert abs(lhs - rhs) <= 1e-10 * scale

    def test_shape_mismatch_raises(self, circle32):
        with pytest.raises(GridError):
            circle32.gradient(np.ones(31))

    def test_alternating_mode_is_in_gradient_kernel(self, circle32):
        assert len(circle32.null_modes) == 2
        assert np.max(np.abs(circle32.gradient(circle32.null_modes[1]))) <= 1e-12


class TestCurvatureTerms:
    def test_hessian_of_cosine_on_circle(self, circle64):
        x = circle64.coordinates[0]
        h = circle64.hessian_norm_sq(np.cos(2.0 * math.pi * x))
        np.testing.assert_allclose(h, 16.0 * math.pi ** 4 * np.cos(2.0 * math.pi * x) ** 2, rtol=1e-10, atol=1e-8)

    def test_hessian_of_constant(self, torus16):
        assert np.max(torus16.hessian_norm_sq(np.full(torus16.shape, 3.0))) <= 1e-20

    def test_hessian_product_mode_on_torus(self, torus32):
        x, y = torus32.coordinates
        a = 4.0 * math.pi ** 2
        cx, cy = np.cos(2.0 * math.pi * x), np.cos(2.0 * math.pi * y)
        sx, sy = np.sin(2.0 * math.pi * x), np.sin(2.0 * math.pi * y)
        expected = 2.0 * a ** 2 * (cx * cy) ** 2 + 2.0 * a ** 2 * (sx * sy) ** 2
        np.testing.assert_allclose(torus32.hessian_norm_sq(cx * cy), expected, rtol=1e-9, atol=1e-6)

    def test_ricci_vanishes_on_torus(self, torus16):
        X = np.random.default_rng(0).standard_normal((2,) + torus16.shape)
        assert np.all(torus16.ricci_quadratic(X) == 0.0)

    def test_ricci_of_unit_vectors_on_sphere(self, sphere12):
        theta = sphere12.coordinates[0]
        e_theta = np.stack([np.ones(sphere12.shape), np.zeros(sphere12.shape)])
        e_phi = np.stack([np.zeros(sphere12.shape), 1.0 / np.sin(theta)])
        np.testing.assert_allclose(sphere12.ricci_quadratic(e_theta), 1.0, atol=1e-12)
        np.testing.assert_allclose(sphere12.ricci_quadratic(e_phi), 1.0, atol=1e-12)

    @pytest.mark.parametrize("axis", [0, 2])
    def test_sphere_hessian_of_first_harmonic(self, sphere48, axis):
        # first harmonics satisfy Hess f = -f g, so |Hess f|^2 = 2 f^2 once the Christoffel terms enter
        f = sphere48.embedding()[:, axis].reshape(sphere48.shape)
        band = np.abs(np.cos(sphere48.coordinates[0])) <= math.sqrt(0.5)
        error = np.abs(sphere48.hessian_norm_sq(f) - 2.0 * f ** 2)
        assert np.max(error[band]) <= 5e-2

    def test_sphere_hessian_mixed_component(self, sphere48):
        x = sphere48.embedding()[:, 0].reshape(sphere48.shape)
        h = sphere48.hessian_components(x)
        theta = sphere48.coordinates[0]
        band = np.abs(np.cos(theta)) <= math.sqrt(0.5)
        assert np.max(np.abs(h[0][1])[band]) <= 5e-2
        np.testing.assert_allclose(h[1][1][band], -(np.sin(theta) ** 2 * x)[band], atol=5e-2)

    @pytest.mark.slow
    def test_sphere_bochner_and_trace(self):
        setup = build_setup(RunConfig(command=Subcommand.bochner_check, manifold="sphere2:12x24"))
        reports = get_checks_controller().bochner_reports(setup)
        assert any(r.name.startswith("bochner") for r in reports)
        assert all(r.passed for r in reports)

    def test_bochner_residual_cosine(self, circle64):
        x = circle64.coordinates[0]
        assert np.max(np.abs(circle64.bochner_residual(np.cos(2.0 * math.pi * x)))) <= 1e-8

    def test_bochner_residual_band_limited_torus(self, torus32):
        f = band_limited_field(torus32, np.random.default_rng(7))
        assert np.max(np.abs(torus32.bochner_residual(f))) <= 1e-6 * max(1.0, np.max(torus32.hessian_norm_sq(f)))

    def test_trace_inequality_band_limited(self, torus32):
        rng = np.random.default_rng(11)
        for _ in range(20):
            f = band_limited_field(torus32, rng)
            bound = 2.0 * torus32.hessian_norm_sq(f)
            excess = torus32.laplacian(f) ** 2 - bound
            assert np.max(excess) <= 1e-10 * max(1.0, np.max(bound))


class TestSpectralData:
    def test_heat_propagate_decays_eigenmode(self, circle64):
        x = circle64.coordinates[0]
        out = circle64.heat_propagate(np.cos(2.0 * math.pi * x), 0.01)
        np.testing.assert_allclose(out, math.exp(-4.0 * math.pi ** 2 * 0.01) * np.cos(2.0 * math.pi * x), atol=1e-12)

    def test_heat_propagate_preserves_mass_on_sphere(self, sphere12):
        f = 1.0 + sphere12.embedding()[:, 2].reshape(sphere12.shape)
        out = sphere12.heat_propagate(f, 0.05)
        assert sphere12.integrate(out) == pytest.approx(sphere12.integrate(f), rel=1e-10)

    def test_circle_distance(self, circle32):
        assert circle32.distance_matrix()[0, 8] == pytest.approx(0.25)
        assert circle32.distance_matrix()[0, 24] == pytest.approx(0.25)

    def test_sphere_distance_is_great_circle(self, sphere12):
        d = sphere12.distance_matrix()
        assert np.max(d) <= math.pi + 1e-12
        np.testing.assert_allclose(np.diag(d), 0.0, atol=1e-7)

    def test_translate_requires_flat_grid(self, sphere12):
        with pytest.raises(GridError):
            sphere12.translate(np.ones(sphere12.shape), (1, 0))
