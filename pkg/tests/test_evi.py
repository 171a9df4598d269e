"""
Tests for the verification harness
"""

import math

import numpy as np
import pytest

from models import CheckKind, CheckReport, DiffusionParams
from services.errors import CheckInputError
from services.evi import (
    FlowCheckContext,
    _conservative_inequality,
    action_identity,
    check_bochner,
    check_contraction,
    check_displacement_convexity,
    check_dissipation_rate,
    check_dissipation_sign,
    check_evi_differential,
    check_evi_integral,
    check_hessian_trace,
    check_lambda_action_inequality,
    check_monotonicity_lemma,
    check_regularization,
    check_semigroup,
    check_uniform_continuity,
    dini_estimate,
    dini_upper,
    dissipation_sign_applies,
    e_lambda,
    sinh_ratio,
)
from services.entropy import make_entropy
from services.transport import mixture_path, translation_path
from utils.densities import band_limited_field, make_density


class TestScalarHelpers:
    def test_e_lambda_flat(self):
        assert e_lambda(0.0, 0.7) == 0.7

    def test_e_lambda_positive(self):
        assert e_lambda(1.0, 1.0) == pytest.approx(math.e - 1.0, rel=1e-14)

    def test_e_lambda_continuous_at_zero(self):
        assert e_lambda(1e-9, 0.7) == pytest.approx(0.7, abs=1e-9)
        assert e_lambda(-1e-9, 0.7) == pytest.approx(0.7, abs=1e-9)

    def test_sinh_ratio(self):
        assert sinh_ratio(0.0) == 1.0
        assert sinh_ratio(1.0) == pytest.approx(1.0 / math.sinh(1.0), rel=1e-14)
        assert sinh_ratio(-2.0) == sinh_ratio(2.0)

    @pytest.mark.parametrize("x", [0.5, -0.5, 1.0, -1.0])
    def test_contraction_constant_identity(self, x):
        assert e_lambda(-2.0 * x, 1.0) == pytest.approx(1.0 / (math.exp(x) * sinh_ratio(x)), rel=1e-12)

    def test_dini_of_square(self):
        samples = {t: t * t for t in (1.0, 1.001, 1.01)}
        estimate = dini_estimate(samples, 1.0)
        assert estimate.value == pytest.approx(2.01)
        assert estimate.bias == pytest.approx(0.01, rel=1e-6)

    def test_dini_of_constant_and_kink(self):
        assert dini_upper({0.0: 3.0, 0.001: 3.0, 0.01: 3.0}, 0.0) == 0.0
        assert dini_upper({t: abs(t) for t in (0.0, 0.001, 0.01)}, 0.0) == pytest.approx(1.0)

    def test_dini_needs_two_forward_samples(self):
        with pytest.raises(CheckInputError):
            dini_estimate({0.0: 1.0, 0.01: 1.0}, 0.0)
        with pytest.raises(CheckInputError):
            dini_estimate({0.001: 1.0, 0.01: 1.0}, 0.0)

    def test_monotonicity(self):
        times = np.linspace(0.0, 1.0, 11)
        assert check_monotonicity_lemma({t: math.exp(-t) for t in times}).passed
        report = check_monotonicity_lemma({t: t for t in times})
        assert not report.passed
        assert report.measured["max_increment"] == pytest.approx(0.1)


class TestCheckReport:
    def test_inequality_within_tolerance(self):
        report = CheckReport.inequality("x", 1.0 + 1e-9, 1.0, 1e-8)
        assert report.passed
        assert report.slack == pytest.approx(-1e-9)

    def test_inequality_failure(self):
        assert not CheckReport.inequality("x", 2.0, 1.0, 1e-8).passed

    def test_identity(self):
        report = CheckReport.identity("x", 1.0, 1.5, 0.1)
        assert report.kind == CheckKind.identity
        assert report.slack == -0.5
        assert not report.passed
        assert report.summary_line().startswith("FAIL x")


class TestConservativeEstimator:
    def test_upper_side_takes_smaller_estimate(self, heat_ctx):
        estimates = [{"dynamic": 1.0, "oracle": 1.2}, {"dynamic": 2.0, "oracle": 1.8}]

        def build(w):
            return w[0], w[1], (w[0], w[1])

        report = _conservative_inequality(heat_ctx, "x", "ordering", estimates, build, {})
        assert (report.lhs, report.rhs) == (1.2, 1.8)
        assert report.measured["oracle_quantities"] == 2.0
        assert report.slack == pytest.approx(0.6)
        assert report.measured["slack_dynamic"] == pytest.approx(1.0)
        assert report.measured["slack_oracle"] == pytest.approx(0.6)

    def test_mixed_choice_can_fail_where_pure_choices_pass(self, heat_ctx):
        estimates = [{"dynamic": 1.0, "oracle": 1.5}, {"dynamic": 1.2, "oracle": 1.6}]

        def build(w):
            return w[0], w[1], ()

        report = _conservative_inequality(heat_ctx, "x", "ordering", estimates, build, {})
        assert report.measured["slack_dynamic"] > 0.0
        assert report.measured["slack_oracle"] > 0.0
        assert (report.lhs, report.rhs) == (1.5, 1.2)
        assert not report.passed

    def test_grouped_samples_share_an_estimator(self, heat_ctx):
        estimates = [{"dynamic": 1.0, "oracle": 1.5}, {"dynamic": 1.2, "oracle": 1.6}]

        def build(w):
            return w[0], w[1], ()

        report = _conservative_inequality(heat_ctx, "x", "ordering", estimates, build, {}, groups=[0, 0])
        assert report.passed
        assert report.slack == pytest.approx(0.1)


class TestFlowInequalities:
    def test_evi_integral_self_reference(self, heat_ctx, bumps32):
        mu0, _ = bumps32
        report = check_evi_integral(heat_ctx, mu0, mu0, 0.0, 0.01)
        assert report.passed
        assert report.name == "evi_integral[t0=0,t1=0.01]"
        assert "slack_dynamic" in report.measured
        assert "slack_oracle" in report.measured

    def test_evi_integral_translated_reference(self, heat_ctx, bumps32):
        report = check_evi_integral(heat_ctx, *bumps32, 0.0, 0.01)
        assert report.passed
        assert report.slack == report.measured["slack_conservative"]
        assert report.slack <= min(report.measured["slack_dynamic"], report.measured["slack_oracle"])

    def test_evi_integral_rejects_reversed_interval(self, heat_ctx, bumps32):
        with pytest.raises(CheckInputError):
            check_evi_integral(heat_ctx, *bumps32, 0.01, 0.0)

    def test_evi_differential(self, heat_ctx, bumps32):
        report = check_evi_differential(heat_ctx, *bumps32, 0.01)
        assert report.passed
        assert report.measured["dini_h1"] == pytest.approx(1e-2)
        assert report.measured["proxy_bias"] >= 0.0

    def test_contraction_of_identical_measures(self, heat_ctx, bumps32):
        mu0, _ = bumps32
        report = check_contraction(heat_ctx, mu0, mu0, 0.005)
        assert report.passed
        assert report.lhs == 0.0

    def test_regularization(self, heat_ctx, bumps32):
        mu0, mu1 = bumps32
        assert check_regularization(heat_ctx, mu0, mu0, 0.01).passed
        assert check_regularization(heat_ctx, mu0, mu1, 0.01).passed
        with pytest.raises(CheckInputError):
            check_regularization(heat_ctx, mu0, mu1, 0.0)

    def test_uniform_continuity(self, heat_ctx, bumps32):
        mu0, _ = bumps32
        assert check_uniform_continuity(heat_ctx, mu0, 0.005, 0.005).passed
        assert check_uniform_continuity(heat_ctx, mu0, 0.0, 0.01).passed

    def test_lambda_override_is_noted(self, circle32, log_model, bumps32):
        ctx = FlowCheckContext.build(circle32, log_model, lambda_override=0.5)
        report = check_contraction(ctx, bumps32[0], bumps32[0], 0.005)
        assert any("lambda overridden" in note for note in report.notes)

    def test_inputs_digest_is_deterministic(self, heat_ctx, bumps32):
        mu0, _ = bumps32
        first = check_regularization(heat_ctx, mu0, mu0, 0.01)
        second = check_regularization(heat_ctx, mu0, mu0, 0.01)
        assert first.inputs_digest
        assert first.inputs_digest == second.inputs_digest


class TestDisplacementConvexity:
    def test_constant_path(self, heat_ctx, bumps32):
        mu0, _ = bumps32
        report = check_displacement_convexity(heat_ctx, mu0, mu0, [0.25, 0.5, 0.75])
        assert report.passed
        assert abs(report.slack) <= 1e-12

    def test_translated_bumps(self, heat_ctx, bumps32):
        report = check_displacement_convexity(heat_ctx, *bumps32, [0.25, 0.5, 0.75])
        assert report.passed
        assert report.measured["worst_s"] in (0.25, 0.5, 0.75)


class TestActionIdentity:
    def test_constant_path_is_trivial(self, circle32, log_model):
        uniform = make_density(circle32, "uniform")
        ctx = FlowCheckContext.build(circle32, log_model)
        report = action_identity(ctx, mixture_path(circle32, uniform, uniform), 0.005, 0.5)
        assert report.passed
        assert report.lhs == 0.0
        assert report.rhs == 0.0

    def test_heat_flow_on_mixture_path(self, circle64, log_model):
        ctx = FlowCheckContext.build(circle64, log_model)
        mu0, mu1 = make_density(circle64, "random:1"), make_density(circle64, "random:2")
        path = mixture_path(circle64, mu0, mu1)
        report = action_identity(ctx, path, 0.005, 0.5)
        assert report.passed
        assert report.measured["pressure_term"] == 0.0
        assert report.measured["dissipation"] <= 1e-9
        assert report.passed == (abs(report.lhs - report.rhs) <= report.tolerance)
        assert "dissipation_sign_ok" not in report.measured

    def test_dissipation_sign(self, circle64, log_model):
        ctx = FlowCheckContext.build(circle64, log_model)
        path = mixture_path(circle64, make_density(circle64, "random:1"), make_density(circle64, "random:2"))
        report = check_dissipation_sign(ctx, path, 0.005, 0.5)
        assert report.kind == CheckKind.inequality
        assert report.passed
        assert report.lhs <= 1e-9
        assert report.rhs == 0.0

    def test_dissipation_sign_needs_nonnegative_curvature(self, circle32, log_model, bumps32):
        ctx = FlowCheckContext.build(circle32, log_model, lambda_override=-1.0)
        assert not dissipation_sign_applies(ctx)
        with pytest.raises(CheckInputError):
            check_dissipation_sign(ctx, mixture_path(circle32, *bumps32), 0.005, 0.5)

    def test_dissipation_sign_needs_mccann(self, circle32, bumps32):
        ctx = FlowCheckContext.build(circle32, make_entropy("power:m=0.4"))
        assert not dissipation_sign_applies(ctx)

    def test_lambda_action_inequality(self, circle64, log_model):
        ctx = FlowCheckContext.build(circle64, log_model)
        path = mixture_path(circle64, make_density(circle64, "random:1"), make_density(circle64, "random:2"))
        assert check_lambda_action_inequality(ctx, path, 0.005, 0.5).passed

    def test_lambda_action_needs_heat_flow(self, circle32, porous_model, bumps32):
        ctx = FlowCheckContext.build(circle32, porous_model)
        with pytest.raises(CheckInputError):
            check_lambda_action_inequality(ctx, mixture_path(circle32, *bumps32), 0.005, 0.5)

    def test_drift_paths_rejected(self, heat_ctx, circle32, wide_bumps32):
        path = translation_path(circle32, wide_bumps32[0], [0.25])
        with pytest.raises(CheckInputError):
            check_lambda_action_inequality(heat_ctx, path, 0.005, 0.5)


class TestSupplementaryChecks:
    def test_dissipation_rate_heat(self, heat_ctx, circle32):
        report = check_dissipation_rate(heat_ctx, make_density(circle32, "random:1"), 0.01)
        assert report.passed
        assert report.measured["entropy_production"] > 0.0
        assert report.measured["time_step_bias"] == 0.0

    def test_semigroup_heat(self, heat_ctx, circle32):
        report = check_semigroup(heat_ctx, make_density(circle32, "random:1"), 0.01, 0.02)
        assert report.passed

    def test_bochner_on_torus(self, torus16):
        f = band_limited_field(torus16, np.random.default_rng(0))
        report = check_bochner(torus16, f)
        assert report.passed
        assert report.kind == CheckKind.identity

    def test_hessian_trace_on_torus(self, torus16):
        f = band_limited_field(torus16, np.random.default_rng(1))
        assert check_hessian_trace(torus16, f).passed

    def test_trace_bound_is_sharp(self, torus16):
        x, y = torus16.coordinates
        f = np.cos(2.0 * math.pi * x) + np.cos(2.0 * math.pi * y)
        # (lap f)^2 <= 2 |Hess f|^2 is sharp here, so a factor 1 bound must fail
        bound = torus16.hessian_norm_sq(f)
        assert np.max(torus16.laplacian(f) ** 2 - bound) > 1.0


@pytest.mark.slow
class TestSphereHeatFlow:
    """Heat flow on the unit sphere is a 1-flow"""

    @pytest.fixture(scope="class")
    def sphere_case(self, sphere12, log_model):
        ctx = FlowCheckContext.build(sphere12, log_model)
        return ctx, make_density(sphere12, "bump:0.2"), make_density(sphere12, "bump:0.6")

    def test_curvature_parameter(self, sphere_case):
        ctx, _, _ = sphere_case
        assert ctx.lam == 1.0

    def test_evi_differential(self, sphere_case):
        ctx, mu0, nu = sphere_case
        report = check_evi_differential(ctx, mu0, nu, 0.01)
        assert report.passed
        assert report.measured["lambda"] == 1.0

    def test_contraction(self, sphere_case):
        ctx, mu0, nu = sphere_case
        report = check_contraction(ctx, mu0, nu, 0.01)
        assert report.passed
        assert report.measured["contraction_factor"] == pytest.approx(math.exp(-0.01))

    def test_displacement_convexity(self, sphere_case):
        ctx, mu0, nu = sphere_case
        assert check_displacement_convexity(ctx, mu0, nu, [0.25, 0.5, 0.75]).passed

    def test_lambda_action_inequality(self, sphere_case):
        ctx, mu0, nu = sphere_case
        report = check_lambda_action_inequality(ctx, mixture_path(ctx.grid, mu0, nu), 0.005, 0.5)
        assert report.passed
        assert report.measured["lambda"] == 1.0


@pytest.mark.slow
class TestPorousMediumFlow:
    @pytest.fixture(scope="class")
    def porous_case(self, circle32, porous_model):
        ctx = FlowCheckContext.build(circle32, porous_model, diffusion_params=DiffusionParams(dt=2.5e-4))
        return ctx, make_density(circle32, "random:1"), make_density(circle32, "random:2")

    def test_evi_integral(self, porous_case):
        ctx, mu0, nu = porous_case
        report = check_evi_integral(ctx, mu0, nu, 0.0, 0.01)
        assert report.passed
        assert report.measured["lambda"] == 0.0

    def test_regularization(self, porous_case):
        ctx, mu0, nu = porous_case
        assert check_regularization(ctx, mu0, nu, 0.01).passed

    def test_uniform_continuity(self, porous_case):
        ctx, mu0, _ = porous_case
        assert check_uniform_continuity(ctx, mu0, 0.0, 0.01).passed


@pytest.mark.slow
class TestTorusConvexity:
    def test_displacement_convexity(self, torus16, log_model):
        ctx = FlowCheckContext.build(torus16, log_model)
        mu0, mu1 = make_density(torus16, "random:1"), make_density(torus16, "random:2")
        report = check_displacement_convexity(ctx, mu0, mu1, [0.25, 0.5, 0.75])
        assert report.passed
        assert report.measured["lambda"] == 0.0
