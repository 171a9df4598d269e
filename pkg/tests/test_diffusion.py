"""
Tests for the nonlinear diffusion stepper
"""

import math

import numpy as np
import pytest

from models import DiffusionParams, DiffusionScheme
from services.diffusion import (
    default_dt,
    evolve,
    flow,
    step,
    truncation_error,
    uses_exact_propagator,
)
from services.entropy import evaluate
from services.errors import DiffusionError
from utils.densities import make_density

IMPLICIT = DiffusionParams(scheme=DiffusionScheme.implicit)


def eigenmode_decay(grid, t: float) -> np.ndarray:
    x = grid.coordinates[0]
    return 1.0 + 0.1 * math.exp(-4.0 * math.pi ** 2 * t) * np.cos(2.0 * math.pi * x)


class TestStep:
    def test_heat_eigenmode(self, circle64, log_model, cosine_density):
        rho = step(circle64, log_model, cosine_density(circle64, 0.1), 1e-3)
        assert np.max(np.abs(rho.values - eigenmode_decay(circle64, 1e-3))) <= 1e-6

    @pytest.mark.parametrize("model_fixture", ["log_model", "porous_model"])
    def test_uniform_is_stationary(self, circle32, model_fixture, request):
        model = request.getfixturevalue(model_fixture)
        uniform = make_density(circle32, "uniform")
        assert np.array_equal(step(circle32, model, uniform, 1e-3, IMPLICIT).values, uniform.values)

    def test_porous_medium_mass_and_entropy(self, circle64, porous_model, cosine_density):
        rho0 = cosine_density(circle64, 0.2)
        rho1 = step(circle64, porous_model, rho0, 1e-3)
        assert rho1.mass() == pytest.approx(1.0, abs=1e-11)
        assert evaluate(porous_model, circle64, rho1) < evaluate(porous_model, circle64, rho0)
        assert rho1.minimum() > 0.0

    def test_implicit_heat_is_first_order(self, circle32, log_model, cosine_density):
        rho0 = cosine_density(circle32, 0.1)
        coarse = truncation_error(circle32, log_model, rho0, 2e-3, IMPLICIT)
        fine = truncation_error(circle32, log_model, rho0, 1e-3, IMPLICIT)
        assert coarse / fine == pytest.approx(4.0, rel=0.1)

    def test_implicit_heat_eigenmode(self, circle64, log_model, cosine_density):
        trajectory = evolve(circle64, log_model, cosine_density(circle64, 0.1), 0.01, dt=1e-3, params=IMPLICIT)
        x = circle64.coordinates[0]
        for k, state in enumerate(trajectory.states):
            # backward Euler damps the first mode by 1 / (1 + 4 pi^2 dt) per step
            amplitude = 0.1 * (1.0 + 4.0 * math.pi ** 2 * 1e-3) ** (-k)
            expected = 1.0 + amplitude * np.cos(2.0 * math.pi * x)
            assert np.max(np.abs(state.values - expected)) <= 1e-9

    def test_implicit_heat_approaches_exact_flow(self, circle32, log_model):
        rho0 = make_density(circle32, "random:1")
        exact = flow(circle32, log_model, rho0, 0.01)
        errors = [
            np.max(np.abs(flow(circle32, log_model, rho0, 0.01, dt=dt, params=IMPLICIT).values - exact.values))
            for dt in (2e-3, 1e-3)
        ]
        assert errors[1] > 0.0
        assert errors[0] / errors[1] == pytest.approx(2.0, rel=0.15)

    def test_input_is_not_modified(self, circle32, porous_model):
        rho = make_density(circle32, "bump:0.5")
        before = rho.values.copy()
        step(circle32, porous_model, rho, 1e-4)
        assert np.array_equal(rho.values, before)

    def test_nonpositive_step_rejected(self, circle32, log_model):
        with pytest.raises(DiffusionError):
            step(circle32, log_model, make_density(circle32, "bump:0"), 0.0)

    def test_exact_scheme_needs_heat_flow(self, porous_model):
        with pytest.raises(DiffusionError):
            uses_exact_propagator(porous_model, DiffusionParams(scheme=DiffusionScheme.exact))

    def test_auto_scheme_selection(self, log_model, porous_model):
        assert uses_exact_propagator(log_model, DiffusionParams())
        assert not uses_exact_propagator(porous_model, DiffusionParams())
        assert not uses_exact_propagator(log_model, IMPLICIT)


class TestEvolve:
    def test_eigenmode_trajectory(self, circle64, log_model, cosine_density):
        trajectory = evolve(circle64, log_model, cosine_density(circle64, 0.1), 0.01, dt=1e-3)
        assert trajectory.times[0] == 0.0
        assert trajectory.times[-1] == pytest.approx(0.01)
        for t, state in zip(trajectory.times, trajectory.states):
            assert np.max(np.abs(state.values - eigenmode_decay(circle64, t))) <= 1e-6

    def test_porous_medium_invariants(self, circle32, porous_model):
        params = DiffusionParams(save_every=2)
        trajectory = evolve(circle32, porous_model, make_density(circle32, "random:1"), 0.01, dt=1e-3, params=params)
        assert len(trajectory.states) == 6
        masses = np.array([s.mass() for s in trajectory.states])
        assert np.max(np.abs(masses - 1.0)) <= 1e-10
        assert min(s.minimum() for s in trajectory.states) > 0.0
        assert np.max(np.diff(trajectory.entropies)) <= 1e-10

    def test_last_step_lands_on_final_time(self, circle32, porous_model):
        trajectory = evolve(circle32, porous_model, make_density(circle32, "random:2"), 0.0025, dt=1e-3)
        np.testing.assert_allclose(trajectory.times, [0.0, 1e-3, 2e-3, 2.5e-3])

    def test_semigroup_composition(self, circle32, porous_model):
        rho0 = make_density(circle32, "two-bump:0.1,0.6")
        direct = flow(circle32, porous_model, rho0, 0.02, dt=1e-3)
        composed = flow(circle32, porous_model, flow(circle32, porous_model, rho0, 0.01, dt=1e-3), 0.01, dt=1e-3)
        truncation = truncation_error(circle32, porous_model, rho0, 1e-3)
        assert np.max(np.abs(direct.values - composed.values)) <= 5.0 * truncation

    def test_heat_converges_to_uniform(self, circle64, log_model):
        final = flow(circle64, log_model, make_density(circle64, "bump:0.3"), 2.0)
        assert np.max(np.abs(final.values - 1.0)) <= 1e-6

    def test_heat_on_sphere_preserves_mass(self, sphere12, log_model):
        trajectory = evolve(sphere12, log_model, make_density(sphere12, "bump:0.2"), 0.05, dt=1e-2)
        assert abs(trajectory.final.mass() - 1.0) <= 1e-10
        assert np.max(np.diff(trajectory.entropies)) <= 1e-10

    def test_zero_time_returns_initial_state(self, circle32, porous_model):
        rho0 = make_density(circle32, "bump:0")
        assert flow(circle32, porous_model, rho0, 0.0) is rho0
        assert len(evolve(circle32, porous_model, rho0, 0.0).states) == 1

    def test_negative_time_rejected(self, circle32, log_model):
        with pytest.raises(DiffusionError):
            evolve(circle32, log_model, make_density(circle32, "bump:0"), -1.0)


class TestDefaultStep:
    def test_heat_heuristic(self, circle64, log_model):
        rho = make_density(circle64, "uniform")
        assert default_dt(circle64, log_model, rho) == pytest.approx(1e-3 / 64 ** 2)

    def test_power_heuristic_scales_with_minimum(self, circle64, porous_model):
        rho = make_density(circle64, "bump:0")
        expected = 1e-3 / 64 ** 2 * rho.minimum() ** (1.0 - 2.0)
        assert default_dt(circle64, porous_model, rho) == pytest.approx(expected)
