"""
Flow Controller - Nonlinear diffusion runs and trajectory diagnostics
"""

import asyncio
import logging
import math
from pathlib import Path
from typing import List, Tuple

import numpy as np

from config import get_settings
from models import CheckReport, DensityField, DiffusionTrajectory, RunConfig, RunResult
from services import grid_io
from services.diffusion import default_dt, evolve
from services.evi import check_dissipation_rate, check_monotonicity_lemma, check_semigroup, finalize_report
from controllers.setup import ExperimentSetup, build_setup

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-10
EIGENMODE_TOLERANCE = 1e-6
DEFAULT_STORED_STATES = 100


class FlowController:
    """Controller for diffusion trajectories"""

    def __init__(self):
        self.settings = get_settings()

    async def run_flow(self, config: RunConfig) -> RunResult:
        """
        Evolve mu0 to the last requested time and export the trajectory

        Args:
            config: Resolved run configuration (times[-1] is the final time)

        Returns:
            RunResult with the trajectory diagnostics
        """
        return await asyncio.to_thread(self._run_flow, config)

    def _run_flow(self, config: RunConfig) -> RunResult:
        setup = build_setup(config)
        rho0, t_start = setup.mu0, 0.0
        if config.resume_from is not None:
            rho0, t_start = self.resume_state(setup, config.resume_from)
        t_final = max(config.times)
        if t_final < t_start:
            raise ValueError(f"the resumed trajectory already reaches t={t_start:g}, past the requested t={t_final:g}")
        params = config.diffusion
        if params.dt is None and self.settings.diffusion_dt is not None:
            params = params.model_copy(update={"dt": self.settings.diffusion_dt})
        if "save_every" not in config.diffusion.model_fields_set:
            dt = params.dt or default_dt(setup.grid, setup.model, rho0)
            params = params.model_copy(update={"save_every": max(1, math.ceil((t_final - t_start) / dt / DEFAULT_STORED_STATES))})
        logger.info(f"Evolving {config.mu0} with {setup.model.label} on {setup.grid.spec.label()} from t={t_start:g} to t={t_final:g}")
        trajectory = evolve(setup.grid, setup.model, rho0, t_final - t_start, params=params)
        if t_start > 0.0:
            trajectory = DiffusionTrajectory(
                times=trajectory.times + t_start, states=trajectory.states, entropies=trajectory.entropies,
            )

        reports = self.trajectory_reports(setup, trajectory, "flow")
        span = t_final - t_start
        if span > 0.0:
            reports.append(check_semigroup(setup.ctx, rho0, 0.5 * span, 0.5 * span))
            reports.append(check_dissipation_rate(setup.ctx, rho0, 0.5 * span))
        eigenmode = self.eigenmode_report(setup, trajectory)
        if eigenmode is not None:
            reports.append(eigenmode)

        artifacts = [
            str(grid_io.write_trajectory_csv(trajectory, setup.output_path("trajectory.csv"))),
            str(grid_io.save_trajectory(trajectory, setup.output_path("trajectory"))),
            str(grid_io.save_grid(setup.grid, setup.output_path("grid"))),
        ]
        results = {
            "t_start": t_start,
            "t_final": t_final,
            "stored_states": len(trajectory.states),
            "entropy_initial": float(trajectory.entropies[0]),
            "entropy_final": float(trajectory.entropies[-1]),
        }
        return RunResult(command=config.command, config_digest=setup.digest, reports=reports,
                         results=results, artifacts=artifacts)

    def resume_state(self, setup: ExperimentSetup, directory: str) -> Tuple[DensityField, float]:
        """Final state and time of the trajectory an earlier flow run saved in directory"""
        folder = Path(directory)
        try:
            saved_grid = grid_io.load_grid(folder / "grid")
            if saved_grid.spec != setup.grid.spec:
                raise ValueError(f"{folder} holds a run on {saved_grid.spec.label()}, not {setup.grid.spec.label()}")
            previous = grid_io.load_trajectory(folder / "trajectory", setup.grid)
        except FileNotFoundError as e:
            raise ValueError(f"nothing to resume in {folder}: {e}") from e
        logger.info(f"Resuming from {folder} at t={previous.times[-1]:g}")
        return previous.final, float(previous.times[-1])

    def trajectory_reports(self, setup: ExperimentSetup, trajectory: DiffusionTrajectory,
                           prefix: str) -> List[CheckReport]:
        """Mass conservation, positivity and entropy monotonicity of a stored trajectory"""
        masses = np.array([s.mass() for s in trajectory.states])
        minima = np.array([s.minimum() for s in trajectory.states])
        drift = float(np.max(np.abs(masses - masses[0])))
        mass = CheckReport.identity(
            f"{prefix}_mass", drift, 0.0, MASS_TOLERANCE, reference="mass conservation",
            measured={"max_mass_drift": drift, "initial_mass": float(masses[0])},
        )
        positivity = CheckReport.inequality(
            f"{prefix}_positivity", setup.ctx.diffusion.positivity_floor, float(np.min(minima)), 0.0,
            reference="positivity preservation",
            measured={"min_density": float(np.min(minima))},
        )
        monotone = check_monotonicity_lemma(
            dict(zip(trajectory.times.tolist(), trajectory.entropies.tolist())),
            name=f"{prefix}_entropy_monotone",
            config_digest=setup.digest,
        )
        arrays = (setup.mu0.values,)
        return [
            finalize_report(setup.ctx, mass, *arrays),
            finalize_report(setup.ctx, positivity, *arrays),
            monotone,
        ]

    def eigenmode_report(self, setup: ExperimentSetup, trajectory: DiffusionTrajectory):
        """Sup error against exp(-(2 pi k / L)^2 t) decay for a mode:<k> datum under the heat flow"""
        config, grid = setup.config, setup.grid
        if not config.mu0.startswith("mode:") or grid.is_sphere or not setup.model.linear_pressure:
            return None
        k = int(config.mu0.split(":", 1)[1])
        rate = (2.0 * math.pi * k / grid.length) ** 2
        wave = np.cos(2.0 * math.pi * k * grid.coordinates[0] / grid.length)
        error = 0.0
        for t, state in zip(trajectory.times, trajectory.states):
            exact = (1.0 + 0.1 * math.exp(-rate * t) * wave) / grid.volume
            error = max(error, float(np.max(np.abs(state.values - exact))))
        report = CheckReport.identity(
            f"heat_eigenmode[k={k}]", error, 0.0, EIGENMODE_TOLERANCE, reference="heat eigenmode decay",
            measured={"sup_error": error, "decay_rate": rate, "t_final": float(trajectory.times[-1])},
        )
        return finalize_report(setup.ctx, report, setup.mu0.values)


# Singleton instance
_flow_controller: FlowController = None


def get_flow_controller() -> FlowController:
    """Get or create flow controller singleton"""
    global _flow_controller

    if _flow_controller is None:
        _flow_controller = FlowController()

    return _flow_controller
