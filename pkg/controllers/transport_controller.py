"""
Transport Controller - W2 distances and geodesics between two densities
"""

import asyncio
import logging
from typing import List

import numpy as np

from config import get_settings
from models import CheckReport, RunConfig, RunResult, TransportPath
from services import grid_io
from services.evi import check_geodesic, finalize_report
from services.lp_oracle import lp_w2_oracle, oracle_available
from services.transport import reparametrize, solve_w2
from controllers.setup import ExperimentSetup, build_setup

logger = logging.getLogger(__name__)

ORACLE_AGREEMENT_RTOL = 2e-2
CONSTANT_SPEED_RTOL = 1e-2
LENGTH_SLACK = 1e-6


class TransportController:
    """Controller for dynamic optimal transport runs"""

    def __init__(self):
        self.settings = get_settings()

    async def compute_w2(self, config: RunConfig) -> RunResult:
        """
        Solve the dynamic problem between mu0 and mu1 and cross-check with the LP oracle

        Args:
            config: Resolved run configuration

        Returns:
            RunResult with the W2 estimate, solver diagnostics and the oracle agreement report
        """
        return await asyncio.to_thread(self._compute_w2, config)

    async def compute_geodesic(self, config: RunConfig) -> RunResult:
        """Geodesic between mu0 and mu1, reparametrized to constant speed, with geodesic-property checks"""
        return await asyncio.to_thread(self._compute_geodesic, config)

    def oracle_agreement(self, setup: ExperimentSetup, path: TransportPath) -> List[CheckReport]:
        """Relative agreement of the dynamic W2 with the exact discrete W2"""
        grid = setup.grid
        if not oracle_available(grid):
            logger.info(f"Oracle skipped: {grid.size} nodes exceed the cap of {self.settings.oracle_max_nodes}")
            return []
        w_lp, plan = lp_w2_oracle(grid, setup.mu0, setup.mu1)
        report = CheckReport.identity(
            "w2_oracle_agreement",
            path.w2,
            w_lp,
            ORACLE_AGREEMENT_RTOL * max(w_lp, 1e-12),
            reference="dynamic vs discrete W2",
            measured={
                "w2_dynamic": path.w2,
                "w2_oracle": w_lp,
                "relative_gap": abs(path.w2 - w_lp) / max(w_lp, 1e-12),
                "oracle_duality_gap": plan.duality_gap,
            },
        )
        return [finalize_report(setup.ctx, report, setup.mu0.values, setup.mu1.values)]

    def _compute_w2(self, config: RunConfig) -> RunResult:
        setup = build_setup(config)
        logger.info(f"Computing W2 on {setup.grid.spec.label()}: {config.mu0} -> {config.mu1}")
        path = solve_w2(setup.grid, setup.mu0, setup.mu1, params=config.transport)
        reports = self.oracle_agreement(setup, path)
        results = {
            "w2": path.w2,
            "w2_sq_estimate": path.w2_sq_estimate,
            "iterations": path.iterations,
            "continuity_residual": path.continuity_residual,
            "floor_active": path.floor_active,
            "notes": path.notes,
        }
        for report in reports:
            results["w2_oracle"] = report.measured["w2_oracle"]
        artifacts = [
            str(grid_io.write_path_csv(path, setup.output_path("path.csv"))),
            str(grid_io.save_path(path, setup.output_path("path"))),
            str(grid_io.save_grid(setup.grid, setup.output_path("grid"))),
        ]
        return RunResult(command=config.command, config_digest=setup.digest, reports=reports,
                         results=results, artifacts=artifacts)

    def _compute_geodesic(self, config: RunConfig) -> RunResult:
        setup = build_setup(config)
        path = solve_w2(setup.grid, setup.mu0, setup.mu1, params=config.transport)
        uniform = reparametrize(path, self.settings.reparam_eps)
        reports = self.reparametrization_reports(setup, path, uniform)
        if oracle_available(setup.grid):
            reports.extend(check_geodesic(setup.ctx, uniform, s) for s in config.s_samples)
        else:
            logger.info("Geodesic-property checks skipped: grid exceeds the oracle cap")
        artifacts = [
            str(grid_io.write_path_csv(uniform, setup.output_path("geodesic.csv"))),
            str(grid_io.save_path(uniform, setup.output_path("geodesic"))),
        ]
        results = {
            "w2": path.w2,
            "w2_sq_estimate": path.w2_sq_estimate,
            "metric_length_sq": uniform.metric_length_sq,
            "iterations": path.iterations,
        }
        return RunResult(command=config.command, config_digest=setup.digest, reports=reports,
                         results=results, artifacts=artifacts)

    def reparametrization_reports(self, setup: ExperimentSetup, path: TransportPath,
                                  uniform: TransportPath) -> List[CheckReport]:
        """Constant per-slice action and L^2 <= int A ds + eps^2 after reparametrization"""
        eps = self.settings.reparam_eps
        actions = uniform.action_per_s
        mean = float(np.mean(actions))
        spread = float(np.max(np.abs(actions - mean)))
        speed = CheckReport.identity(
            "reparametrization_constant_speed", spread, 0.0, CONSTANT_SPEED_RTOL * max(mean, 1e-12),
            reference="constant-speed reparametrization",
            measured={"mean_action": mean, "max_deviation": spread, "eps": eps},
        )
        length = CheckReport.inequality(
            "reparametrization_length", uniform.metric_length_sq, path.w2_sq_estimate + eps ** 2, LENGTH_SLACK,
            reference="constant-speed reparametrization",
            measured={"length_sq": uniform.metric_length_sq, "action_integral": path.w2_sq_estimate, "eps": eps},
        )
        arrays = (setup.mu0.values, setup.mu1.values)
        return [finalize_report(setup.ctx, speed, *arrays), finalize_report(setup.ctx, length, *arrays)]


# Singleton instance
_transport_controller: TransportController = None


def get_transport_controller() -> TransportController:
    """Get or create transport controller singleton"""
    global _transport_controller

    if _transport_controller is None:
        _transport_controller = TransportController()

    return _transport_controller
