"""
Suite Controller - The full check battery for one manifold and entropy
"""

import asyncio
import logging
from typing import Callable, List, Tuple

from config import get_settings
from models import CheckReport, RunConfig, RunResult
from services import evi
from services.diffusion import evolve
from services.errors import OTFlowError
from services.lp_oracle import oracle_available
from services.transport import reparametrize, solve_w2
from controllers.checks_controller import get_checks_controller
from controllers.flow_controller import get_flow_controller
from controllers.setup import ExperimentSetup, build_setup
from controllers.transport_controller import get_transport_controller
from utils.helpers import ProgressTracker

logger = logging.getLogger(__name__)

Job = Tuple[str, Callable[[], List[CheckReport]]]


class SuiteController:
    """Runs independent checks concurrently and merges their reports by name"""

    def __init__(self):
        self.settings = get_settings()
        self.checks = get_checks_controller()
        self.flows = get_flow_controller()
        self.transport = get_transport_controller()

    async def run_suite(self, config: RunConfig) -> RunResult:
        """
        Run the full battery

        Args:
            config: Resolved run configuration; ``parallel`` bounds the concurrent jobs

        Returns:
            RunResult with every report sorted by name; failed jobs are listed in ``error``
        """
        setup = await asyncio.to_thread(build_setup, config)
        jobs = self.battery(setup)
        logger.info(f"Suite on {setup.grid.spec.label()} with {setup.model.label}: {len(jobs)} jobs, parallel={config.parallel}")
        semaphore = asyncio.Semaphore(config.parallel)
        tracker = ProgressTracker(len(jobs), "Suite")

        async def run_job(label: str, job: Callable[[], List[CheckReport]]):
            async with semaphore:
                try:
                    reports = await asyncio.to_thread(job)
                    return label, reports, None
                except OTFlowError as e:
                    logger.error(f"Suite job {label} failed: {e}")
                    return label, [], f"{label}: {type(e).__name__}: {e}"
                finally:
                    tracker.update()

        outcomes = await asyncio.gather(*(run_job(label, job) for label, job in jobs))
        tracker.complete()

        reports = sorted((r for _, job_reports, _ in outcomes for r in job_reports), key=lambda r: r.name)
        errors = [err for _, _, err in outcomes if err]
        return RunResult(
            command=config.command,
            config_digest=setup.digest,
            reports=reports,
            results={
                "jobs": len(jobs),
                "checks": len(reports),
                "failed_checks": [r.name for r in reports if not r.passed],
                "failed_jobs": errors,
            },
            error="; ".join(errors) or None,
        )

    # ==================== battery ====================

    def battery(self, setup: ExperimentSetup) -> List[Job]:
        """Independent jobs of the battery; each returns its reports"""
        config, grid = setup.config, setup.grid
        times = sorted(config.times)
        t0, t1 = times[0], times[-1]
        t2 = times[2] if len(times) >= 3 else 2.0 * t1 - t0
        evi_setup = _with_times(setup, [t0, t1, t2])

        jobs: List[Job] = [
            ("flow", lambda: self._flow_reports(setup, t1)),
            ("evi", lambda: self.checks.evi_reports(evi_setup)),
            ("contraction", lambda: self.checks.contraction_reports(setup)),
            ("convexity", lambda: self.checks.convexity_reports(setup)),
            ("action", lambda: self.checks.action_reports(setup)),
            ("bochner", lambda: self.checks.bochner_reports(setup)),
            ("mccann", lambda: self.checks.mccann_reports(setup)),
            ("transport", lambda: self._transport_reports(setup)),
        ]
        if setup.model.linear_pressure and not grid.is_sphere:
            jobs.append(("eigenmode", lambda: self._eigenmode_reports(setup)))
        return jobs

    def _flow_reports(self, setup: ExperimentSetup, t: float) -> List[CheckReport]:
        ctx = setup.ctx
        trajectory = evolve(setup.grid, setup.model, setup.mu0, t, params=ctx.diffusion)
        reports = self.flows.trajectory_reports(setup, trajectory, "flow")
        reports.append(evi.check_semigroup(ctx, setup.mu0, 0.5 * t, 0.5 * t))
        reports.append(evi.check_dissipation_rate(ctx, setup.mu0, 0.5 * t))
        return reports

    def _eigenmode_reports(self, setup: ExperimentSetup) -> List[CheckReport]:
        mode_setup = build_setup(setup.config.model_copy(update={"mu0": "mode:1"}))
        trajectory = evolve(mode_setup.grid, mode_setup.model, mode_setup.mu0, 0.01, params=mode_setup.ctx.diffusion)
        return [self.flows.eigenmode_report(mode_setup, trajectory)]

    def _transport_reports(self, setup: ExperimentSetup) -> List[CheckReport]:
        path = solve_w2(setup.grid, setup.mu0, setup.mu1, params=setup.config.transport)
        uniform = reparametrize(path, self.settings.reparam_eps)
        reports = self.transport.oracle_agreement(setup, path)
        reports.extend(self.transport.reparametrization_reports(setup, path, uniform))
        if oracle_available(setup.grid):
            reports.append(evi.check_geodesic(setup.ctx, uniform, 0.5))
        return reports


def _with_times(setup: ExperimentSetup, times: List[float]) -> ExperimentSetup:
    config = setup.config.model_copy(update={"times": times})
    return ExperimentSetup(config=config, grid=setup.grid, model=setup.model, mu0=setup.mu0, mu1=setup.mu1,
                           ctx=setup.ctx)


# Singleton instance
_suite_controller: SuiteController = None


def get_suite_controller() -> SuiteController:
    """Get or create suite controller singleton"""
    global _suite_controller

    if _suite_controller is None:
        _suite_controller = SuiteController()

    return _suite_controller
