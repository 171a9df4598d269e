"""
Nonlinear diffusion d/dt rho = lap U(rho), the Wasserstein gradient flow of the entropy
"""

import logging
import math
import time
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from models import DensityField, DiffusionParams, DiffusionScheme, DiffusionTrajectory
from services.entropy import EntropyModel, evaluate
from services.errors import DiffusionError
from services.manifold import ManifoldGrid

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-10


def default_dt(grid: ManifoldGrid, model: EntropyModel, rho: DensityField) -> float:
    """1e-3 h^2 for the heat flow, scaled by (min rho)^(1-m) for power models"""
    dt = 1e-3 * grid.spacing ** 2
    if not model.linear_pressure:
        dt *= float(np.min(rho.values)) ** (1.0 - model.m)
    return dt


def uses_exact_propagator(model: EntropyModel, params: DiffusionParams) -> bool:
    if params.scheme == DiffusionScheme.exact:
        if not model.linear_pressure:
            raise DiffusionError("the exact propagator only exists for the heat flow (U(r) = r)")
        return True
    return params.scheme == DiffusionScheme.auto and model.linear_pressure


def _implicit_step(grid: ManifoldGrid, model: EntropyModel, old: np.ndarray, dt: float,
                   params: DiffusionParams) -> np.ndarray:
    """Backward Euler: solve r - dt L U(r) = old by Newton"""
    L = grid.laplacian_matrix
    b = old.ravel()
    r = b.copy()
    scale = max(1.0, float(np.max(np.abs(b))))
    for it in range(1, params.newton_max_iterations + 1):
        F = r - dt * (L @ model.U(r)) - b
        res = float(np.max(np.abs(F)))
        if res <= params.newton_tolerance * scale:
            logger.debug(f"Newton converged in {it - 1} iterations, residual {res:.3e}")
            return r.reshape(grid.shape)
        dU = model.dU(r)
        if sp.issparse(L):
            J = (sp.identity(grid.size, format="csr") - dt * (L @ sp.diags(dU))).tocsc()
            delta = spla.spsolve(J, F)
        else:
            J = np.eye(grid.size) - dt * L * dU[None, :]
            delta = np.linalg.solve(J, F)
        r = r - delta
        if not np.all(np.isfinite(r)):
            break
    logger.error(f"Implicit diffusion step did not converge (dt={dt:.3e})")
    raise DiffusionError(f"Newton solve failed to converge within {params.newton_max_iterations} iterations")


def step(grid: ManifoldGrid, model: EntropyModel, rho: DensityField, dt: float,
         params: Optional[DiffusionParams] = None) -> DensityField:
    """
    Advance the density by one time step

    Args:
        grid: Manifold grid
        model: Entropy model supplying U
        rho: Current density (unchanged)
        dt: Positive step length
        params: Scheme and Newton settings

    Returns:
        New density with the same mass
    """
    params = params or DiffusionParams()
    if not dt > 0.0:
        raise DiffusionError(f"dt must be positive, got {dt}")
    values = grid.check_scalar(rho.values, "density")
    if np.ptp(values) == 0.0:
        return rho

    if uses_exact_propagator(model, params):
        new = grid.heat_propagate(values, dt)
    else:
        new = _implicit_step(grid, model, values, dt, params)

    low = float(np.min(new))
    if low <= params.positivity_floor:
        logger.error(f"Positivity lost in diffusion step: min rho = {low:.3e}")
        raise DiffusionError(f"density fell to {low:.3e} after a step of {dt:.3e}; reduce dt")
    # Newton and Krylov tolerances leave a small mass drift
    return DensityField(values=new / grid.integrate(new), grid=grid)


def evolve(grid: ManifoldGrid, model: EntropyModel, rho0: DensityField, t_final: float,
           dt: Optional[float] = None, params: Optional[DiffusionParams] = None) -> DiffusionTrajectory:
    """
    Evolve rho0 to t_final with steps of dt; the last step is shortened to land on t_final

    Every save_every-th state and the final state are stored with their entropies.
    """
    params = params or DiffusionParams()
    if t_final < 0.0:
        raise DiffusionError(f"t_final must be >= 0, got {t_final}")
    dt = dt or params.dt or default_dt(grid, model, rho0)
    n_steps = int(math.ceil(t_final / dt - 1e-9)) if t_final > 0.0 else 0

    start = time.time()
    times, states = [0.0], [rho0]
    current, t = rho0, 0.0
    exact = uses_exact_propagator(model, params)
    for k in range(1, n_steps + 1):
        keep = k % params.save_every == 0 or k == n_steps
        if exact and not keep:
            # the exact propagator jumps straight between stored times
            continue
        target = t_final if k == n_steps else k * dt
        current = step(grid, model, current, target - t, params)
        t = target
        if keep:
            times.append(t)
            states.append(current)

    entropies = np.array([evaluate(model, grid, s) for s in states])
    increases = np.diff(entropies)
    if increases.size and increases.max() > MONOTONE_SLACK:
        logger.warning(f"Entropy increased by {increases.max():.3e} along the trajectory")
    logger.debug(
        f"Evolved {model.label} on {grid.spec.label()} to t={t_final:g} in {n_steps} steps "
        f"({time.time() - start:.2f}s)"
    )
    return DiffusionTrajectory(times=np.array(times), states=states, entropies=entropies)


def flow(grid: ManifoldGrid, model: EntropyModel, rho0: DensityField, t: float,
         dt: Optional[float] = None, params: Optional[DiffusionParams] = None) -> DensityField:
    """Final state of evolve; the semigroup S_t"""
    params = params or DiffusionParams()
    if t == 0.0:
        return rho0
    if uses_exact_propagator(model, params):
        return step(grid, model, rho0, t, params)
    lean = params.model_copy(update={"save_every": 10 ** 9})
    return evolve(grid, model, rho0, t, dt, lean).final


def truncation_error(grid: ManifoldGrid, model: EntropyModel, rho: DensityField, dt: float,
                     params: Optional[DiffusionParams] = None) -> float:
    """Sup-difference between one step of dt and two steps of dt/2"""
    params = params or DiffusionParams()
    full = step(grid, model, rho, dt, params)
    half = step(grid, model, step(grid, model, rho, 0.5 * dt, params), 0.5 * dt, params)
    return float(np.max(np.abs(full.values - half.values)))


def flow_fixed_steps(grid: ManifoldGrid, model: EntropyModel, rho0: DensityField, t: float, n_steps: int,
                     params: Optional[DiffusionParams] = None) -> DensityField:
    """S_t with n_steps equal steps, so the time-stepping error is smooth in t"""
    params = params or DiffusionParams()
    if t == 0.0:
        return rho0
    if uses_exact_propagator(model, params):
        return step(grid, model, rho0, t, params)
    current = rho0
    for _ in range(n_steps):
        current = step(grid, model, current, t / n_steps, params)
    return current
