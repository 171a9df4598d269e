"""
Dynamic optimal transport: W2 geodesics by an augmented Lagrangian on a
staggered (s, x) grid, continuity-equation potentials, actions and
constant-speed reparametrization.
"""

import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid, trapezoid

from models import DensityField, TransportParams, TransportPath
from services.errors import ConvergenceError, TransportError
from services.manifold import ManifoldGrid
from utils.helpers import ProgressTracker

logger = logging.getLogger(__name__)

ENDPOINT_MASS_TOLERANCE = 1e-8
SOLVABILITY_TOLERANCE = 1e-10
ACTION_FLOOR = 1e-10
PROJECTION_ITERATIONS = 60
CONTINUITY_RTOL = 5e-2


# ==================== potentials ====================

def solve_potential(grid: ManifoldGrid, rho, drho: np.ndarray,
                    params: Optional[TransportParams] = None) -> np.ndarray:
    """
    Solve -div(rho grad phi) = drho for the zero-mean potential phi

    Args:
        grid: Manifold grid
        rho: Strictly positive density (DensityField or array)
        drho: Mean-zero right-hand side
        params: CG tolerance and iteration cap

    Returns:
        Potential with zero mean and no component in the gradient kernel
    """
    params = params or TransportParams()
    values = rho.values if isinstance(rho, DensityField) else grid.check_scalar(rho, "density")
    drho = grid.check_scalar(drho, "drho")
    if np.min(values) <= 0.0:
        raise TransportError("solve_potential needs a strictly positive density")

    mass = grid.integrate(np.abs(drho))
    if mass == 0.0:
        return np.zeros(grid.shape)
    if abs(grid.integrate(drho)) > SOLVABILITY_TOLERANCE * max(1.0, mass):
        raise TransportError(f"drho must have zero mean, got {grid.integrate(drho):.3e}")

    rhs, removed = grid.project_null(drho)
    if removed > 0.0:
        logger.debug(f"Projected {removed:.3e} of gradient-kernel content out of drho")

    w = grid.vol_weights

    def matvec(x):
        phi = x.reshape(grid.shape)
        return (-w * grid.divergence(values * grid.gradient(phi))).ravel()

    op = spla.LinearOperator((grid.size, grid.size), matvec=matvec, dtype=float)
    if grid.is_sphere:
        # Jacobi: diagonal of the stiffness matrix scaled by the local density
        inv_diag = 1.0 / (values.ravel() * grid.stiffness_diagonal)
        precond = spla.LinearOperator((grid.size, grid.size), matvec=lambda x: inv_diag * x, dtype=float)
    else:
        mu = grid.laplacian_eigenvalues
        inv_mu = np.divide(1.0, mu, out=np.zeros_like(mu), where=mu > 0.0)
        scale = 1.0 / (float(np.mean(values)) * w.flat[0])

        def apply_precond(x):
            coeffs = grid.spectral_transform(x.reshape(grid.shape)) * inv_mu
            return (scale * grid.spectral_inverse(coeffs)).ravel()

        precond = spla.LinearOperator((grid.size, grid.size), matvec=apply_precond, dtype=float)

    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    x, info = spla.cg(op, (w * rhs).ravel(), rtol=params.cg_tolerance, atol=0.0,
                      maxiter=params.cg_max_iterations, M=precond, callback=count)
    if info != 0:
        residual = float(np.linalg.norm(op.matvec(x) - (w * rhs).ravel()))
        logger.error(f"CG failed to converge for the potential solve (info={info})")
        raise ConvergenceError("weighted elliptic solve did not converge", iterations=iterations, residual=residual)

    phi, _ = grid.project_null(x.reshape(grid.shape))
    return phi


def continuity_operator(grid: ManifoldGrid, values: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """div(rho grad phi)"""
    return grid.divergence(values * grid.gradient(phi))


# ==================== actions ====================

def slice_action(grid: ManifoldGrid, values: np.ndarray, phi: np.ndarray,
                 drift: Optional[np.ndarray] = None) -> float:
    velocity = grid.gradient(phi)
    if drift is not None:
        velocity = velocity + np.asarray(drift).reshape((grid.dim,) + (1,) * grid.dim)
    return grid.integrate(grid.inner(velocity, velocity) * values)


def action(grid: ManifoldGrid, path: TransportPath) -> np.ndarray:
    """Per-slice action int |grad phi^s|^2 rho^s dV"""
    drift = path.drift if path.drift is not None else [None] * path.slices
    return np.array([
        slice_action(grid, rho.values, phi, d)
        for rho, phi, d in zip(path.rho, path.phi, drift)
    ])


def total_action(path: TransportPath) -> float:
    """Trapezoid rule in s"""
    return float(trapezoid(path.action_per_s, path.s_nodes))


# ==================== augmented Lagrangian solver ====================

class _StaggeredOperators:
    """
    Space-time gradient D phi = (d_s phi, grad phi) from s-nodes to s-cells, its adjoint
    and the per-eigenmode inverse of D*D.
    """

    def __init__(self, grid: ManifoldGrid, K: int):
        self.grid = grid
        self.K = K
        n = K + 1
        path_lap = np.diag(np.r_[1.0, 2.0 * np.ones(K - 1), 1.0]) - np.eye(n, k=1) - np.eye(n, k=-1)
        averaging = np.diag(np.r_[1.0, 2.0 * np.ones(K - 1), 1.0]) + np.eye(n, k=1) + np.eye(n, k=-1)
        mu = grid.laplacian_eigenvalues
        blocks = K * path_lap[None, :, :] + (mu / (4.0 * K))[:, None, None] * averaging[None, :, :]
        self.block_inverse = np.linalg.pinv(blocks, hermitian=True)

    def apply(self, phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grid, K = self.grid, self.K
        a = K * (phi[1:] - phi[:-1])
        b = 0.5 * grid.to_frame(grid.gradient(phi[1:] + phi[:-1]))
        return a, b

    def adjoint(self, rho: np.ndarray, m: np.ndarray) -> np.ndarray:
        grid, K = self.grid, self.K
        div_m = grid.divergence(grid.from_frame(m))
        out = np.zeros((K + 1,) + grid.shape)
        out[1:] += rho - div_m / (2.0 * K)
        out[:-1] += -rho - div_m / (2.0 * K)
        return out

    def solve_normal(self, rhs: np.ndarray) -> np.ndarray:
        coeffs = self.grid.spectral_transform(rhs)
        solved = np.einsum("jkl,lj->kj", self.block_inverse, coeffs)
        return self.grid.spectral_inverse(solved)


def _project_parabola(a0: np.ndarray, b0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pointwise projection onto {(a, b): a + |b|^2 / 2 <= 0}"""
    bsq = np.sum(b0 ** 2, axis=1)
    outside = a0 + 0.5 * bsq > 0.0
    lam = np.zeros_like(a0)
    if np.any(outside):
        a_o, b_o = a0[outside], bsq[outside]
        l_o = np.zeros_like(a_o)
        for _ in range(PROJECTION_ITERATIONS):
            f = a_o - l_o + 0.5 * b_o / (1.0 + l_o) ** 2
            fp = -1.0 - b_o / (1.0 + l_o) ** 3
            step = f / fp
            l_o = l_o - step
            if np.max(np.abs(step)) <= 1e-15 * (1.0 + np.max(l_o)):
                break
        lam[outside] = np.maximum(l_o, 0.0)
    return a0 - lam, b0 / (1.0 + lam)[:, None]


def _kinetic_energy(grid: ManifoldGrid, rho: np.ndarray, m: np.ndarray, floor: float) -> float:
    msq = np.sum(m ** 2, axis=1)
    density = np.where(rho > floor, msq / np.maximum(rho, floor), 0.0)
    return float(np.sum(grid.integrate(density))) / rho.shape[0]


def _as_values(grid: ManifoldGrid, mu: DensityField) -> np.ndarray:
    return grid.check_scalar(mu.values, "density")


def solve_w2(grid: ManifoldGrid, mu0: DensityField, mu1: DensityField, K: Optional[int] = None,
             params: Optional[TransportParams] = None) -> TransportPath:
    """
    Dynamic W2 between two densities

    Densities live at s-cell centers and potentials at s-nodes. Each iteration
    solves the space-time Poisson problem mode by mode, projects pointwise onto
    the Hamilton-Jacobi constraint set and updates the multiplier (rho, m).

    Args:
        grid: Manifold grid
        mu0: Initial density
        mu1: Final density
        K: Number of s-intervals (defaults to params.slices)
        params: Solver parameters

    Returns:
        TransportPath with K+1 slices and w2_sq_estimate = trapezoid of the actions
    """
    params = params or TransportParams()
    K = K or params.slices
    if K < 8:
        raise TransportError(f"need at least 8 s-intervals, got {K}")
    a0, a1 = _as_values(grid, mu0), _as_values(grid, mu1)
    m0, m1 = grid.integrate(a0), grid.integrate(a1)
    if abs(m0 - m1) > ENDPOINT_MASS_TOLERANCE:
        raise TransportError(f"endpoint mass mismatch: {m0:.12g} vs {m1:.12g}")

    ops = _StaggeredOperators(grid, K)
    r = params.penalty
    s_cells = (np.arange(K) + 0.5) / K
    bshape = (K,) + (1,) * grid.dim
    rho = (1.0 - s_cells).reshape(bshape) * a0 + s_cells.reshape(bshape) * a1
    m = np.zeros((K, grid.dim) + grid.shape)
    q_a, q_b = np.zeros_like(rho), np.zeros_like(m)
    boundary = np.zeros((K + 1,) + grid.shape)
    boundary[0], boundary[-1] = a0, -a1

    tracker = ProgressTracker(params.max_iterations, f"Augmented Lagrangian on {grid.spec.label()} (K={K})")
    previous = _kinetic_energy(grid, rho, m, params.density_floor)
    energy, residual = previous, math.inf
    converged = False
    iteration = 0
    for iteration in range(1, params.max_iterations + 1):
        rhs = ops.adjoint(r * q_a - rho, r * q_b - m) - boundary
        phi = ops.solve_normal(rhs) / r
        d_a, d_b = ops.apply(phi)
        q_a, q_b = _project_parabola(d_a + rho / r, d_b + m / r)
        rho = rho + r * (d_a - q_a)
        m = m + r * (d_b - q_b)

        if iteration % params.check_every == 0:
            energy = _kinetic_energy(grid, rho, m, params.density_floor)
            residual = math.sqrt(float(np.sum(grid.integrate((d_a - q_a) ** 2))) / K)
            tracker.update(params.check_every, action=energy, residual=residual)
            if abs(energy - previous) <= params.tolerance * max(energy, ACTION_FLOOR):
                converged = True
                break
            previous = energy

    if not converged:
        logger.error(f"Augmented Lagrangian did not converge in {params.max_iterations} iterations (action={energy:.6e})")
        raise ConvergenceError(
            f"dynamic transport solver did not converge within {params.max_iterations} iterations",
            iterations=params.max_iterations,
            residual=residual,
        )
    tracker.current = iteration
    tracker.complete(action=energy, residual=residual)
    return _recover_path(grid, mu0, mu1, rho, m, K, params, iteration)


def _staggered_ds_rho(rho_cells: np.ndarray, a0: np.ndarray, a1: np.ndarray, K: int) -> np.ndarray:
    """d/ds rho at s-nodes as the solver's adjoint sees it: half cells at the ends, full cells inside"""
    out = np.empty((K + 1,) + a0.shape)
    out[0] = 2.0 * K * (rho_cells[0] - a0)
    out[1:-1] = K * (rho_cells[1:] - rho_cells[:-1])
    out[-1] = 2.0 * K * (a1 - rho_cells[-1])
    return out


def _recover_path(grid: ManifoldGrid, mu0: DensityField, mu1: DensityField, rho_cells: np.ndarray,
                  m_cells: np.ndarray, K: int, params: TransportParams, iterations: int) -> TransportPath:
    """
    Node densities and potentials from the cell solution

    Potentials solve -div(rho^k grad phi^k) = d_s rho^k with the staggered s-derivative,
    so the continuity residual measures how far the solver's momentum is from that
    derivative plus the elliptic solve error. It is binding: a residual above
    CONTINUITY_RTOL raises ConvergenceError.
    """
    notes: List[str] = []
    floor_active = False
    densities: List[DensityField] = [mu0]
    for k in range(1, K):
        values = 0.5 * (rho_cells[k - 1] + rho_cells[k])
        if np.min(values) < params.density_floor:
            floor_active = True
            values = np.maximum(values, params.density_floor)
        values = values / grid.integrate(values)
        densities.append(DensityField(values=values, grid=grid))
    densities.append(mu1)
    if floor_active:
        notes.append(f"density floor {params.density_floor:g} was active on interior slices")
        logger.info("Density floor bound while recovering the transport path")

    ds_rho = _staggered_ds_rho(rho_cells, mu0.values, mu1.values, K)
    ds_rho = ds_rho - np.array([grid.integrate(d) for d in ds_rho]).reshape((K + 1,) + (1,) * grid.dim) / grid.volume
    potentials = [solve_potential(grid, densities[k], ds_rho[k], params) for k in range(K + 1)]

    momenta = np.concatenate([m_cells[:1], 0.5 * (m_cells[:-1] + m_cells[1:]), m_cells[-1:]])
    div_m = grid.divergence(grid.from_frame(momenta))
    flux = np.stack([continuity_operator(grid, densities[k].values, potentials[k]) for k in range(K + 1)])
    scale = max(float(np.max(np.abs(ds_rho))), ACTION_FLOOR)
    feasibility = float(np.max(np.abs(ds_rho + div_m))) / scale
    elliptic = float(np.max(np.abs(ds_rho + flux))) / scale
    continuity = max(feasibility, elliptic)
    if continuity > CONTINUITY_RTOL:
        logger.error(f"Continuity residual {continuity:.3e} exceeds {CONTINUITY_RTOL:g} after {iterations} iterations")
        raise ConvergenceError(
            f"recovered path violates the continuity equation (residual {continuity:.3e})",
            iterations=iterations,
            residual=continuity,
        )

    s_nodes = np.linspace(0.0, 1.0, K + 1)
    actions = np.array([slice_action(grid, densities[k].values, potentials[k]) for k in range(K + 1)])
    return TransportPath(
        s_nodes=s_nodes,
        rho=densities,
        phi=potentials,
        action_per_s=actions,
        w2_sq_estimate=float(trapezoid(actions, s_nodes)),
        continuity_residual=continuity,
        continuity_tolerance=CONTINUITY_RTOL,
        floor_active=floor_active,
        iterations=iterations,
        notes=notes,
    )


# ==================== path utilities ====================

def _locate(path: TransportPath, s: float) -> Tuple[int, float]:
    if not 0.0 <= s <= 1.0:
        raise TransportError(f"s must lie in [0, 1], got {s}")
    K = path.slices - 1
    k = min(int(math.floor(s * K)), K - 1)
    return k, s * K - k


def interpolate(path: TransportPath, s: float) -> DensityField:
    """Linear interpolation between adjacent slices; exact endpoints"""
    k, theta = _locate(path, s)
    if theta == 0.0:
        return path.rho[k]
    if theta == 1.0:
        return path.rho[k + 1]
    values = (1.0 - theta) * path.rho[k].values + theta * path.rho[k + 1].values
    return DensityField(values=values, grid=path.rho[k].grid)


def interpolate_potential(path: TransportPath, s: float) -> np.ndarray:
    k, theta = _locate(path, s)
    return (1.0 - theta) * path.phi[k] + theta * path.phi[k + 1]


def reparametrize(path: TransportPath, eps: float) -> TransportPath:
    """
    Near constant-speed reparametrization of a path

    With g(s) = sqrt(eps^2 + A^s) and L = int_0^1 g, the new parameter is
    r(s) = L^-1 int_0^s g. Slices are rho^(s(r)), potentials s'(r) phi^(s(r))
    with s'(r) = L / g(s(r)), so the new action is L^2 A / (eps^2 + A) <= L^2.
    """
    if not eps > 0.0:
        raise TransportError(f"eps must be positive, got {eps}")
    s_nodes = path.s_nodes
    speed = np.sqrt(eps ** 2 + np.maximum(path.action_per_s, 0.0))
    cumulative = cumulative_trapezoid(speed, s_nodes, initial=0.0)
    length = float(cumulative[-1])
    r_of_s = cumulative / length
    r_of_s[-1] = 1.0

    K = path.slices - 1
    r_nodes = np.linspace(0.0, 1.0, K + 1)
    s_of_r = np.interp(r_nodes, r_of_s, s_nodes)
    s_of_r[0], s_of_r[-1] = 0.0, 1.0

    actions_at = np.interp(s_of_r, s_nodes, path.action_per_s)
    ds_dr = length / np.sqrt(eps ** 2 + np.maximum(actions_at, 0.0))
    new_actions = ds_dr ** 2 * actions_at

    rho = [interpolate(path, s) for s in s_of_r]
    phi = [d * interpolate_potential(path, s) for d, s in zip(ds_dr, s_of_r)]
    drift = None
    if path.drift is not None:
        drift = np.stack([
            d * np.array([np.interp(s, s_nodes, path.drift[:, a]) for a in range(path.drift.shape[1])])
            for d, s in zip(ds_dr, s_of_r)
        ])

    return path.model_copy(update={
        "s_nodes": r_nodes,
        "rho": rho,
        "phi": phi,
        "drift": drift,
        "action_per_s": new_actions,
        "w2_sq_estimate": float(trapezoid(new_actions, r_nodes)),
        "metric_length_sq": length ** 2,
        "notes": path.notes + [f"reparametrized with eps={eps:g}, L^2={length ** 2:.10g}"],
    })


def mixture_path(grid: ManifoldGrid, mu0: DensityField, mu1: DensityField, K: int = 16,
                 params: Optional[TransportParams] = None) -> TransportPath:
    """Admissible path (1-s) mu0 + s mu1 with its continuity potentials"""
    a0, a1 = _as_values(grid, mu0), _as_values(grid, mu1)
    s_nodes = np.linspace(0.0, 1.0, K + 1)
    drho = a1 - a0
    rho, phi, actions = [], [], []
    for s in s_nodes:
        values = (1.0 - s) * a0 + s * a1
        rho.append(mu0 if s == 0.0 else mu1 if s == 1.0 else DensityField(values=values, grid=grid))
        potential = solve_potential(grid, values, drho, params)
        phi.append(potential)
        actions.append(slice_action(grid, values, potential))
    actions = np.array(actions)
    return TransportPath(
        s_nodes=s_nodes, rho=rho, phi=phi, action_per_s=actions,
        w2_sq_estimate=float(trapezoid(actions, s_nodes)),
    )


def translation_path(grid: ManifoldGrid, mu0: DensityField, displacement: Sequence[float], K: int = 16,
                     warp: Optional[Callable[[float], float]] = None) -> TransportPath:
    """
    Rigid translation of mu0 by warp(s) * displacement on a flat grid

    The velocity warp'(s) d is constant in space, so it is carried as the
    path drift with a zero periodic potential.
    """
    if grid.is_sphere:
        raise TransportError("translation paths need a flat grid")
    d = np.asarray(displacement, dtype=float)
    if d.shape != (grid.dim,):
        raise TransportError(f"displacement must have {grid.dim} components")
    warp = warp or (lambda s: s)
    h = 1e-6
    s_nodes = np.linspace(0.0, 1.0, K + 1)
    rho, phi, drift = [], [], []
    for s in s_nodes:
        shifted = grid.fourier_shift(mu0.values, tuple(warp(s) * d))
        rho.append(mu0 if s == 0.0 else DensityField(values=shifted, grid=grid))
        phi.append(np.zeros(grid.shape))
        lo, hi = max(s - h, 0.0), min(s + h, 1.0)
        drift.append((warp(hi) - warp(lo)) / (hi - lo) * d)
    drift = np.array(drift)
    actions = np.sum(drift ** 2, axis=1)
    return TransportPath(
        s_nodes=s_nodes, rho=rho, phi=phi, drift=drift, action_per_s=actions,
        w2_sq_estimate=float(trapezoid(actions, s_nodes)),
    )
