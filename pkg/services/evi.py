"""
Verification harness: every identity and inequality of the gradient-flow theory
as an executable check returning a CheckReport.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config import get_settings
from models import CheckReport, DensityField, DiffusionParams, TolerancePolicy, TransportParams, TransportPath
from services import diffusion
from services.entropy import EntropyModel, check_mccann, dissipation_integrand, entropy_lower_bound, evaluate
from services.errors import CheckInputError
from services.lp_oracle import lp_w2_oracle, oracle_available
from services.manifold import ManifoldGrid
from services.transport import interpolate, reparametrize, slice_action, solve_potential, solve_w2
from utils.helpers import digest_arrays

logger = logging.getLogger(__name__)

DINI_SCHEDULE = (1e-2, 1e-3)
DISSIPATION_SIGN_SLACK = 1e-9
MONOTONE_SLACK = 1e-10


class FlowCheckContext(BaseModel):
    """Everything a flow check needs besides its measures"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: ManifoldGrid
    model: EntropyModel
    lam: float = Field(..., description="Curvature parameter of the flow")
    lambda_overridden: bool = False
    diffusion: DiffusionParams = Field(default_factory=DiffusionParams)
    transport: TransportParams = Field(default_factory=TransportParams)
    tolerance: TolerancePolicy = Field(default_factory=TolerancePolicy)
    dini_time_scale: float = 1.0
    reparam_eps: float = 1e-3
    use_oracle: bool = True
    config_digest: str = ""

    @classmethod
    def build(
        cls,
        grid: ManifoldGrid,
        model: EntropyModel,
        lambda_override: Optional[float] = None,
        diffusion_params: Optional[DiffusionParams] = None,
        transport_params: Optional[TransportParams] = None,
        relative_tolerance: Optional[float] = None,
        use_oracle: bool = True,
        config_digest: str = "",
    ) -> "FlowCheckContext":
        settings = get_settings()
        default_tol = settings.sphere_tolerance if grid.is_sphere else settings.flat_tolerance
        return cls(
            grid=grid,
            model=model,
            lam=grid.ricci_lambda if lambda_override is None else float(lambda_override),
            lambda_overridden=lambda_override is not None,
            diffusion=diffusion_params or DiffusionParams(dt=settings.check_dt),
            transport=transport_params or TransportParams(),
            tolerance=TolerancePolicy(relative=relative_tolerance or default_tol),
            dini_time_scale=settings.dini_time_scale,
            reparam_eps=settings.reparam_eps,
            use_oracle=use_oracle,
            config_digest=config_digest,
        )

    def flow(self, mu: DensityField, t: float) -> DensityField:
        return diffusion.flow(self.grid, self.model, mu, t, params=self.diffusion)

    def entropy(self, mu: DensityField) -> float:
        return evaluate(self.model, self.grid, mu)


# ==================== scalar helpers ====================

def e_lambda(lam: float, t: float) -> float:
    """int_0^t exp(lam r) dr, continuous at lam = 0"""
    x = lam * t
    if abs(x) < 1e-8:
        return t * (1.0 + x / 2.0 + x * x / 6.0)
    return math.expm1(x) / lam


def sinh_ratio(t: float) -> float:
    """t / sinh(t) with the removable singularity at 0"""
    if abs(t) < 1e-8:
        return 1.0 - t * t / 6.0
    with np.errstate(over="ignore"):
        return float(t / np.sinh(t))


@dataclass
class DiniEstimate:
    value: float
    quotients: List[float]
    steps: List[float]
    bias: float


def dini_estimate(samples: Mapping[float, float], t0: float) -> DiniEstimate:
    """Forward difference quotients at the two smallest available steps"""
    if t0 not in samples:
        raise CheckInputError(f"no sample at t0={t0}")
    forward = sorted(t for t in samples if t > t0)
    if len(forward) < 2:
        raise CheckInputError("the Dini proxy needs at least 2 forward samples")
    t2, t1 = forward[0], forward[1]
    h1, h2 = t1 - t0, t2 - t0
    q1 = (samples[t1] - samples[t0]) / h1
    q2 = (samples[t2] - samples[t0]) / h2
    bias = abs(q1 - q2) * h1 / (h1 - h2)
    return DiniEstimate(value=max(q1, q2), quotients=[q1, q2], steps=[h1, h2], bias=bias)


def dini_upper(samples: Mapping[float, float], t0: float) -> float:
    """Two-point proxy of the upper right Dini derivative"""
    return dini_estimate(samples, t0).value


# ==================== W2 estimates ====================

def _w2_sq_estimates(ctx: FlowCheckContext, mu: DensityField, nu: DensityField) -> Dict[str, float]:
    """Squared W2 from the dynamic solver and, on small grids, the LP oracle"""
    with_oracle = ctx.use_oracle and oracle_available(ctx.grid)
    if np.array_equal(mu.values, nu.values):
        return {"dynamic": 0.0, "oracle": 0.0} if with_oracle else {"dynamic": 0.0}
    out = {"dynamic": solve_w2(ctx.grid, mu, nu, params=ctx.transport).w2_sq_estimate}
    if with_oracle:
        out["oracle"] = lp_w2_oracle(ctx.grid, mu, nu)[0] ** 2
    return out


def _estimators(estimates: Sequence[Dict[str, float]]) -> List[str]:
    return [k for k in ("dynamic", "oracle") if all(k in e for e in estimates)]


Evaluation = Tuple[float, float, Sequence[float]]


def _conservative_inequality(
    ctx: FlowCheckContext,
    name: str,
    reference: str,
    estimates: Sequence[Dict[str, float]],
    evaluate_with: Callable[[List[float]], Evaluation],
    measured: Dict[str, float],
    notes: Optional[List[str]] = None,
    extra_tolerance: float = 0.0,
    groups: Optional[Sequence[int]] = None,
) -> CheckReport:
    """
    Evaluate an inequality with the conservative choice of W2 estimator per quantity

    Every W2 quantity (estimates sharing a group index are samples of one quantity
    and always take the same estimator) is tried with each estimator; the reported
    evaluation is the one with the smallest slack, which puts the smaller value on
    the upper-bound side and the larger on the lower-bound side.
    """
    groups = list(range(len(estimates))) if groups is None else list(groups)
    keys = _estimators(estimates)
    n_groups = max(groups) + 1
    chosen: Optional[CheckReport] = None
    for combo in itertools.product(keys, repeat=n_groups):
        lhs, rhs, terms = evaluate_with([e[combo[g]] for e, g in zip(estimates, groups)])
        tol = ctx.tolerance.scaled(lhs, rhs, *terms) + extra_tolerance
        report = CheckReport.inequality(name, lhs, rhs, tol, reference=reference)
        if len(set(combo)) == 1:
            measured[f"slack_{combo[0]}"] = report.slack
        if chosen is None or report.slack < chosen.slack:
            chosen = report
            measured["oracle_quantities"] = float(sum(1 for key in combo if key == "oracle"))
    for i, e in enumerate(estimates):
        for key in keys:
            measured[f"w2_sq_{i}_{key}"] = e[key]
    measured["slack_conservative"] = chosen.slack
    chosen.measured = {**measured, "lhs": chosen.lhs, "rhs": chosen.rhs,
                       "slack": chosen.slack, "tolerance": chosen.tolerance}
    chosen.notes = list(notes or [])
    return chosen


def finalize_report(ctx: Optional[FlowCheckContext], report: CheckReport, *arrays: np.ndarray,
                    config_digest: str = "") -> CheckReport:
    """Attach the inputs digest and the context flags"""
    if ctx is not None:
        report.inputs_digest = digest_arrays(*arrays, extra=f"{ctx.config_digest}|{report.name}")
        if ctx.lambda_overridden:
            report.notes.append(f"lambda overridden to {ctx.lam:g} (grid Ricci bound {ctx.grid.ricci_lambda:g})")
        if ctx.grid.dim == 1 and not ctx.model.linear_pressure:
            report.notes.append("dimension 1: McCann conditions applied with n = 1")
    else:
        report.inputs_digest = digest_arrays(*arrays, extra=f"{config_digest}|{report.name}")
    if "lhs" not in report.measured:
        report.measured.update(lhs=report.lhs, rhs=report.rhs, slack=report.slack, tolerance=report.tolerance)
    level = logging.INFO if report.passed else logging.WARNING
    logger.log(level, report.summary_line())
    return report


# ==================== flow inequalities ====================

def check_evi_integral(ctx: FlowCheckContext, mu0: DensityField, nu: DensityField,
                       t0: float, t1: float, name: Optional[str] = None) -> CheckReport:
    """
    Integral EVI on (t0, t1):
    exp(lam tau)/2 W2^2(mu_t1, nu) - 1/2 W2^2(mu_t0, nu) <= E_lam(tau) (E(nu) - E(mu_t1))
    """
    if not 0.0 <= t0 < t1:
        raise CheckInputError(f"need 0 <= t0 < t1, got ({t0}, {t1})")
    tau = t1 - t0
    mu_t0 = ctx.flow(mu0, t0)
    mu_t1 = ctx.flow(mu_t0, tau)
    w_far = _w2_sq_estimates(ctx, mu_t1, nu)
    w_near = _w2_sq_estimates(ctx, mu_t0, nu)
    e_nu, e_t1 = ctx.entropy(nu), ctx.entropy(mu_t1)
    weight = e_lambda(ctx.lam, tau)

    def build(w):
        first = 0.5 * math.exp(ctx.lam * tau) * w[0]
        second = 0.5 * w[1]
        rhs = weight * (e_nu - e_t1)
        return first - second, rhs, (first, second, weight * e_nu, weight * e_t1)

    report = _conservative_inequality(
        ctx, name or f"evi_integral[t0={t0:g},t1={t1:g}]", "integral EVI", [w_far, w_near], build,
        {"t0": t0, "t1": t1, "entropy_nu": e_nu, "entropy_mu_t1": e_t1, "e_lambda": weight, "lambda": ctx.lam},
    )
    return finalize_report(ctx, report, mu0.values, nu.values)


def check_evi_differential(ctx: FlowCheckContext, mu0: DensityField, nu: DensityField, t: float,
                           name: Optional[str] = None) -> CheckReport:
    """
    1/2 d+/dt W2^2(nu, mu_t) + lam/2 W2^2(nu, mu_t) <= E(nu) - E(mu_t), with the
    Dini derivative replaced by the forward-quotient proxy and its bias added to the tolerance
    """
    steps = [h * ctx.dini_time_scale for h in DINI_SCHEDULE]
    mu_t = ctx.flow(mu0, t)
    states = {t: mu_t}
    for h in steps:
        states[t + h] = ctx.flow(mu_t, h)
    estimates = {tau: _w2_sq_estimates(ctx, state, nu) for tau, state in states.items()}
    ordered = [estimates[t]] + [estimates[t + h] for h in steps]
    e_nu, e_t = ctx.entropy(nu), ctx.entropy(mu_t)

    measured = {"t": t, "entropy_nu": e_nu, "entropy_mu_t": e_t, "lambda": ctx.lam}
    biases = {}

    def build(w):
        samples = {t: 0.5 * w[0], t + steps[0]: 0.5 * w[1], t + steps[1]: 0.5 * w[2]}
        dini = dini_estimate(samples, t)
        biases[len(biases)] = dini.bias
        measured.setdefault("dini_h1", dini.steps[0])
        measured.setdefault("dini_h2", dini.steps[1])
        lhs = dini.value + ctx.lam * samples[t]
        return lhs, e_nu - e_t, (dini.value, ctx.lam * samples[t], e_nu, e_t)

    # bias of the proxy enters the tolerance; evaluate once to learn it per estimator
    for key in _estimators(ordered):
        build([e[key] for e in ordered])
    bias = max(biases.values())
    measured["proxy_bias"] = bias
    report = _conservative_inequality(
        ctx, name or f"evi_differential[t={t:g}]", "EVI (differential form)", ordered, build, measured,
        extra_tolerance=bias, groups=[0] * len(ordered),
    )
    return finalize_report(ctx, report, mu0.values, nu.values)


def check_contraction(ctx: FlowCheckContext, mu: DensityField, nu: DensityField, t: float,
                      name: Optional[str] = None) -> CheckReport:
    """W2(mu_t, nu_t) <= exp(-lam t) W2(mu, nu)"""
    before = _w2_sq_estimates(ctx, mu, nu)
    after = _w2_sq_estimates(ctx, ctx.flow(mu, t), ctx.flow(nu, t))
    factor = math.exp(-ctx.lam * t)

    def build(w):
        lhs, rhs = math.sqrt(max(w[0], 0.0)), factor * math.sqrt(max(w[1], 0.0))
        return lhs, rhs, (lhs, rhs)

    report = _conservative_inequality(
        ctx, name or f"contraction[t={t:g}]", "lambda-contraction", [after, before], build,
        {"t": t, "lambda": ctx.lam, "contraction_factor": factor},
    )
    return finalize_report(ctx, report, mu.values, nu.values)


def check_regularization(ctx: FlowCheckContext, mu0: DensityField, nu: DensityField, t: float,
                         name: Optional[str] = None) -> CheckReport:
    """E(mu_t) <= E(nu) + W2^2(mu0, nu) / (2 E_lam(t))"""
    if not t > 0.0:
        raise CheckInputError(f"regularization bound needs t > 0, got {t}")
    w = _w2_sq_estimates(ctx, mu0, nu)
    e_t, e_nu = ctx.entropy(ctx.flow(mu0, t)), ctx.entropy(nu)
    weight = e_lambda(ctx.lam, t)

    def build(values):
        penalty = values[0] / (2.0 * weight)
        return e_t, e_nu + penalty, (e_t, e_nu, penalty)

    report = _conservative_inequality(
        ctx, name or f"regularization[t={t:g}]", "uniform regularization bound", [w], build,
        {"t": t, "entropy_mu_t": e_t, "entropy_nu": e_nu, "e_lambda": weight, "lambda": ctx.lam},
    )
    return finalize_report(ctx, report, mu0.values, nu.values)


def check_uniform_continuity(ctx: FlowCheckContext, mu0: DensityField, t0: float, t1: float,
                             name: Optional[str] = None) -> CheckReport:
    """W2^2(mu_t1, mu_t0) <= 2 E_{-lam}(t1 - t0) (E(mu_t0) - E_inf)"""
    if not 0.0 <= t0 <= t1:
        raise CheckInputError(f"need 0 <= t0 <= t1, got ({t0}, {t1})")
    mu_t0 = ctx.flow(mu0, t0)
    mu_t1 = ctx.flow(mu_t0, t1 - t0)
    w = _w2_sq_estimates(ctx, mu_t1, mu_t0)
    floor = entropy_lower_bound(ctx.model, ctx.grid.volume)
    e_t0 = ctx.entropy(mu_t0)
    weight = 2.0 * e_lambda(-ctx.lam, t1 - t0)

    def build(values):
        rhs = weight * (e_t0 - floor)
        return values[0], rhs, (values[0], rhs)

    report = _conservative_inequality(
        ctx, name or f"uniform_continuity[t0={t0:g},t1={t1:g}]", "uniform continuity estimate", [w], build,
        {"t0": t0, "t1": t1, "entropy_mu_t0": e_t0, "entropy_floor": floor, "lambda": ctx.lam},
    )
    return finalize_report(ctx, report, mu0.values)


def check_displacement_convexity(ctx: FlowCheckContext, mu0: DensityField, mu1: DensityField,
                                 s_samples: Sequence[float], name: Optional[str] = None) -> CheckReport:
    """
    E(mu^s) <= (1-s) E(mu^0) + s E(mu^1) - lam/2 s(1-s) W2^2(mu^0, mu^1)
    along the reparametrized dynamic geodesic; the worst sample is reported
    """
    if np.array_equal(mu0.values, mu1.values):
        path = None
        w = {"dynamic": 0.0}
        if ctx.use_oracle and oracle_available(ctx.grid):
            w["oracle"] = 0.0
    else:
        geodesic = solve_w2(ctx.grid, mu0, mu1, params=ctx.transport)
        path = reparametrize(geodesic, ctx.reparam_eps)
        w = {"dynamic": geodesic.w2_sq_estimate}
        if ctx.use_oracle and oracle_available(ctx.grid):
            w["oracle"] = lp_w2_oracle(ctx.grid, mu0, mu1)[0] ** 2

    e0, e1 = ctx.entropy(mu0), ctx.entropy(mu1)
    entropies = {s: (e0 if path is None else ctx.entropy(interpolate(path, s))) for s in s_samples}
    measured: Dict[str, float] = {"lambda": ctx.lam, "entropy_0": e0, "entropy_1": e1}
    for s, value in entropies.items():
        measured[f"entropy_s={s:g}"] = value

    def build(values):
        best = None
        for s, value in entropies.items():
            rhs = (1.0 - s) * e0 + s * e1 - 0.5 * ctx.lam * s * (1.0 - s) * values[0]
            if best is None or rhs - value < best[1] - best[0]:
                best = (value, rhs)
        return best[0], best[1], (best[0], best[1], e0, e1)

    report = _conservative_inequality(
        ctx, name or "displacement_convexity", "displacement lambda-convexity", [w], build, measured,
        notes=path.notes if path is not None else [],
    )
    report.measured["worst_s"] = next(s for s, value in entropies.items() if value == report.lhs)
    return finalize_report(ctx, report, mu0.values, mu1.values)


# ==================== tilded family ====================

def _fd_centered(values: Sequence[float], h: float) -> float:
    f = values
    return (f[0] - 8.0 * f[1] + 8.0 * f[3] - f[4]) / (12.0 * h)


def _fd_forward(values: Sequence[float], h: float) -> float:
    f = values
    return (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h)


@dataclass
class TildedDerivatives:
    """Derivatives of the action and entropy along gamma~(s, t) = S_{st}(gamma(s))"""
    s: float
    index: int
    action: float
    half_action_dt: float
    entropy_ds: float
    hessian_term: float
    pressure_term: float
    time_step: float
    s_step: float

    @property
    def dissipation(self) -> float:
        return -(self.hessian_term + self.pressure_term)


def tilded_derivatives(ctx: FlowCheckContext, path: TransportPath, t: float, s: float,
                       time_step: Optional[float] = None) -> TildedDerivatives:
    """
    Build the tilded family on a 5x5 stencil around (s, t) and differentiate it

    s is snapped to the nearest path node with two neighbours on each side.
    Fourth-order differences are used in both s and t (forward in t when t is
    too close to 0 for a centered stencil).
    """
    if path.drift is not None:
        raise CheckInputError("the tilded family needs a path whose velocity is a periodic gradient")
    grid, model = ctx.grid, ctx.model
    K = path.slices - 1
    if K < 4:
        raise CheckInputError("the tilded family needs at least 5 path slices")
    k = int(min(max(round(s * K), 2), K - 2))
    s_k = float(path.s_nodes[k])
    ds = float(path.s_nodes[1] - path.s_nodes[0])

    h = time_step or (min(1e-3, t / 4.0) if t > 0.0 else 1e-3)
    if h <= 0.0 or h < 1e-12:
        raise CheckInputError(f"time step underflow (h={h:g})")
    centered = t - 2.0 * h >= 0.0
    times = [t + j * h for j in (range(-2, 3) if centered else range(5))]
    center = 2 if centered else 0

    dt = ctx.diffusion.dt or diffusion.default_dt(grid, model, path.rho[k])
    n_steps = max(1, int(math.ceil(max(times) / dt)))
    family = {
        (j, i): diffusion.flow_fixed_steps(grid, model, path.rho[j], float(path.s_nodes[j]) * tau, n_steps,
                                           ctx.diffusion)
        for j in range(k - 2, k + 3) for i, tau in enumerate(times)
    }

    actions, potentials = [], []
    for i in range(len(times)):
        stencil = [family[(j, i)].values for j in range(k - 2, k + 3)]
        drho = (stencil[0] - 8.0 * stencil[1] + 8.0 * stencil[3] - stencil[4]) / (12.0 * ds)
        drho -= grid.integrate(drho) / grid.volume
        phi = solve_potential(grid, family[(k, i)], drho, ctx.transport)
        potentials.append(phi)
        actions.append(slice_action(grid, family[(k, i)].values, phi))

    differentiate = _fd_centered if centered else _fd_forward
    half_action_dt = 0.5 * differentiate(actions, h)
    entropy_ds = _fd_centered([evaluate(model, grid, family[(j, center)]) for j in range(k - 2, k + 3)], ds)

    rho = family[(k, center)].values
    phi = potentials[center]
    grad = grid.gradient(phi)
    hessian_term = grid.integrate((grid.hessian_norm_sq(phi) + grid.ricci_quadratic(grad)) * model.U(rho))
    pressure_term = grid.integrate(grid.laplacian(phi) ** 2 * model.pressure_defect(rho))
    return TildedDerivatives(
        s=s_k, index=k, action=actions[center], half_action_dt=half_action_dt, entropy_ds=entropy_ds,
        hessian_term=hessian_term, pressure_term=pressure_term, time_step=h, s_step=ds,
    )


def action_identity(ctx: FlowCheckContext, path: TransportPath, t: float, s: float,
                    time_step: Optional[float] = None, name: Optional[str] = None,
                    derivatives: Optional[TildedDerivatives] = None) -> CheckReport:
    """
    d/dt (A~/2) + d/ds E(gamma~) = s D~ with
    D~ = -int (|Hess phi|^2 + Ric(grad phi, grad phi)) U(rho) + (lap phi)^2 (rho U' - U)
    """
    d = derivatives or tilded_derivatives(ctx, path, t, s, time_step)
    lhs = d.half_action_dt + d.entropy_ds
    rhs = d.s * d.dissipation
    tol = ctx.tolerance.scaled(lhs, rhs, d.half_action_dt, d.entropy_ds)
    report = CheckReport.identity(
        name or f"action_identity[t={t:g},s={d.s:g}]", lhs, rhs, tol, reference="action derivative identity",
        measured={
            "s": d.s, "t": t, "action": d.action, "half_action_dt": d.half_action_dt,
            "entropy_ds": d.entropy_ds, "dissipation": d.dissipation, "hessian_term": d.hessian_term,
            "pressure_term": d.pressure_term, "residual": abs(lhs - rhs), "time_step": d.time_step,
            "s_step": d.s_step,
        },
    )
    return finalize_report(ctx, report, *[r.values for r in path.rho])


def dissipation_sign_applies(ctx: FlowCheckContext) -> bool:
    """D~ <= 0 is predicted when Ric >= 0 and the McCann condition holds"""
    return ctx.grid.ricci_lambda >= 0.0 and not ctx.lambda_overridden and check_mccann(ctx.model, ctx.grid.dim).passed


def check_dissipation_sign(ctx: FlowCheckContext, path: TransportPath, t: float, s: float,
                           time_step: Optional[float] = None, name: Optional[str] = None,
                           derivatives: Optional[TildedDerivatives] = None) -> CheckReport:
    """D~ <= 0 along the tilded family"""
    if not dissipation_sign_applies(ctx):
        raise CheckInputError("the dissipation sign needs Ric >= 0, the grid curvature bound and the McCann condition")
    d = derivatives or tilded_derivatives(ctx, path, t, s, time_step)
    report = CheckReport.inequality(
        name or f"dissipation_sign[t={t:g},s={d.s:g}]", d.dissipation, 0.0, DISSIPATION_SIGN_SLACK,
        reference="sign of the dissipation term",
        measured={"s": d.s, "t": t, "dissipation": d.dissipation, "hessian_term": d.hessian_term,
                  "pressure_term": d.pressure_term},
    )
    return finalize_report(ctx, report, *[r.values for r in path.rho])


def check_lambda_action_inequality(ctx: FlowCheckContext, path: TransportPath, t: float, s: float,
                                   time_step: Optional[float] = None, name: Optional[str] = None,
                                   derivatives: Optional[TildedDerivatives] = None) -> CheckReport:
    """1/2 d/dt A~ + lam s A~ + d/ds E(gamma~) <= 0 for the heat flow"""
    if not ctx.model.linear_pressure:
        raise CheckInputError("the lambda action inequality is stated for the heat flow with the log entropy")
    d = derivatives or tilded_derivatives(ctx, path, t, s, time_step)
    curvature = ctx.lam * d.s * d.action
    lhs = d.half_action_dt + curvature + d.entropy_ds
    tol = ctx.tolerance.scaled(lhs, d.half_action_dt, curvature, d.entropy_ds)
    report = CheckReport.inequality(
        name or f"lambda_action[t={t:g},s={d.s:g}]", lhs, 0.0, tol, reference="lambda action inequality",
        measured={
            "s": d.s, "t": t, "lambda": ctx.lam, "action": d.action, "half_action_dt": d.half_action_dt,
            "curvature_term": curvature, "entropy_ds": d.entropy_ds, "dissipation": d.dissipation,
        },
    )
    return finalize_report(ctx, report, *[r.values for r in path.rho])


def check_monotonicity_lemma(samples: Mapping[float, float], tolerance: float = MONOTONE_SLACK,
                             name: str = "monotonicity", config_digest: str = "") -> CheckReport:
    """A sampled function is nonincreasing: every forward increment is <= tolerance"""
    times = sorted(samples)
    if len(times) < 2:
        raise CheckInputError("monotonicity needs at least 2 samples")
    values = np.array([samples[t] for t in times])
    increments = np.diff(values)
    quotients = increments / np.diff(np.array(times))
    worst = int(np.argmax(increments))
    report = CheckReport.inequality(
        name, float(increments[worst]), 0.0, tolerance,
        reference="monotonicity of functions with nonpositive Dini derivative",
        measured={"max_increment": float(increments[worst]), "max_quotient": float(np.max(quotients)),
                  "at_t": float(times[worst]), "samples": float(len(times))},
    )
    return finalize_report(None, report, values, config_digest=config_digest)


# ==================== supplementary checks ====================

def _entropy_slope(ctx: FlowCheckContext, mu0: DensityField, t: float, h: float, n_steps: int) -> Tuple[float, float]:
    """Finite-difference entropy slope at t and the entropy production there, both with n_steps fixed steps"""
    times = [t - h, t, t + h] if t - h >= 0.0 else [t, t + h, t + 2.0 * h]
    states = [diffusion.flow_fixed_steps(ctx.grid, ctx.model, mu0, tau, n_steps, ctx.diffusion) for tau in times]
    energies = [ctx.entropy(state) for state in states]
    if times[0] == t - h:
        slope = (energies[2] - energies[0]) / (2.0 * h)
        rho = states[1].values
    else:
        slope = (-3.0 * energies[0] + 4.0 * energies[1] - energies[2]) / (2.0 * h)
        rho = states[0].values
    production = ctx.grid.integrate(dissipation_integrand(ctx.model, ctx.grid, rho))
    return slope, production


def check_dissipation_rate(ctx: FlowCheckContext, mu0: DensityField, t: float, h: Optional[float] = None,
                           name: Optional[str] = None) -> CheckReport:
    """
    d/dt E(mu_t) = -int <grad U(rho), grad e'(rho)> compared with a difference of the entropy

    Implicit schemes are first order in dt: both sides are computed with n and
    2n steps, extrapolated, and their change enters the tolerance.
    """
    h = h or max(ctx.diffusion.dt or 0.0, 1e-4)
    dt = ctx.diffusion.dt or diffusion.default_dt(ctx.grid, ctx.model, mu0)
    n_steps = max(1, int(math.ceil((t + 2.0 * h) / dt)))
    slope, production = _entropy_slope(ctx, mu0, t, h, n_steps)
    bias = 0.0
    if not diffusion.uses_exact_propagator(ctx.model, ctx.diffusion):
        fine_slope, fine_production = _entropy_slope(ctx, mu0, t, h, 2 * n_steps)
        bias = abs(fine_slope - slope) + abs(fine_production - production)
        slope, production = 2.0 * fine_slope - slope, 2.0 * fine_production - production
    tol = ctx.tolerance.scaled(slope, production) + bias
    report = CheckReport.identity(
        name or f"dissipation_rate[t={t:g}]", slope, -production, tol, reference="entropy dissipation rate",
        measured={"t": t, "h": h, "entropy_slope": slope, "entropy_production": production,
                  "time_step_bias": bias, "steps": float(n_steps)},
    )
    return finalize_report(ctx, report, mu0.values)


def check_semigroup(ctx: FlowCheckContext, mu0: DensityField, t1: float, t2: float,
                    name: Optional[str] = None) -> CheckReport:
    """sup |S_{t1+t2} mu - S_t2 S_t1 mu| within five one-step truncation errors"""
    dt = ctx.diffusion.dt or diffusion.default_dt(ctx.grid, ctx.model, mu0)
    params = ctx.diffusion
    direct = diffusion.flow(ctx.grid, ctx.model, mu0, t1 + t2, dt, params)
    composed = diffusion.flow(ctx.grid, ctx.model, diffusion.flow(ctx.grid, ctx.model, mu0, t1, dt, params),
                              t2, dt, params)
    gap = float(np.max(np.abs(direct.values - composed.values)))
    truncation = diffusion.truncation_error(ctx.grid, ctx.model, mu0, dt, params)
    tol = 5.0 * truncation + 1e-12
    report = CheckReport.identity(
        name or f"semigroup[t1={t1:g},t2={t2:g}]", gap, 0.0, tol, reference="semigroup property",
        measured={"t1": t1, "t2": t2, "dt": dt, "sup_difference": gap, "step_truncation_error": truncation},
    )
    return finalize_report(ctx, report, mu0.values)


def check_evi_additivity(ctx: FlowCheckContext, mu0: DensityField, nu: DensityField,
                         t0: float, t1: float, t2: float, name: Optional[str] = None) -> CheckReport:
    """The integral EVI over (t0, t2) holds within the combined slack of (t0, t1) and (t1, t2)"""
    first = check_evi_integral(ctx, mu0, nu, t0, t1)
    second = check_evi_integral(ctx, mu0, nu, t1, t2)
    whole = check_evi_integral(ctx, mu0, nu, t0, t2)
    combined = first.tolerance + second.tolerance
    report = CheckReport.inequality(
        name or f"evi_additivity[{t0:g},{t1:g},{t2:g}]", -whole.slack, combined, whole.tolerance,
        reference="EVI additivity",
        measured={
            "slack_01": first.slack, "slack_12": second.slack, "slack_02": whole.slack,
            "superadditivity_gap": whole.slack - first.slack - second.slack,
            "sub_checks_passed": 1.0 if first.passed and second.passed else 0.0,
        },
    )
    return finalize_report(ctx, report, mu0.values, nu.values)


def check_geodesic(ctx: FlowCheckContext, path: TransportPath, s: float, relative: float = 3e-2,
                   name: Optional[str] = None) -> CheckReport:
    """W2(mu^0, mu^s) = s W2(mu^0, mu^1) with both sides from the LP oracle"""
    grid = ctx.grid
    start, end = path.rho[0], path.rho[-1]
    whole = lp_w2_oracle(grid, start, end)[0]
    partial = lp_w2_oracle(grid, start, interpolate(path, s))[0]
    target = s * whole
    report = CheckReport.identity(
        name or f"geodesic[s={s:g}]", partial, target, relative * max(target, 1e-12), reference="geodesic property",
        measured={"s": s, "w2_partial": partial, "w2_total": whole, "ratio": partial / whole if whole else 0.0},
    )
    return finalize_report(ctx, report, start.values, end.values)


def check_bochner(grid: ManifoldGrid, f: np.ndarray, tolerance: Optional[float] = None,
                  name: str = "bochner", config_digest: str = "") -> CheckReport:
    """Pointwise Bochner identity residual"""
    residual = grid.bochner_residual(f)
    grad = grid.gradient(f)
    scale = float(np.max(grid.hessian_norm_sq(f) + grid.ricci_quadratic(grad)))
    if tolerance is None:
        relative = get_settings().sphere_tolerance if grid.is_sphere else 1e-9
        tolerance = relative * max(scale, 1.0)
    worst = float(np.max(np.abs(residual)))
    report = CheckReport.identity(
        name, worst, 0.0, tolerance, reference="Bochner formula",
        measured={"max_residual": worst, "hessian_scale": scale},
    )
    return finalize_report(None, report, f, config_digest=config_digest)


def check_hessian_trace(grid: ManifoldGrid, f: np.ndarray, slack: float = 1e-10,
                        name: str = "hessian_trace", config_digest: str = "") -> CheckReport:
    """(lap f)^2 <= n |Hess f|^2 pointwise, slack relative to max n |Hess f|^2"""
    bound = grid.dim * grid.hessian_norm_sq(f)
    excess = grid.laplacian(f) ** 2 - bound
    worst = float(np.max(excess))
    report = CheckReport.inequality(
        name, worst, 0.0, slack * max(1.0, float(np.max(bound))), reference="trace inequality for the Hessian",
        measured={"max_excess": worst, "max_bound": float(np.max(bound))},
    )
    return finalize_report(None, report, f, config_digest=config_digest)
