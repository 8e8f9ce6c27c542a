"""
Desk-scale 2D JKO steps through entropic optimal transport.

• sinkhorn: log-domain Sinkhorn on grids; the cost d(x, y)^2/2 splits per
  axis, so every soft-min is two one-axis logsumexp passes.
• sinkhorn_divergence: debiased S_eps(rho, mu) and its gradient in rho.
• jko_step_2d: argmin E_m[eta] + S_eps(eta, mu)/tau over the simplex, with
  eta = softmax(theta) and L-BFGS-B on theta.
• barycentric_map, boundary_behavior_check, spectral_heat_reference.

The squared-distance cost is halved, so S_eps approximates W2^2/2 and the
proximal term W2^2/(2 tau) reads S_eps/tau.

Relies on:
    • scipy.special.logsumexp for the stabilized soft-min
    • scipy.optimize.minimize (L-BFGS-B) for the simplex problem
    • numpy.fft for the spectral heat reference
"""
from __future__ import annotations
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy import optimize, special

from numerics.domain_grid import CellTag, Grid, classify_boundary
from numerics.entropy_profiles import GridDensity, entropy, f_m, f_m_prime
from numerics.errors import ConvergenceError, GridError, RegimeError
from numerics.schemas.scheme import SchemeParams
from pipelines.jko_1d import SchemeTrajectory, StepDiagnostics, TrajectoryStep
from pipelines.utils.pipeline_utils import timed

log = logging.getLogger(__name__)

SINKHORN_CAP = 20_000
SINKHORN_TOL = 1e-9
LBFGS_CAP = 500
MAX_CELLS_PER_AXIS = 96
RESULTANT_FLAG = 1e-3


class EntropicPlan(BaseModel):
    """Dual potentials of an entropic transport problem (plan a_i b_j exp((f_i + g_j - c_ij)/eps))."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    f: np.ndarray = Field(..., description="Dual potential on the source")
    g: np.ndarray = Field(..., description="Dual potential on the target")
    eps: float = Field(..., gt=0.0)
    dual_value: float = Field(..., description="<a, f> + <b, g>, the entropic cost OT_eps")
    transport_cost: float = Field(..., description="<c, P> without the entropy term")
    marginal_error: float = Field(..., description="L1 violation of the source marginal")
    iterations: int
    periodic: bool = False


class BarycentricMap(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: Grid
    images: np.ndarray = Field(..., description="T_eps(x) per cell, shape (n0, n1, 2)")
    displacement: np.ndarray = Field(..., description="T_eps(x) - x, wrapped on the torus")
    flagged: np.ndarray = Field(..., description="Cells whose circular mean is ill-defined")
    debiased: bool = True


class JkoStepResult2D(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rho_next: GridDensity
    plan: EntropicPlan
    barycentric: BarycentricMap
    psi: np.ndarray = Field(..., description="Debiased dual f_{rho,mu} - f_{rho,rho}, normalized")
    u: np.ndarray = Field(..., description="tau f'_m(rho) + |x|^2/2, defined up to a constant")
    objective: float
    baseline_objective: float
    optimality_residual: float
    iterations: int
    eps: float


class BoundaryReport(BaseModel):
    corner_err: float
    face_err: float
    h: float
    eps: float | None = None


# ── separable log-domain kernels ────────────────────────────────────


def _axis_cost(grid: Grid, axis: int) -> np.ndarray:
    x = grid.axis_centers(axis)
    diff = x[:, None] - x[None, :]
    if grid.domain.periodic[axis]:
        L = grid.domain.lengths[axis]
        diff = diff - L * np.round(diff / L)
    return 0.5 * diff * diff


def _log_weights(a: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(a)


def _softmin(H: np.ndarray, C0: np.ndarray, C1: np.ndarray, eps: float) -> np.ndarray:
    """-eps log sum_j exp((H_j - c(x_i, y_j))/eps) for a cost c = C0 + C1."""
    inner = special.logsumexp((H[:, None, :] - C1[None, :, :]) / eps, axis=2)  # (j0, i1)
    outer = special.logsumexp(inner[None, :, :] - C0[:, :, None] / eps, axis=1)  # (i0, i1)
    return -eps * outer


def _conditional_mean(H: np.ndarray, C0: np.ndarray, C1: np.ndarray, eps: float, axis: int,
                      phi: np.ndarray) -> np.ndarray:
    """E[phi(x_axis, y_axis) | x] under the kernel exp((H_j - c(x, y_j))/eps)."""
    if axis == 0:
        inner = special.logsumexp((H[:, None, :] - C1[None, :, :]) / eps, axis=2)  # (j0, i1)
        L = inner[None, :, :] - C0[:, :, None] / eps  # (i0, j0, i1)
        W = np.exp(L - L.max(axis=1, keepdims=True))
        return np.sum(phi[:, :, None] * W, axis=1) / np.sum(W, axis=1)
    inner = special.logsumexp((H[None, :, :] - C0[:, :, None]) / eps, axis=1)  # (i0, j1)
    L = inner[:, None, :] - C1[None, :, :] / eps  # (i0, i1, j1)
    W = np.exp(L - L.max(axis=2, keepdims=True))
    return np.sum(phi[None, :, :] * W, axis=2) / np.sum(W, axis=2)


def _transport_cost(a: np.ndarray, H: np.ndarray, C0: np.ndarray, C1: np.ndarray, eps: float) -> float:
    per_cell = _conditional_mean(H, C0, C1, eps, 0, C0) + _conditional_mean(H, C0, C1, eps, 1, C1)
    return float(np.sum(a * per_cell))


def _check_pair(rho: GridDensity, mu: GridDensity) -> None:
    if rho.grid.d != 2:
        raise GridError("entropic transport here runs on two-dimensional grids")
    if rho.grid.shape != mu.grid.shape or rho.grid.domain != mu.grid.domain:
        raise GridError("both densities must live on the same grid")


def _sinkhorn_masses(a, b, C0, C1, eps, tol, warm=None, periodic=False) -> EntropicPlan:
    log_a, log_b = _log_weights(a), _log_weights(b)
    f = np.zeros_like(a) if warm is None else warm[0].copy()
    g = np.zeros_like(b) if warm is None else warm[1].copy()
    err = math.inf
    for it in range(1, SINKHORN_CAP + 1):
        g = _softmin(f + eps * log_a, C0, C1, eps)
        f_new = _softmin(g + eps * log_b, C0, C1, eps)
        with np.errstate(over="ignore"):
            err = float(np.sum(a * np.abs(np.expm1((f - f_new) / eps))))
        if err <= tol:
            H = g + eps * log_b
            return EntropicPlan(
                f=f, g=g, eps=eps,
                dual_value=float(np.sum(a * f) + np.sum(b * g)),
                transport_cost=_transport_cost(a, H, C0, C1, eps),
                marginal_error=err, iterations=it, periodic=periodic,
            )
        f = f_new
    raise ConvergenceError(f"Sinkhorn did not reach {tol:g} in {SINKHORN_CAP} iterations", SINKHORN_CAP, err)


def _symmetric_potential(a, C0, C1, eps, tol, warm=None) -> tuple[np.ndarray, int]:
    """Fixed point p = softmin(p + eps log a) of the self-transport problem, by averaged iteration."""
    log_a = _log_weights(a)
    p = np.zeros_like(a) if warm is None else warm.copy()
    err = math.inf
    for it in range(1, SINKHORN_CAP + 1):
        s = _softmin(p + eps * log_a, C0, C1, eps)
        with np.errstate(over="ignore"):
            err = float(np.sum(a * np.abs(np.expm1((p - s) / eps))))
        if err <= tol:
            return p, it
        p = 0.5 * (p + s)
    raise ConvergenceError(f"symmetric Sinkhorn did not reach {tol:g}", SINKHORN_CAP, err)


def sinkhorn(
    rho: GridDensity,
    mu: GridDensity,
    eps: float,
    tol: float = SINKHORN_TOL,
    warm: tuple[np.ndarray, np.ndarray] | None = None,
) -> EntropicPlan:
    """Log-domain Sinkhorn between two grid densities until the L1 marginal error is <= tol."""
    _check_pair(rho, mu)
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    grid = rho.grid
    C0, C1 = _axis_cost(grid, 0), _axis_cost(grid, 1)
    return _sinkhorn_masses(
        rho.cell_masses, mu.cell_masses, C0, C1, eps, tol, warm, periodic=grid.domain.is_periodic
    )


def sinkhorn_points(
    x: np.ndarray, a: np.ndarray, y: np.ndarray, b: np.ndarray, eps: float, tol: float = SINKHORN_TOL
) -> EntropicPlan:
    """Dense log-domain Sinkhorn between weighted point clouds, cost |x - y|^2/2."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    C = 0.5 * np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    log_a, log_b = _log_weights(a), _log_weights(b)
    f, g = np.zeros(len(a)), np.zeros(len(b))
    err = math.inf
    for it in range(1, SINKHORN_CAP + 1):
        g = -eps * special.logsumexp((f[:, None] + eps * log_a[:, None] - C) / eps, axis=0)
        f_new = -eps * special.logsumexp((g[None, :] + eps * log_b[None, :] - C) / eps, axis=1)
        with np.errstate(over="ignore"):
            err = float(np.sum(a * np.abs(np.expm1((f - f_new) / eps))))
        if err <= tol:
            P = np.exp((f[:, None] + g[None, :] - C) / eps + log_a[:, None] + log_b[None, :])
            return EntropicPlan(
                f=f, g=g, eps=eps,
                dual_value=float(a @ f + b @ g),
                transport_cost=float(np.sum(P * C)),
                marginal_error=err, iterations=it,
            )
        f = f_new
    raise ConvergenceError(f"Sinkhorn did not reach {tol:g} in {SINKHORN_CAP} iterations", SINKHORN_CAP, err)


class SinkhornDivergence(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    value: float
    gradient: np.ndarray = Field(..., description="f_{rho,mu} - p_rho, the first variation in rho")
    plan: EntropicPlan
    self_potential: np.ndarray
    self_potential_target: np.ndarray


def sinkhorn_divergence(rho: GridDensity, mu: GridDensity, eps: float, tol: float = SINKHORN_TOL) -> SinkhornDivergence:
    """S_eps = OT_eps(rho, mu) - OT_eps(rho, rho)/2 - OT_eps(mu, mu)/2."""
    _check_pair(rho, mu)
    grid = rho.grid
    C0, C1 = _axis_cost(grid, 0), _axis_cost(grid, 1)
    a, b = rho.cell_masses, mu.cell_masses
    plan = sinkhorn(rho, mu, eps, tol)
    p, _ = _symmetric_potential(a, C0, C1, eps, tol)
    q, _ = _symmetric_potential(b, C0, C1, eps, tol)
    value = plan.dual_value - float(np.sum(a * p)) - float(np.sum(b * q))
    return SinkhornDivergence(value=value, gradient=plan.f - p, plan=plan, self_potential=p, self_potential_target=q)


# ── barycentric maps ────────────────────────────────────────────────


def _mean_displacement(H, C0, C1, eps, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """E[y - x | x] per axis (circular mean on periodic axes) and the smallest resultant length."""
    disp = np.zeros(grid.shape + (2,))
    resultant = np.ones(grid.shape)
    for axis in range(2):
        x = grid.axis_centers(axis)
        rel = x[None, :] - x[:, None]  # y_j - x_i
        if grid.domain.periodic[axis]:
            L = grid.domain.lengths[axis]
            ang = 2.0 * np.pi * rel / L
            c = _conditional_mean(H, C0, C1, eps, axis, np.cos(ang))
            s = _conditional_mean(H, C0, C1, eps, axis, np.sin(ang))
            disp[..., axis] = L * np.arctan2(s, c) / (2.0 * np.pi)
            resultant = np.minimum(resultant, np.hypot(c, s))
        else:
            disp[..., axis] = _conditional_mean(H, C0, C1, eps, axis, rel)
    return disp, resultant


def barycentric_map(
    rho: GridDensity,
    mu: GridDensity,
    eps: float,
    tol: float = SINKHORN_TOL,
    debias: bool = True,
    plan: EntropicPlan | None = None,
    self_potential: np.ndarray | None = None,
) -> BarycentricMap:
    """T(x) = x + bar_{rho->mu}(x) - bar_{rho->rho}(x); the plain plan barycenter with debias=False."""
    _check_pair(rho, mu)
    grid = rho.grid
    C0, C1 = _axis_cost(grid, 0), _axis_cost(grid, 1)
    a, b = rho.cell_masses, mu.cell_masses
    plan = plan if plan is not None else sinkhorn(rho, mu, eps, tol)
    disp, R = _mean_displacement(plan.g + eps * _log_weights(b), C0, C1, eps, grid)
    if debias:
        if self_potential is None:
            self_potential, _ = _symmetric_potential(a, C0, C1, eps, tol)
        self_disp, R_self = _mean_displacement(self_potential + eps * _log_weights(a), C0, C1, eps, grid)
        disp = disp - self_disp
        R = np.minimum(R, R_self)
    X = grid.centers()
    images = X + disp
    for axis, (lo, hi) in enumerate(grid.domain.bounds):
        if grid.domain.periodic[axis]:
            images[..., axis] = lo + np.mod(images[..., axis] - lo, hi - lo)
        else:
            images[..., axis] = np.clip(images[..., axis], lo, hi)
    if grid.domain.is_periodic:
        disp = images - X
        for axis, L in enumerate(grid.domain.lengths):
            disp[..., axis] -= L * np.round(disp[..., axis] / L)
    else:
        disp = images - X
    flagged = R < RESULTANT_FLAG
    if np.any(flagged):
        log.warning(f"[WARN] {int(flagged.sum())} cells with ill-defined circular mean")
    return BarycentricMap(grid=grid, images=images, displacement=disp, flagged=flagged, debiased=debias)


def boundary_behavior_check(bmap: BarycentricMap, eps: float | None = None) -> BoundaryReport:
    """Corners should stay fixed and faces should map into themselves."""
    grid = bmap.grid
    if grid.domain.kind.value not in ("Square", "Box2"):
        raise GridError(f"boundary behavior is checked on Square/Box2, got {grid.domain.kind.value}")
    bc = classify_boundary(grid)
    (lo0, hi0), (lo1, hi1) = grid.domain.bounds
    corner_err = 0.0
    for i, cx in ((0, lo0), (grid.n[0] - 1, hi0)):
        for j, cy in ((0, lo1), (grid.n[1] - 1, hi1)):
            corner_err = max(corner_err, float(np.hypot(*(bmap.images[i, j] - (cx, cy)))))
    face = bc.mask(CellTag.FACE)
    normal = np.sum(bmap.displacement * bc.normals, axis=-1)
    face_err = float(np.max(np.abs(normal[face]))) if np.any(face) else 0.0
    log.info(f"[CHECK] boundary behavior corner_err={corner_err:.3e} face_err={face_err:.3e}")
    return BoundaryReport(corner_err=corner_err, face_err=face_err, h=max(grid.h), eps=eps)


# ── JKO step ────────────────────────────────────────────────────────


def _check_regime(grid: Grid, params: SchemeParams, max_cells: int) -> None:
    if grid.d != 2 or params.d != 2:
        raise RegimeError("jko_step_2d needs d = 2 parameters on a two-dimensional grid")
    if grid.domain.is_truncated and not params.truncated:
        try:
            SchemeParams(m=params.m, tau=params.tau, d=2, truncated=True)
        except ValidationError as err:
            raise RegimeError(str(err)) from err
    if max(grid.n) > max_cells:
        raise GridError(f"grid {grid.shape} exceeds the desk-scale cap of {max_cells} cells per axis")


def _grid_entropy(a: np.ndarray, vol: float, m: float) -> float:
    return float(vol * np.sum(f_m(a / vol, m)))


def _softmax(theta: np.ndarray) -> np.ndarray:
    return np.exp(theta - special.logsumexp(theta))


def jko_step_2d(
    mu: GridDensity,
    params: SchemeParams,
    eps: float,
    tol: float = 1e-6,
    sinkhorn_tol: float = 1e-8,
    max_iter: int = LBFGS_CAP,
    max_cells: int = MAX_CELLS_PER_AXIS,
    start: GridDensity | None = None,
) -> JkoStepResult2D:
    """argmin_eta E_m[eta] + S_eps(eta, mu)/tau over the probability simplex on the grid."""
    grid = mu.grid
    _check_regime(grid, params, max_cells)
    if not (eps > 0.0 and tol > 0.0):
        raise ValueError("eps and tol must be positive")
    m, tau, vol = params.m, params.tau, grid.cell_volume
    C0, C1 = _axis_cost(grid, 0), _axis_cost(grid, 1)
    b = mu.cell_masses
    b_pos = np.maximum(b, 1e-300)
    q, _ = _symmetric_potential(b, C0, C1, eps, sinkhorn_tol)
    ot_bb = 2.0 * float(np.sum(b * q))
    shape, size = grid.shape, grid.size
    state: dict[str, np.ndarray | None] = {"f": None, "g": None, "p": None}

    def evaluate(a: np.ndarray):
        warm = None if state["f"] is None else (state["f"], state["g"])
        plan = _sinkhorn_masses(a, b, C0, C1, eps, sinkhorn_tol, warm, grid.domain.is_periodic)
        p, _ = _symmetric_potential(a, C0, C1, eps, sinkhorn_tol, state["p"])
        state["f"], state["g"], state["p"] = plan.f, plan.g, p
        S = plan.dual_value - float(np.sum(a * p)) - 0.5 * ot_bb
        J = _grid_entropy(a, vol, m) + S / tau
        grad = np.asarray(f_m_prime(a / vol, m)) + (plan.f - p) / tau
        return J, grad, plan, p

    def fun(theta: np.ndarray):
        a = _softmax(theta).reshape(shape)
        J, grad, _, _ = evaluate(a)
        centred = grad - np.sum(a * grad)
        return size * J, size * (a * centred).ravel()

    baseline = _grid_entropy(b, vol, m) if np.all(b > 0.0) or m >= 1.0 else math.inf
    theta0 = np.log(start.cell_masses if start is not None else b_pos).ravel()
    res = optimize.minimize(
        fun, theta0, jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 0.1 * tol / tau, "maxcor": 20},
    )
    a = _softmax(res.x).reshape(shape)
    J, grad, plan, p = evaluate(a)
    tp = tau * grad
    mean = float(np.sum(a * tp))
    residual = float(np.sqrt(np.sum(a * (tp - mean) ** 2)))
    if residual > tol:
        reason = "iteration cap" if res.nit >= max_iter else res.message
        raise ConvergenceError(f"jko_step_2d stopped ({reason}) at residual {residual:.3e}", int(res.nit), residual)

    rho_next = GridDensity.normalized(grid, a / vol)
    psi = plan.f - p
    pressure_part = tau * np.asarray(f_m_prime(rho_next.values, m))
    shift = float(np.sum(a * (pressure_part + psi)))
    psi = psi - shift
    u = pressure_part + 0.5 * grid.squared_norm()
    bmap = barycentric_map(rho_next, mu, eps, sinkhorn_tol, plan=plan, self_potential=p)
    return JkoStepResult2D(
        rho_next=rho_next, plan=plan, barycentric=bmap, psi=psi, u=u,
        objective=J, baseline_objective=baseline, optimality_residual=residual,
        iterations=int(res.nit), eps=eps,
    )


def run_scheme_2d(
    rho0: GridDensity,
    params: SchemeParams,
    K: int,
    eps: float,
    tol: float = 1e-6,
    sinkhorn_tol: float = 1e-8,
    time_offset: float = 0.0,
    max_cells: int = MAX_CELLS_PER_AXIS,
) -> SchemeTrajectory:
    if K < 1:
        raise ValueError("K must be at least 1")
    _check_regime(rho0.grid, params, max_cells)
    traj = SchemeTrajectory(params=params, grid=rho0.grid, time_offset=time_offset)
    E0 = entropy(rho0, params.m)
    traj.steps.append(TrajectoryStep(k=0, t=time_offset, rho=rho0, diagnostics=StepDiagnostics(
        entropy=E0, entropy_lagrangian=E0, w2_step=0.0, residual=0.0,
        min_rho=float(np.min(rho0.values)), max_rho=float(np.max(rho0.values)),
        mass=rho0.mass, objective=E0, iterations=0,
    )))
    rho = rho0
    for k in range(1, K + 1):
        with timed(f"jko_2d step {k}/{K}"):
            result = jko_step_2d(rho, params, eps, tol, sinkhorn_tol, max_cells=max_cells)
        E = entropy(result.rho_next, params.m)
        moved = max(result.objective - E, 0.0) * params.tau
        rho = result.rho_next
        traj.steps.append(TrajectoryStep(k=k, t=time_offset + k * params.tau, rho=rho, result=result,
                                         diagnostics=StepDiagnostics(
            entropy=E, entropy_lagrangian=E, w2_step=math.sqrt(2.0 * moved),
            residual=result.optimality_residual, min_rho=float(np.min(rho.values)),
            max_rho=float(np.max(rho.values)), mass=rho.mass, objective=result.objective,
            iterations=result.iterations,
        )))
        log.info(f"[TRACE] k={k:<4d} E={E:+.10f} res={result.optimality_residual:.2e} it={result.iterations}")
    return traj


def spectral_heat_reference(rho0: GridDensity, t: float) -> GridDensity:
    """Heat semigroup on a periodic grid by Fourier multipliers exp(-4 pi^2 |k|^2 t / L^2)."""
    grid = rho0.grid
    if not grid.domain.is_periodic:
        raise GridError("the spectral reference needs a torus")
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    freqs = [np.fft.fftfreq(n, d=1.0 / n) / L for n, L in zip(grid.n, grid.domain.lengths)]
    K2 = sum(np.meshgrid(*[k * k for k in freqs], indexing="ij"))
    values = np.real(np.fft.ifftn(np.fft.fftn(rho0.values) * np.exp(-4.0 * np.pi ** 2 * K2 * t)))
    return GridDensity.normalized(grid, np.maximum(values, 0.0))


__all__ = [
    "EntropicPlan",
    "BarycentricMap",
    "JkoStepResult2D",
    "BoundaryReport",
    "SinkhornDivergence",
    "sinkhorn",
    "sinkhorn_points",
    "sinkhorn_divergence",
    "barycentric_map",
    "boundary_behavior_check",
    "jko_step_2d",
    "run_scheme_2d",
    "spectral_heat_reference",
]
