"""
Exact one-step JKO minimizers in 1D, solved in Lagrangian (quantile)
coordinates, plus the scheme iterator and the optimality checks run on its
output.

Variables are the cell boundaries z = [a, Q_0 .. Q_{N-1}, b] of N+1 mass
segments (end segments carry 1/(2N), interior ones 1/N). The entropy of a
segment of width D and mass w is D f_m(w/D); the W2 term is lumped on the
nodes. The objective is convex in z and its Hessian is tridiagonal
(cyclic on Torus1).

Relies on:
    • scipy.linalg.solve_banded / scipy.sparse.linalg.spsolve for Newton steps
    • numerics.utils.isotonic.project_monotone for the projected-gradient variant
    • numerics.ot_1d for potentials and the circle cut
"""
from __future__ import annotations
import logging
import math
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy import linalg, sparse
from scipy.sparse import linalg as sparse_linalg

from numerics.domain_grid import Grid
from numerics.entropy_profiles import POSITIVITY_FLOOR, GridDensity, entropy, f_m_prime
from numerics.errors import ConvergenceError, GridError, MassDriftError, RegimeError
from numerics.ot_1d import (
    PotentialPair,
    QuantileFunction,
    brenier_potential_from_map,
    circle_ot,
    cut_for_quantiles,
    density_to_quantile,
    inverse_cdf,
    monotone_map,
    w2_quantile,
)
from numerics.schemas.scheme import SchemeParams
from numerics.utils.isotonic import project_monotone
from pipelines.utils.pipeline_utils import timed

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
NEWTON_CAP = 200
PG_CAP = 50_000
GAP_GUARD = 1e-12
ARMIJO = 1e-4
MASS_DRIFT_TOL = 1e-6
CUT_OUTER_CAP = 8
EULERIAN_BULK = 1e-2


class SolverMethod(str, Enum):

    NEWTON = "newton"
    PROJECTED_GRADIENT = "projected_gradient"


class LagrangianCells(BaseModel):
    """Mass segments of the minimizer and the potential at their centres."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    nodes: np.ndarray = Field(..., description="Segment boundaries z")
    targets: np.ndarray = Field(..., description="Images of the nodes under the optimal map")
    masses: np.ndarray = Field(..., description="Mass per segment")
    node_weights: np.ndarray = Field(..., description="Lumped W2 weight per node")
    psi: np.ndarray = Field(..., description="Kantorovich potential at segment centres")
    period: float | None = None

    @property
    def gaps(self) -> np.ndarray:
        return _gaps(self.nodes, self.period)

    @property
    def centres(self) -> np.ndarray:
        return self.nodes[: self.gaps.size] + 0.5 * self.gaps

    @property
    def density(self) -> np.ndarray:
        return self.masses / self.gaps

    @property
    def displacement(self) -> np.ndarray:
        return self.nodes - self.targets

    def pressure(self, m: float) -> np.ndarray:
        return np.asarray(f_m_prime(self.density, m))


class JkoStepResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rho_next: GridDensity
    quantile: QuantileFunction
    potentials: PotentialPair
    objective: float
    baseline_objective: float = Field(..., description="Objective at the trivial candidate eta = mu")
    optimality_residual: float
    eulerian_residual: float = Field(0.0, description="Same residual from the grid density and the grid potential")
    iterations: int
    stationarity: float
    cells: LagrangianCells
    entropy_lagrangian: float
    w2_step: float
    theta: float | None = Field(None, description="Circle cut of the step on Torus1")


class StepDiagnostics(BaseModel):
    entropy: float
    entropy_lagrangian: float
    w2_step: float
    residual: float
    eulerian_residual: float | None = Field(None, description="Residual on the Eulerian grid (1D only)")
    min_rho: float
    max_rho: float
    mass: float
    objective: float
    iterations: int
    std: float | None = Field(None, description="Quantile standard deviation (1D only)")


class TrajectoryStep(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    k: int
    t: float
    rho: GridDensity
    diagnostics: StepDiagnostics
    result: Any = Field(None, description="JkoStepResult in 1D, JkoStepResult2D in 2D")


class SchemeTrajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: SchemeParams
    grid: Grid
    time_offset: float = 0.0
    steps: list[TrajectoryStep] = Field(default_factory=list)

    def densities(self) -> list[GridDensity]:
        return [s.rho for s in self.steps]

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.steps])


# ── discrete objective ──────────────────────────────────────────────


def _gaps(z: np.ndarray, period: float | None) -> np.ndarray:
    if period is None:
        return np.diff(z)
    return np.append(np.diff(z), z[0] + period - z[-1])


def segment_masses(N: int, periodic: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """(segment masses, node weights) for N quantile nodes."""
    if periodic:
        return np.full(N, 1.0 / N), np.full(N, 1.0 / N)
    masses = np.full(N + 1, 1.0 / N)
    masses[0] = masses[-1] = 0.5 / N
    omega = np.full(N + 2, 1.0 / N)
    omega[0] = omega[-1] = 0.25 / N
    omega[1] = omega[-2] = 0.75 / N
    return masses, omega


def _segment_terms(gaps: np.ndarray, masses: np.ndarray, m: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entropy of each segment and its first and second derivative in the gap."""
    r = masses / gaps
    if m == 1.0:
        return masses * np.log(r), -r, r / gaps
    rm = np.power(r, m)
    return masses * np.power(r, m - 1.0) / (m - 1.0), -rm, m * rm / gaps


def lagrangian_entropy(z: np.ndarray, masses: np.ndarray, m: float, period: float | None = None) -> float:
    gaps = _gaps(z, period)
    if np.any(gaps <= 0.0):
        return math.inf
    return float(np.sum(_segment_terms(gaps, masses, m)[0]))


def lagrangian_objective(
    z: np.ndarray,
    targets: np.ndarray,
    masses: np.ndarray,
    omega: np.ndarray,
    m: float,
    tau: float,
    period: float | None = None,
) -> float:
    """sum_j D_j f_m(w_j / D_j) + (1/2 tau) sum_k omega_k (z_k - target_k)^2."""
    d = z - targets
    return lagrangian_entropy(z, masses, m, period) + float(np.sum(omega * d * d)) / (2.0 * tau)


def _gradient(z, targets, masses, omega, m, tau, period):
    gaps = _gaps(z, period)
    _, e1, e2 = _segment_terms(gaps, masses, m)
    g = omega * (z - targets) / tau
    if period is None:
        g[1:] += e1
        g[:-1] -= e1
    else:
        g += np.roll(e1, 1) - e1
    return g, gaps, e2


# ── bounded interval ────────────────────────────────────────────────


def _fraction_to_boundary(gaps: np.ndarray, dgap: np.ndarray, gap_min: float) -> float:
    shrink = dgap < 0.0
    if not np.any(shrink):
        return 1.0
    room = np.maximum(gaps[shrink] - gap_min, 0.0)
    return float(min(1.0, np.min(0.995 * room / (-dgap[shrink]))))


def _interval_state(mu: GridDensity, N: int) -> np.ndarray:
    s = (np.arange(N) + 0.5) / N
    ends = inverse_cdf(mu, np.array([0.0, 1.0]))
    return np.concatenate([[ends[0]], inverse_cdf(mu, s), [ends[1]]])


def _prepare_start(z_mu: np.ndarray, omega: np.ndarray, lo: float, hi: float, gap_min: float, snap: bool):
    z = z_mu.copy()
    if snap:
        z[0], z[-1] = lo, hi
    if np.any(np.diff(z) < gap_min):
        z = project_monotone(z, weights=omega, lower=lo, upper=hi, min_gap=gap_min)
        if snap:
            z[0], z[-1] = lo, hi
    return z


def _solve_interval_newton(z0, targets, masses, omega, params, lo, hi, gap_min, snap, tol):
    m, tau = params.m, params.tau
    z = z0.copy()

    def objective(v: np.ndarray) -> float:
        return lagrangian_objective(v, targets, masses, omega, m, tau)

    meas = math.inf
    for it in range(1, NEWTON_CAP + 1):
        g, gaps, e2 = _gradient(z, targets, masses, omega, m, tau, None)
        fix_a = snap or (z[0] <= lo and g[0] > 0.0)
        fix_b = snap or (z[-1] >= hi and g[-1] < 0.0)
        f0, f1 = int(fix_a), z.size - int(fix_b)
        meas = tau * float(np.max(np.abs(g[f0:f1] / omega[f0:f1])))
        if meas <= tol:
            return z, it - 1, meas

        diag = omega / tau
        diag[1:] += e2
        diag[:-1] += e2
        off = -e2
        n_free = f1 - f0
        ab = np.zeros((3, n_free))
        ab[1] = diag[f0:f1]
        ab[0, 1:] = off[f0:f1 - 1]
        ab[2, :-1] = off[f0:f1 - 1]
        p = np.zeros_like(z)
        p[f0:f1] = linalg.solve_banded((1, 1), ab, -g[f0:f1])

        alpha = _fraction_to_boundary(gaps, np.diff(p), gap_min)
        G0 = objective(z)
        slope = float(g @ p)
        accepted = False
        while alpha > 1e-16:
            zt = z + alpha * p
            zt[0] = max(zt[0], lo)
            zt[-1] = min(zt[-1], hi)
            Gt = objective(zt)
            tiny = -slope * alpha <= 1e-15 * max(1.0, abs(G0))
            if Gt <= G0 + ARMIJO * float(g @ (zt - z)) or (tiny and Gt <= G0 + 1e-13 * max(1.0, abs(G0))):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if meas <= 100.0 * tol:
                log.warning(f"[WARN] line search stalled at stationarity {meas:.3e}; accepting")
                return z, it, meas
            raise ConvergenceError("Newton line search failed", iterations=it, residual=meas)
        z = zt
    raise ConvergenceError(f"Newton did not reach {tol:g} in {NEWTON_CAP} iterations", NEWTON_CAP, meas)


def _solve_interval_pg(z0, targets, masses, omega, params, lo, hi, gap_min, snap, tol):
    """Barzilai-Borwein projected gradient in the omega-weighted metric."""
    m, tau = params.m, params.tau
    z = z0.copy()

    def project(v: np.ndarray) -> np.ndarray:
        out = project_monotone(v, weights=omega, lower=lo, upper=hi, min_gap=gap_min)
        if snap:
            out[0], out[-1] = lo, hi
        return out

    def objective(v: np.ndarray) -> float:
        return lagrangian_objective(v, targets, masses, omega, m, tau)

    g, _, _ = _gradient(z, targets, masses, omega, m, tau, None)
    step = tau
    G = objective(z)
    meas = math.inf
    for it in range(1, PG_CAP + 1):
        meas = float(np.max(np.abs(z - project(z - tau * g / omega))))
        if meas <= tol:
            return z, it - 1, meas
        alpha = step
        while True:
            zt = project(z - alpha * g / omega)
            Gt = objective(zt)
            if Gt <= G + ARMIJO * float(g @ (zt - z)) or alpha < 1e-20:
                break
            alpha *= 0.5
        gt, _, _ = _gradient(zt, targets, masses, omega, m, tau, None)
        s, y = zt - z, gt - g
        sy = float(s @ y)
        step = float(s @ (omega * s)) / sy if sy > 0.0 else tau
        step = min(max(step, 1e-12 * tau), 1e6 * tau)
        z, g, G = zt, gt, Gt
    raise ConvergenceError(f"projected gradient did not reach {tol:g} in {PG_CAP} iterations", PG_CAP, meas)


# ── torus ───────────────────────────────────────────────────────────


def _node_quantile(Q: np.ndarray, L: float) -> Callable[[np.ndarray], np.ndarray]:
    """Lifted piecewise-linear quantile through nodes Q at s_j, with Q(s + 1) = Q(s) + L."""
    N = Q.size
    s = (np.arange(N) + 0.5) / N
    s_ext = np.concatenate([[s[-1] - 1.0], s, [s[0] + 1.0]])
    q_ext = np.concatenate([[Q[-1] - L], Q, [Q[0] + L]])

    def quantile(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        k = np.floor(t)
        return np.interp(t - k, s_ext, q_ext) + k * L

    return quantile


def _solve_torus_newton(Q0, targets, params, L, gap_min, tol):
    m, tau = params.m, params.tau
    N = Q0.size
    masses, omega = segment_masses(N, periodic=True)
    z = Q0.copy()

    def objective(v: np.ndarray) -> float:
        return lagrangian_objective(v, targets, masses, omega, m, tau, L)

    meas = math.inf
    for it in range(1, NEWTON_CAP + 1):
        g, gaps, e2 = _gradient(z, targets, masses, omega, m, tau, L)
        meas = tau * float(np.max(np.abs(g / omega)))
        if meas <= tol:
            return z, it - 1, meas
        diag = omega / tau + e2 + np.roll(e2, 1)
        off = -e2[:-1]
        H = sparse.diags([off, diag, off], [-1, 0, 1], shape=(N, N), format="lil")
        H[0, N - 1] += -e2[-1]
        H[N - 1, 0] += -e2[-1]
        p = sparse_linalg.spsolve(H.tocsc(), -g)

        alpha = _fraction_to_boundary(gaps, _gaps(p, 0.0), gap_min)
        G0 = objective(z)
        slope = float(g @ p)
        accepted = False
        while alpha > 1e-16:
            zt = z + alpha * p
            Gt = objective(zt)
            tiny = -slope * alpha <= 1e-15 * max(1.0, abs(G0))
            if Gt <= G0 + ARMIJO * alpha * slope or (tiny and Gt <= G0 + 1e-13 * max(1.0, abs(G0))):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if meas <= 100.0 * tol:
                return z, it, meas
            raise ConvergenceError("torus Newton line search failed", iterations=it, residual=meas)
        z = zt
    raise ConvergenceError(f"torus Newton did not reach {tol:g} in {NEWTON_CAP} iterations", NEWTON_CAP, meas)


def _torus_density(Q: np.ndarray, grid: Grid) -> tuple[np.ndarray, float]:
    lo, hi = grid.domain.bounds[0]
    L = hi - lo
    N = Q.size
    s = (np.arange(N) + 0.5) / N
    shift = math.floor((Q[0] - lo) / L)
    Qn = Q - shift * L
    ks = np.arange(-2, 3)
    z_ext = (Qn[None, :] + L * ks[:, None]).ravel()
    s_ext = (s[None, :] + ks[:, None]).ravel()
    F = np.interp(grid.axis_edges(0), z_ext, s_ext)
    masses = np.maximum(np.diff(F), 0.0)
    return masses, float(np.sum(masses))


# ── potentials on Lagrangian cells ──────────────────────────────────


def _secant_mean(a: np.ndarray, b: np.ndarray, m: float) -> np.ndarray:
    """(b^m - a^m) / (f'_m(b) - f'_m(a)), a mean of a and b (logarithmic mean for m = 1)."""
    lr = np.log(b) - np.log(a)
    small = np.abs(lr) < 1e-12
    safe = np.where(small, 1.0, lr)
    if m == 1.0:
        ratio = np.expm1(safe) / safe
    else:
        ratio = (m - 1.0) / m * np.expm1(m * safe) / np.expm1((m - 1.0) * safe)
    return np.where(small, np.sqrt(a * b), a * ratio)


def _cells_psi(density: np.ndarray, displacement: np.ndarray, omega: np.ndarray, m: float) -> np.ndarray:
    """psi at segment centres from psi' = x - T(x), integrated over the dual mesh.

    The spacing between neighbouring centres is taken as omega_k / M_k, with
    M_k the secant mean of the two cell densities; in this quadrature the
    discrete optimality system reads tau f'_m(rho) + psi = const.
    """
    # node k sits between segments k-1 and k (the closing torus node is skipped)
    inner = slice(1, density.size)
    inc = displacement[inner] * omega[inner] / _secant_mean(density[:-1], density[1:], m)
    return np.concatenate([[0.0], np.cumsum(inc)])


def _normalization(values: np.ndarray, weights: np.ndarray, params: SchemeParams) -> float:
    """Additive constant c such that tau f'(rho) + psi - c is normalized."""
    if params.m > 1.0:
        return float(np.min(values))
    return float(np.sum(weights * values) / np.sum(weights))


def _eulerian_shift(rho: GridDensity, pair: PotentialPair, params: SchemeParams) -> float:
    v = rho.values
    live = v > 10.0 * POSITIVITY_FLOOR
    tp = params.tau * np.asarray(f_m_prime(v[live], params.m)) + pair.psi[live]
    return _normalization(tp, rho.cell_masses[live], params)


# ── steps ───────────────────────────────────────────────────────────


def _check_regime(grid: Grid, params: SchemeParams) -> None:
    if grid.d != 1 or params.d != 1:
        raise RegimeError("jko_1d needs d = 1 parameters on a one-dimensional grid")
    if grid.domain.is_truncated and not params.truncated:
        try:
            SchemeParams(m=params.m, tau=params.tau, d=params.d, truncated=True)
        except ValidationError as err:
            raise RegimeError(str(err)) from err


def _quantile_std(Q: np.ndarray) -> float:
    return float(np.sqrt(max(np.mean(Q * Q) - np.mean(Q) ** 2, 0.0)))


def _interval_step(
    z_mu: np.ndarray, mu: GridDensity, params: SchemeParams, tol: float, method: SolverMethod
) -> JkoStepResult:
    grid = mu.grid
    lo, hi = grid.domain.bounds[0]
    N = z_mu.size - 2
    masses, omega = segment_masses(N)
    gap_min = GAP_GUARD * grid.domain.diameter
    snap = params.m <= 1.0
    z0 = _prepare_start(z_mu, omega, lo, hi, gap_min, snap)

    solver = _solve_interval_newton if method is SolverMethod.NEWTON else _solve_interval_pg
    z, iterations, stat = solver(z0, z_mu, masses, omega, params, lo, hi, gap_min, snap, tol)

    knots_s = np.concatenate([[0.0], (np.arange(N) + 0.5) / N, [1.0]])
    F = np.interp(grid.axis_edges(0), z, knots_s, left=0.0, right=1.0)
    cell_mass = np.maximum(np.diff(F), 0.0)
    total = float(np.sum(cell_mass))
    if abs(total - 1.0) > MASS_DRIFT_TOL:
        raise MassDriftError(f"step mass {total:.12g} drifted by more than {MASS_DRIFT_TOL}")
    values = cell_mass / grid.cell_volume
    if params.m <= 1.0:
        values = np.maximum(values, POSITIVITY_FLOOR)
    rho_next = GridDensity.normalized(grid, values)

    density = masses / np.diff(z)
    disp = z - z_mu
    psi_cells = _cells_psi(density, disp, omega, params.m)
    tp = params.tau * np.asarray(f_m_prime(density, params.m)) + psi_cells
    psi_cells = psi_cells - _normalization(tp, masses, params)
    cells = LagrangianCells(nodes=z, targets=z_mu, masses=masses, node_weights=omega, psi=psi_cells)

    pair = brenier_potential_from_map(monotone_map(rho_next, mu))
    pair = pair.shifted(_eulerian_shift(rho_next, pair, params))

    E_lag = lagrangian_entropy(z, masses, params.m)
    objective = lagrangian_objective(z, z_mu, masses, omega, params.m, params.tau)
    baseline = lagrangian_entropy(z_mu, masses, params.m) if np.all(np.diff(z_mu) > 0.0) else math.inf
    quantile = QuantileFunction(samples=z[1:-1].copy(), lo=lo, hi=hi, support=(float(z[0]), float(z[-1])))
    result = JkoStepResult(
        rho_next=rho_next,
        quantile=quantile,
        potentials=pair,
        objective=objective,
        baseline_objective=baseline,
        optimality_residual=0.0,
        iterations=iterations,
        stationarity=stat,
        cells=cells,
        entropy_lagrangian=E_lag,
        w2_step=float(np.sqrt(np.sum(omega * disp * disp))),
    )
    return result.model_copy(update={
        "optimality_residual": optimality_residual(result, params),
        "eulerian_residual": eulerian_residual(result, params),
    })


def _torus_step(
    Q_mu: np.ndarray, mu: GridDensity, params: SchemeParams, tol: float
) -> JkoStepResult:
    grid = mu.grid
    lo, hi = grid.domain.bounds[0]
    L = hi - lo
    N = Q_mu.size
    masses, omega = segment_masses(N, periodic=True)
    gap_min = GAP_GUARD * L
    target_of = _node_quantile(Q_mu, L)
    s = (np.arange(N) + 0.5) / N

    Q = Q_mu.copy()
    theta, _, shift = cut_for_quantiles(Q, target_of, L)
    iterations, stat = 0, math.inf
    for outer in range(CUT_OUTER_CAP):
        targets = target_of(s + theta) + shift
        Q, its, stat = _solve_torus_newton(Q, targets, params, L, gap_min, tol)
        iterations += its
        new_theta, _, new_shift = cut_for_quantiles(Q, target_of, L)
        moved = abs((new_theta - theta + 0.5) % 1.0 - 0.5)
        if moved < 1e-10 and new_shift == shift:
            break
        theta, shift = new_theta, new_shift
        log.debug(f"[TRACE] circle cut moved by {moved:.3e} (outer {outer + 1})")
    else:
        log.warning(f"[WARN] circle cut still moving after {CUT_OUTER_CAP} outer iterations")
    targets = target_of(s + theta) + shift

    cell_mass, total = _torus_density(Q, grid)
    if abs(total - 1.0) > MASS_DRIFT_TOL:
        raise MassDriftError(f"step mass {total:.12g} drifted by more than {MASS_DRIFT_TOL}")
    values = cell_mass / grid.cell_volume
    if params.m <= 1.0:
        values = np.maximum(values, POSITIVITY_FLOOR)
    rho_next = GridDensity.normalized(grid, values)

    density = masses / _gaps(Q, L)
    disp = Q - targets
    psi_cells = _cells_psi(density, disp, omega, params.m)
    tp = params.tau * np.asarray(f_m_prime(density, params.m)) + psi_cells
    psi_cells = psi_cells - _normalization(tp, masses, params)
    cells = LagrangianCells(nodes=Q, targets=targets, masses=masses, node_weights=omega, psi=psi_cells, period=L)

    transport = circle_ot(rho_next, mu)
    pair = transport.potentials.shifted(_eulerian_shift(rho_next, transport.potentials, params))

    E_lag = lagrangian_entropy(Q, masses, params.m, L)
    objective = lagrangian_objective(Q, targets, masses, omega, params.m, params.tau, L)
    result = JkoStepResult(
        rho_next=rho_next,
        quantile=density_to_quantile(rho_next, N),
        potentials=pair,
        objective=objective,
        baseline_objective=lagrangian_entropy(Q_mu, masses, params.m, L),
        optimality_residual=0.0,
        iterations=iterations,
        stationarity=stat,
        cells=cells,
        entropy_lagrangian=E_lag,
        w2_step=float(np.sqrt(np.sum(omega * disp * disp))),
        theta=theta,
    )
    return result.model_copy(update={
        "optimality_residual": optimality_residual(result, params),
        "eulerian_residual": eulerian_residual(result, params),
    })


def jko_step_1d(
    mu: GridDensity,
    params: SchemeParams,
    tol: float = DEFAULT_TOL,
    method: SolverMethod | str = SolverMethod.NEWTON,
    N: int | None = None,
) -> JkoStepResult:
    """argmin_eta E_m[eta] + W2^2(eta, mu)/(2 tau) over densities on a 1D grid."""
    _check_regime(mu.grid, params)
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    if mu.grid.domain.is_periodic:
        return jko_step_torus1(mu, params, tol, N)
    N = 4 * mu.grid.n[0] if N is None else int(N)
    with timed("jko_step_1d"):
        return _interval_step(_interval_state(mu, N), mu, params, tol, SolverMethod(method))


def jko_step_torus1(
    mu: GridDensity, params: SchemeParams, tol: float = DEFAULT_TOL, N: int | None = None
) -> JkoStepResult:
    """JKO step on the circle: convex solve for a fixed cut, outer loop over the cut."""
    _check_regime(mu.grid, params)
    if not mu.grid.domain.is_periodic:
        raise GridError("jko_step_torus1 needs a Torus1 grid")
    N = 4 * mu.grid.n[0] if N is None else int(N)
    s = (np.arange(N) + 0.5) / N
    with timed("jko_step_torus1"):
        return _torus_step(inverse_cdf(mu, s), mu, params, tol)


# ── optimality checks ───────────────────────────────────────────────


def optimality_residual(result: JkoStepResult, params: SchemeParams) -> float:
    """Mass-weighted sd of tau f'_m(rho) + psi over the Lagrangian cells.

    For m > 1 only cells with rho > 10 * floor enter.
    """
    cells = result.cells
    rho = cells.density
    live = rho > 10.0 * POSITIVITY_FLOOR
    v = params.tau * cells.pressure(params.m)[live] + cells.psi[live]
    w = cells.masses[live]
    mean = float(np.sum(w * v) / np.sum(w))
    return float(np.sqrt(np.sum(w * (v - mean) ** 2) / np.sum(w)))


def eulerian_residual(result: JkoStepResult, params: SchemeParams) -> float:
    """Mass-weighted sd of tau f'_m(rho) + psi on grid cells, psi the grid potential.

    Only the bulk enters: cells with rho >= EULERIAN_BULK * max rho whose
    neighbours are in the bulk too (cells cut by the support edge drop out).
    """
    rho = result.rho_next
    live = rho.values >= max(EULERIAN_BULK * float(np.max(rho.values)), 10.0 * POSITIVITY_FLOOR)
    inner = live.copy()
    if rho.grid.domain.is_periodic:
        inner &= np.roll(live, 1) & np.roll(live, -1)
    else:
        inner[1:] &= live[:-1]
        inner[:-1] &= live[1:]
    if not inner.any():
        return 0.0
    v = params.tau * np.asarray(f_m_prime(rho.values[inner], params.m)) + result.potentials.psi[inner]
    w = rho.cell_masses[inner]
    mean = float(np.sum(w * v) / np.sum(w))
    return float(np.sqrt(np.sum(w * (v - mean) ** 2) / np.sum(w)))


class ZeroSetReport(BaseModel):
    zero_set_min_psi: float = Field(..., description="min of the normalized psi on {rho = 0}")
    edge_density: tuple[float, float] = Field(..., description="rho extrapolated to the two support ends")
    edge_pressure_slack: float = Field(..., description="tau f'_m at the outermost cells (diagnostic only)")
    ok: bool


def _edge_density(edges: np.ndarray, averages: np.ndarray, at: float) -> float:
    """Value at `at` of the polynomial whose means over [edges[i], edges[i+1]] are `averages`."""
    lo, hi = edges[:-1] - at, edges[1:] - at
    A = np.stack([(hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo)) for k in range(averages.size)], axis=1)
    return float(linalg.solve(A, averages)[0])


def zero_set_check(result: JkoStepResult, params: SchemeParams, tol: float = 1e-6) -> ZeroSetReport:
    """For m > 1: the normalized psi is nonnegative off the support ([-psi]_+ = tau f'_m(rho)).

    At a support end psi is the cell value of tau f'_m(rho) + psi minus tau f'_m
    of the density extrapolated to the end (quadratic in the three edge cell
    means). Off the support T is constant and psi continues as a parabola.
    """
    if params.m <= 1.0:
        raise RegimeError("the zero-set condition concerns m > 1")
    cells = result.cells
    if cells.period is not None:
        raise GridError("zero_set_check runs on bounded intervals")
    z, zt = cells.nodes, cells.targets
    rho, p = cells.density, cells.pressure(params.m)
    k = min(3, rho.size)
    rho_a = max(_edge_density(z[: k + 1], rho[:k], z[0]), 0.0)
    rho_b = max(_edge_density(z[-k - 1:], rho[-k:], z[-1]), 0.0)
    psi_a = cells.psi[0] + params.tau * (p[0] - float(f_m_prime(rho_a, params.m)))
    psi_b = cells.psi[-1] + params.tau * (p[-1] - float(f_m_prime(rho_b, params.m)))
    a, b = z[0], z[-1]
    grid = result.rho_next.grid
    lo, hi = grid.domain.bounds[0]
    x = grid.axis_centers(0)
    left, right = x[x < a], x[x > b]
    # a support end against a wall is not a free boundary
    ends = [v for v, free in ((psi_a, a - lo > GAP_GUARD), (psi_b, hi - b > GAP_GUARD)) if free]
    outside = np.concatenate([
        psi_a + 0.5 * ((left - zt[0]) ** 2 - (a - zt[0]) ** 2),
        psi_b + 0.5 * ((right - zt[-1]) ** 2 - (b - zt[-1]) ** 2),
        ends,
    ])
    slack = params.tau * float(max(p[0], p[-1]))
    low = float(np.min(outside)) if outside.size else 0.0
    if low < -tol:
        log.warning(f"[WARN] psi dips to {low:.3e} off the support (edge rho {rho_a:.3e}, {rho_b:.3e})")
    return ZeroSetReport(zero_set_min_psi=low, edge_density=(rho_a, rho_b), edge_pressure_slack=slack,
                         ok=low >= -tol)


class PsiSignReport(BaseModel):
    max_value: float = Field(..., description="max over cells of -psi after normalization")
    ok: bool


def psi_sign_check(result: JkoStepResult, params: SchemeParams) -> PsiSignReport:
    """For m < 1: the potential tied to tau f'_m(rho) = -psi is strictly negative everywhere.

    With T = x - grad psi, tau f'_m(rho) + psi = 0 after normalization, so the
    negative quantity is -psi = tau f'_m(rho) < 0.
    """
    if params.m >= 1.0:
        raise RegimeError("the sign condition concerns m < 1")
    top = float(np.max(-result.cells.psi))
    return PsiSignReport(max_value=top, ok=top < 0.0)


def quadratic_deviation_check(potentials: PotentialPair, grid: Grid) -> float:
    """max_x psi(x) - psi(x0) - |x - x0|^2/2 with x0 the minimizer of psi.

    x0 is located as the zero crossing of the piecewise-linear psi', so psi(x0)
    is exact; with no crossing the sampled argmin is used.
    """
    x, psi = potentials.x, potentials.psi
    g = potentials.grad_psi if potentials.grad_psi is not None else np.gradient(psi, x)
    cross = np.nonzero((g[:-1] <= 0.0) & (g[1:] > 0.0))[0]
    if cross.size:
        gi, gj = g[cross], g[cross + 1]
        x0s = x[cross] - gi * (x[cross + 1] - x[cross]) / (gj - gi)
        psi0s = psi[cross] + 0.5 * (x0s - x[cross]) * gi
        k = int(np.argmin(psi0s))
        x0, psi0 = float(x0s[k]), float(psi0s[k])
    else:
        k = int(np.argmin(psi))
        x0, psi0 = float(x[k]), float(psi[k])
    if psi0 > float(np.min(psi)):
        k = int(np.argmin(psi))
        x0, psi0 = float(x[k]), float(psi[k])
    diff = x - x0
    if potentials.period is not None:
        L = potentials.period
        diff = diff - L * np.round(diff / L)
    return float(np.max(psi - psi0 - 0.5 * diff * diff))


# ── trajectories ────────────────────────────────────────────────────


def _diagnostics(rho: GridDensity, params: SchemeParams, result: JkoStepResult | None,
                 entropy_lag: float, std: float, mass: float) -> StepDiagnostics:
    return StepDiagnostics(
        entropy=entropy(rho, params.m),
        entropy_lagrangian=entropy_lag,
        w2_step=0.0 if result is None else result.w2_step,
        residual=0.0 if result is None else result.optimality_residual,
        eulerian_residual=0.0 if result is None else result.eulerian_residual,
        min_rho=float(np.min(rho.values)),
        max_rho=float(np.max(rho.values)),
        mass=mass,
        objective=entropy_lag if result is None else result.objective,
        iterations=0 if result is None else result.iterations,
        std=std,
    )


def run_scheme(
    rho0: GridDensity,
    params: SchemeParams,
    K: int,
    tol: float = DEFAULT_TOL,
    method: SolverMethod | str = SolverMethod.NEWTON,
    N: int | None = None,
    time_offset: float = 0.0,
) -> SchemeTrajectory:
    """Iterate the 1D JKO step K times, carrying the Lagrangian nodes between steps."""
    if K < 1:
        raise ValueError("K must be at least 1")
    _check_regime(rho0.grid, params)
    grid = rho0.grid
    periodic = grid.domain.is_periodic
    N = 4 * grid.n[0] if N is None else int(N)
    method = SolverMethod(method)
    traj = SchemeTrajectory(params=params, grid=grid, time_offset=time_offset)

    if periodic:
        s = (np.arange(N) + 0.5) / N
        state = inverse_cdf(rho0, s)
        masses, _ = segment_masses(N, periodic=True)
        L = grid.domain.lengths[0]
        E0 = lagrangian_entropy(state, masses, params.m, L)
        std0 = _quantile_std(state)
    else:
        state = _interval_state(rho0, N)
        masses, _ = segment_masses(N)
        E0 = lagrangian_entropy(state, masses, params.m)
        std0 = _quantile_std(state[1:-1])
    traj.steps.append(TrajectoryStep(
        k=0, t=time_offset, rho=rho0,
        diagnostics=_diagnostics(rho0, params, None, E0, std0, rho0.mass),
    ))

    rho = rho0
    for k in range(1, K + 1):
        with timed(f"jko_1d step {k}/{K}"):
            if periodic:
                result = _torus_step(state, rho, params, tol)
                state = result.cells.nodes
                std = _quantile_std(state)
            else:
                result = _interval_step(state, rho, params, tol, method)
                state = result.cells.nodes
                std = _quantile_std(state[1:-1])
        rho = result.rho_next
        traj.steps.append(TrajectoryStep(
            k=k, t=time_offset + k * params.tau, rho=rho, result=result,
            diagnostics=_diagnostics(rho, params, result, result.entropy_lagrangian, std, rho.mass),
        ))
        log.info(
            f"[TRACE] k={k:<4d} E={result.entropy_lagrangian:+.10f} W2={result.w2_step:.3e} "
            f"res={result.optimality_residual:.2e} it={result.iterations}"
        )
    return traj


def energy_dissipation(traj: SchemeTrajectory) -> list[float]:
    """Per step E[rho_{k+1}] + W2^2/(2 tau) - E[rho_k] in the scheme's own discretization (<= 0)."""
    out = []
    for prev, step in zip(traj.steps[:-1], traj.steps[1:]):
        out.append(step.diagnostics.objective - prev.diagnostics.entropy_lagrangian)
    return out


class BoundsReport(BaseModel):
    initial_min: float
    initial_max: float
    min_over_k: float
    max_over_k: float
    ok: bool


def propagation_of_bounds(traj: SchemeTrajectory, slack: float = 1e-6) -> BoundsReport:
    """eps <= rho_0 <= 1/eps should persist along the scheme."""
    lo0 = traj.steps[0].diagnostics.min_rho
    hi0 = traj.steps[0].diagnostics.max_rho
    lo = min(s.diagnostics.min_rho for s in traj.steps)
    hi = max(s.diagnostics.max_rho for s in traj.steps)
    ok = lo >= lo0 - slack * max(1.0, lo0) and hi <= hi0 + slack * max(1.0, hi0)
    return BoundsReport(initial_min=lo0, initial_max=hi0, min_over_k=lo, max_over_k=hi, ok=ok)


class StabilityReport(BaseModel):
    gaps: list[float] = Field(..., description="W2 between each step and the reference step")
    last_gap: float
    monotone: bool


def stability_probe(
    mu_seq: Sequence[GridDensity],
    params: SchemeParams,
    reference: GridDensity | None = None,
    tol: float = DEFAULT_TOL,
) -> StabilityReport:
    """W2 distances between one-step minimizers from approximating data and the reference minimizer.

    Without an explicit reference the last element of `mu_seq` plays that role
    (the biggest box of a truncation sequence).
    """
    seq = list(mu_seq)
    if reference is None:
        if len(seq) < 2:
            raise ValueError("need at least two densities when no reference is given")
        reference, seq = seq[-1], seq[:-1]
    N = 4 * max(max(mu.grid.n[0] for mu in seq), reference.grid.n[0])
    ref = density_to_quantile(jko_step_1d(reference, params, tol).rho_next, N)
    gaps = [w2_quantile(density_to_quantile(jko_step_1d(mu, params, tol).rho_next, N), ref) for mu in seq]
    monotone = all(b <= a + 1e-12 for a, b in zip(gaps[:-1], gaps[1:]))
    log.info(f"[CHECK] stability gaps {['%.3e' % g for g in gaps]} monotone={monotone}")
    return StabilityReport(gaps=gaps, last_gap=gaps[-1], monotone=monotone)


__all__ = [
    "SolverMethod",
    "LagrangianCells",
    "JkoStepResult",
    "StepDiagnostics",
    "TrajectoryStep",
    "SchemeTrajectory",
    "ZeroSetReport",
    "PsiSignReport",
    "BoundsReport",
    "StabilityReport",
    "segment_masses",
    "lagrangian_entropy",
    "lagrangian_objective",
    "jko_step_1d",
    "jko_step_torus1",
    "optimality_residual",
    "zero_set_check",
    "psi_sign_check",
    "quadratic_deviation_check",
    "run_scheme",
    "energy_dissipation",
    "propagation_of_bounds",
    "stability_probe",
]
