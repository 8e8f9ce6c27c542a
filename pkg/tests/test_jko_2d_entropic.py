import math

import numpy as np
import pytest
from scipy import optimize

from numerics.domain_grid import build_grid
from numerics.entropy_profiles import GridDensity, f_m_prime
from numerics.errors import ConvergenceError, GridError, RegimeError
from numerics.ot_1d import w2_bruteforce
from numerics.schemas.domain import Domain
from numerics.schemas.scheme import SchemeParams
from pipelines import jko_2d_entropic
from pipelines.jko_2d_entropic import (
    barycentric_map,
    boundary_behavior_check,
    jko_step_2d,
    run_scheme_2d,
    sinkhorn,
    sinkhorn_divergence,
    sinkhorn_points,
    spectral_heat_reference,
)


def _cosine_2d(grid, amplitude: float = 0.5) -> GridDensity:
    x0, x1 = grid.axis_centers(0), grid.axis_centers(1)
    values = np.multiply.outer(1.0 + amplitude * np.cos(2.0 * np.pi * x0), 1.0 + 0.2 * np.sin(2.0 * np.pi * x1))
    return GridDensity.normalized(grid, values)


@pytest.fixture
def torus2():
    return build_grid(Domain.of("Torus2"), 16)


def test_sinkhorn_marginals(torus2):
    rho = _cosine_2d(torus2)
    mu = GridDensity(grid=torus2, values=np.ones(torus2.shape))
    plan = sinkhorn(rho, mu, 1e-2, tol=1e-9)
    assert plan.marginal_error <= 1e-9
    assert plan.periodic
    assert plan.transport_cost >= 0.0


def test_self_divergence_vanishes(torus2):
    rho = _cosine_2d(torus2)
    div = sinkhorn_divergence(rho, rho, 1e-2)
    assert div.value == pytest.approx(0.0, abs=1e-8)
    assert np.max(np.abs(div.gradient - np.mean(div.gradient))) <= 1e-6


def test_entropic_cost_approaches_exact_two_atoms(rng):
    for _ in range(5):
        x, y = rng.uniform(0.0, 1.0, (2, 2)), rng.uniform(0.0, 1.0, (2, 2))
        a = np.full(2, 0.5)
        exact = 0.5 * w2_bruteforce(x, y) ** 2
        gaps = [sinkhorn_points(x, a, y, a, eps, tol=1e-12).transport_cost - exact for eps in (1e-1, 1e-2, 1e-3)]
        assert all(g1 <= g0 + 1e-12 for g0, g1 in zip(gaps[:-1], gaps[1:]))
        assert gaps[-1] >= -1e-9
        assert gaps[-1] <= 1e-2


def test_uniform_is_stationary(torus2):
    params = SchemeParams(m=1.0, tau=1e-3, d=2)
    mu = GridDensity(grid=torus2, values=np.ones(torus2.shape))
    result = jko_step_2d(mu, params, eps=1e-2)
    assert np.max(np.abs(result.rho_next.values - 1.0)) <= 1e-6
    assert result.optimality_residual <= 1e-6


@pytest.mark.parametrize("m", [1.0, 1.5])
def test_square_step_is_optimal(m):
    grid = build_grid(Domain.of("Square"), 12)
    x0 = grid.axis_centers(0)
    mu = GridDensity.normalized(grid, np.broadcast_to((1.0 + 0.4 * np.cos(np.pi * x0))[:, None], grid.shape))
    params = SchemeParams(m=m, tau=1e-2, d=2)
    result = jko_step_2d(mu, params, eps=5e-3)
    assert result.rho_next.mass == pytest.approx(1.0, abs=1e-9)
    assert result.optimality_residual <= 1e-6
    assert result.objective <= result.baseline_objective + 1e-7
    a = result.rho_next.cell_masses
    tp = params.tau * np.asarray(f_m_prime(result.rho_next.values, m)) + result.psi
    assert float(np.sum(a * tp)) == pytest.approx(0.0, abs=1e-12)
    assert result.u == pytest.approx(
        params.tau * np.asarray(f_m_prime(result.rho_next.values, m)) + 0.5 * grid.squared_norm()
    )


def test_self_map_is_identity_on_square():
    grid = build_grid(Domain.of("Square"), 16)
    x0 = grid.axis_centers(0)
    rho = GridDensity.normalized(grid, np.broadcast_to((1.0 + 0.5 * np.cos(np.pi * x0))[:, None], grid.shape))
    bmap = barycentric_map(rho, rho, 1e-2, tol=1e-10)
    assert np.max(np.abs(bmap.displacement)) <= 1e-6
    report = boundary_behavior_check(bmap, 1e-2)
    assert report.corner_err == pytest.approx(grid.h[0] / math.sqrt(2.0), abs=1e-6)
    assert report.face_err <= 1e-6


def test_boundary_check_needs_square(torus2):
    rho = _cosine_2d(torus2)
    with pytest.raises(GridError):
        boundary_behavior_check(barycentric_map(rho, rho, 1e-2))


def test_spectral_reference(torus2):
    rho0 = _cosine_2d(torus2, 0.5)
    assert spectral_heat_reference(rho0, 0.0).values == pytest.approx(rho0.values)
    t = 0.01
    ref = spectral_heat_reference(rho0, t)
    x0 = torus2.axis_centers(0)
    mode0 = np.mean(rho0.values * np.cos(2.0 * np.pi * x0)[:, None])
    mode1 = np.mean(ref.values * np.cos(2.0 * np.pi * x0)[:, None])
    assert mode1 / mode0 == pytest.approx(math.exp(-4.0 * math.pi**2 * t), rel=1e-9)
    with pytest.raises(GridError):
        spectral_heat_reference(GridDensity.normalized(build_grid(Domain.of("Square"), 8), np.ones((8, 8))), t)


def test_regime_and_size_limits(torus2):
    mu = GridDensity(grid=torus2, values=np.ones(torus2.shape))
    with pytest.raises(RegimeError):
        jko_step_2d(mu, SchemeParams(m=1.0, tau=1e-3, d=1), eps=1e-2)
    with pytest.raises(GridError):
        jko_step_2d(mu, SchemeParams(m=1.0, tau=1e-3, d=2), eps=1e-2, max_cells=8)


@pytest.mark.slow
def test_heat_run_tracks_spectral_reference():
    grid = build_grid(Domain.of("Torus2"), 32)
    params = SchemeParams(m=1.0, tau=1e-3, d=2)
    rho0 = _cosine_2d(grid)
    traj = run_scheme_2d(rho0, params, 5, eps=1e-3)
    assert len(traj.steps) == 6
    ref = spectral_heat_reference(rho0, traj.steps[-1].t)
    assert grid.integrate(np.abs(traj.steps[-1].rho.values - ref.values)) <= 5e-2


def test_early_lbfgs_stop_raises(torus2, monkeypatch):
    def stalled(fun, x0, **kwargs):
        return optimize.OptimizeResult(x=np.asarray(x0), nit=3, success=False,
                                       message="ABNORMAL_TERMINATION_IN_LNSRCH")

    monkeypatch.setattr(jko_2d_entropic.optimize, "minimize", stalled)
    params = SchemeParams(m=1.0, tau=1e-3, d=2)
    with pytest.raises(ConvergenceError, match="ABNORMAL_TERMINATION_IN_LNSRCH") as err:
        jko_step_2d(_cosine_2d(torus2), params, eps=1e-2)
    assert err.value.iterations == 3
    assert err.value.residual > 1e-6


def test_iteration_cap_raises(torus2):
    params = SchemeParams(m=1.0, tau=1e-3, d=2)
    with pytest.raises(ConvergenceError, match="iteration cap"):
        jko_step_2d(_cosine_2d(torus2), params, eps=1e-2, max_iter=1)
