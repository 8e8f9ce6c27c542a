import math

import numpy as np
import pytest

from numerics.domain_grid import build_grid
from numerics.entropy_profiles import GridDensity, exact_profile
from numerics.errors import GridError, RegimeError
from numerics.schemas.domain import Domain
from numerics.schemas.scheme import ProfileKind, SchemeParams
from pipelines.jko_1d import (
    energy_dissipation,
    eulerian_residual,
    jko_step_1d,
    optimality_residual,
    propagation_of_bounds,
    psi_sign_check,
    quadratic_deviation_check,
    run_scheme,
    segment_masses,
    stability_probe,
    zero_set_check,
)


@pytest.fixture(scope="module")
def gaussian_run():
    params = SchemeParams(m=1.0, tau=0.1, d=1, truncated=True)
    grid = build_grid(Domain.of("TruncatedLine", radius=16.0), 1024)
    rho0 = exact_profile(ProfileKind.GAUSSIAN_HEAT, params, 0.5, grid)
    return params, run_scheme(rho0, params, 1, tol=1e-10, N=4096)


@pytest.fixture(scope="module")
def barenblatt_step():
    params = SchemeParams(m=2.0, tau=1e-3, d=1)
    grid = build_grid(Domain.of("Interval", bounds=[(-2.0, 2.0)]), 256)
    rho0 = exact_profile(ProfileKind.BARENBLATT_PME, params, 0.5, grid)
    return params, jko_step_1d(rho0, params)


def test_segment_masses_sum_to_one():
    masses, omega = segment_masses(16)
    assert masses.size == 17
    assert masses.sum() == pytest.approx(1.0)
    assert masses[0] == pytest.approx(1.0 / 32.0)
    ring, _ = segment_masses(16, periodic=True)
    assert np.allclose(ring, 1.0 / 16.0)


def test_gaussian_step_std(gaussian_run):
    params, traj = gaussian_run
    s0, s1 = traj.steps[0].diagnostics.std, traj.steps[1].diagnostics.std
    assert s0 == pytest.approx(1.0, abs=5e-3)
    expected = 0.5 * (s0 + math.sqrt(s0 * s0 + 4.0 * params.tau))
    assert s1 == pytest.approx(expected, rel=1e-3)
    assert 0.5 * (1.0 + math.sqrt(1.4)) == pytest.approx(1.091608, abs=1e-6)


def test_gaussian_step_optimality(gaussian_run):
    params, traj = gaussian_run
    result = traj.steps[1].result
    assert result.optimality_residual <= 1e-6
    assert optimality_residual(result, params) == pytest.approx(result.optimality_residual)
    assert result.objective <= result.baseline_objective
    assert quadratic_deviation_check(result.potentials, traj.grid) <= 1e-4


def test_uniform_is_a_fixed_point_on_the_circle(torus1_grid):
    params = SchemeParams(m=1.0, tau=1e-2, d=1)
    rho = GridDensity(grid=torus1_grid, values=np.ones(64))
    result = jko_step_1d(rho, params)
    assert np.max(np.abs(result.rho_next.values - 1.0)) <= 1e-8
    assert result.w2_step <= 1e-8


def test_heat_step_damps_first_mode(torus1_grid, cosine_bump):
    tau = 1e-3
    params = SchemeParams(m=1.0, tau=tau, d=1)
    rho = cosine_bump(torus1_grid, 0.5)
    result = jko_step_1d(rho, params)
    x = torus1_grid.axis_centers(0)
    amp0 = 2.0 * np.mean(rho.values * np.cos(2.0 * np.pi * x))
    amp1 = 2.0 * np.mean(result.rho_next.values * np.cos(2.0 * np.pi * x))
    assert amp1 / amp0 == pytest.approx(1.0 / (1.0 + 4.0 * math.pi**2 * tau), abs=4e-3)
    assert result.rho_next.mass == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("m", [0.7, 1.0, 1.5])
def test_interval_step_residual(interval_grid, cosine_bump, m):
    params = SchemeParams(m=m, tau=1e-3, d=1)
    result = jko_step_1d(cosine_bump(interval_grid), params)
    assert result.optimality_residual <= 1e-5
    assert result.objective <= result.baseline_objective + 1e-12
    assert result.eulerian_residual <= 1e-4
    assert eulerian_residual(result, params) == pytest.approx(result.eulerian_residual)


def test_eulerian_residual_sees_a_tilted_potential(interval_grid, cosine_bump):
    params = SchemeParams(m=1.0, tau=1e-3, d=1)
    result = jko_step_1d(cosine_bump(interval_grid), params)
    pair = result.potentials
    tilted = pair.model_copy(update={"psi": pair.psi + 1e-3 * (pair.x - 0.5)})
    bent = result.model_copy(update={"potentials": tilted})
    assert eulerian_residual(bent, params) >= 1e-4
    assert optimality_residual(bent, params) == pytest.approx(result.optimality_residual)


def test_eulerian_residual_skips_the_support_edge(barenblatt_step):
    params, result = barenblatt_step
    assert np.any(result.rho_next.values == 0.0)
    assert result.eulerian_residual <= 1e-4


def test_projected_gradient_agrees_with_newton(cosine_bump):
    grid = build_grid(Domain.of("Interval"), 32)
    params = SchemeParams(m=2.0, tau=1e-2, d=1)
    mu = cosine_bump(grid, 0.6)
    newton = jko_step_1d(mu, params, tol=1e-9)
    pg = jko_step_1d(mu, params, tol=1e-7, method="projected_gradient")
    assert np.max(np.abs(newton.rho_next.values - pg.rho_next.values)) <= 1e-4


def test_psi_sign_for_fast_diffusion(interval_grid, cosine_bump):
    params = SchemeParams(m=0.7, tau=1e-3, d=1)
    result = jko_step_1d(cosine_bump(interval_grid), params)
    report = psi_sign_check(result, params)
    assert report.ok and report.max_value < 0.0
    with pytest.raises(RegimeError):
        psi_sign_check(result, SchemeParams(m=1.0, tau=1e-3, d=1))


def test_zero_set_for_porous_medium(barenblatt_step):
    params, result = barenblatt_step
    report = zero_set_check(result, params)
    assert report.ok
    assert report.zero_set_min_psi >= -1e-6
    assert result.optimality_residual <= 1e-5


def test_zero_set_fails_just_below_the_floor(barenblatt_step):
    params, result = barenblatt_step
    report = zero_set_check(result, params)
    shift = report.zero_set_min_psi + 1e-6 + 0.5 * report.edge_pressure_slack
    lowered = result.cells.model_copy(update={"psi": result.cells.psi - shift})
    dipped = zero_set_check(result.model_copy(update={"cells": lowered}), params)
    assert dipped.zero_set_min_psi < -1e-6
    assert dipped.zero_set_min_psi >= -1e-6 - dipped.edge_pressure_slack
    assert not dipped.ok


@pytest.mark.slow
def test_zero_set_holds_along_a_barenblatt_run():
    params = SchemeParams(m=2.0, tau=1e-3, d=1)
    grid = build_grid(Domain.of("Interval", bounds=[(-2.0, 2.0)]), 512)
    rho0 = exact_profile(ProfileKind.BARENBLATT_PME, params, 0.5, grid)
    traj = run_scheme(rho0, params, 20)
    reports = [zero_set_check(s.result, params) for s in traj.steps[1:]]
    assert all(r.ok for r in reports)
    assert min(r.zero_set_min_psi for r in reports) >= -1e-6


def test_zero_set_refuses_torus(torus1_grid, cosine_bump):
    params = SchemeParams(m=2.0, tau=1e-3, d=1)
    result = jko_step_1d(cosine_bump(torus1_grid), params)
    with pytest.raises(GridError):
        zero_set_check(result, params)


def test_trajectory_dissipates_and_keeps_bounds(torus1_grid, cosine_bump):
    params = SchemeParams(m=1.0, tau=1e-3, d=1)
    traj = run_scheme(cosine_bump(torus1_grid), params, 5)
    assert len(traj.steps) == 6
    assert traj.times() == pytest.approx(np.arange(6) * 1e-3)
    assert max(energy_dissipation(traj)) <= 1e-10
    bounds = propagation_of_bounds(traj)
    assert bounds.ok
    assert bounds.max_over_k <= bounds.initial_max * (1.0 + 1e-6)


def test_truncation_stability():
    params = SchemeParams(m=1.0, tau=0.05, d=1, truncated=True)
    seq = []
    for R in (3.0, 4.0, 5.0, 8.0):
        grid = build_grid(Domain.of("TruncatedLine", radius=R), int(32 * R))
        seq.append(exact_profile(ProfileKind.GAUSSIAN_HEAT, params, 0.5, grid))
    report = stability_probe(seq, params)
    assert len(report.gaps) == 3
    assert report.gaps[-1] < report.gaps[0]
    assert report.last_gap <= 1e-3


def test_regime_violations(interval_grid, cosine_bump):
    with pytest.raises(RegimeError):
        jko_step_1d(cosine_bump(interval_grid), SchemeParams(m=1.0, tau=1e-3, d=2))
    line = build_grid(Domain.of("TruncatedLine", radius=4.0), 64)
    x = line.axis_centers(0)
    mu = GridDensity.normalized(line, np.exp(-x * x))
    with pytest.raises(RegimeError):
        jko_step_1d(mu, SchemeParams(m=0.3, tau=1e-3, d=1))


def test_bad_tolerance(uniform_interval):
    with pytest.raises(ValueError):
        jko_step_1d(uniform_interval, SchemeParams(m=1.0, tau=1e-3, d=1), tol=0.0)
