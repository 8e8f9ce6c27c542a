import math

import numpy as np
import pytest

from numerics.domain_grid import build_grid
from numerics.entropy_profiles import GridDensity
from numerics.errors import OracleSizeError, QuantileError
from numerics.ot_1d import (
    brenier_potential_from_map,
    circle_ot,
    density_to_quantile,
    duality_gaps,
    inverse_cdf,
    monotone_map,
    pushforward_density,
    w2_atoms,
    w2_bruteforce,
    w2_quantile,
)
from numerics.schemas.domain import Domain


@pytest.fixture
def wide_grid():
    return build_grid(Domain.of("Interval", bounds=[(0.0, 2.0)]), 64)


def test_w2_between_uniform_laws(wide_grid):
    x = wide_grid.axis_centers(0)
    narrow = GridDensity(grid=wide_grid, values=np.where(x < 1.0, 1.0, 0.0))
    wide = GridDensity(grid=wide_grid, values=np.full(64, 0.5))
    w2 = w2_quantile(density_to_quantile(narrow, 4096), density_to_quantile(wide, 4096))
    assert w2 == pytest.approx(1.0 / math.sqrt(3.0), rel=1e-6)


def test_single_atoms():
    assert w2_bruteforce(np.array([0.0]), np.array([1.0])) == pytest.approx(1.0)
    assert w2_atoms(np.array([0.0]), np.array([1.0]), np.array([1.0]), np.array([1.0])) == pytest.approx(1.0)


def test_inverse_cdf_is_left_continuous_across_gaps():
    grid = build_grid(Domain.of("Interval"), 8)
    x = grid.axis_centers(0)
    rho = GridDensity.normalized(grid, np.where((x < 0.25) | (x > 0.75), 1.0, 0.0))
    q = inverse_cdf(rho, np.array([0.0, 0.5, 1.0]))
    assert q == pytest.approx([0.0, 0.25, 1.0])


def test_resolution_mismatch(uniform_interval):
    with pytest.raises(QuantileError):
        w2_quantile(density_to_quantile(uniform_interval, 16), density_to_quantile(uniform_interval, 32))


@pytest.mark.parametrize("n", [3, 6, 8])
def test_bruteforce_permutations_match_sorted_coupling(rng, n):
    a, b = rng.uniform(-1.0, 1.0, n), rng.uniform(0.0, 3.0, n)
    w = np.full(n, 1.0 / n)
    assert w2_bruteforce(a, b) == pytest.approx(w2_atoms(a, w, b, w), abs=1e-12)


def test_bruteforce_lp_on_unequal_weights(rng):
    a, b = rng.normal(size=5), rng.normal(size=9)
    wa, wb = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(9))
    assert w2_bruteforce(a, b, wa, wb) == pytest.approx(w2_atoms(a, wa, b, wb), abs=1e-8)


def test_bruteforce_cap():
    with pytest.raises(OracleSizeError):
        w2_bruteforce(np.zeros(33), np.zeros(33))


def test_brenier_potentials_satisfy_duality(cosine_bump):
    grid = build_grid(Domain.of("Interval"), 256)
    rho = GridDensity(grid=grid, values=np.ones(256))
    mu = cosine_bump(grid, 0.8)
    T = monotone_map(rho, mu)
    assert T.is_monotone()
    pair = brenier_potential_from_map(T)
    violation, graph = duality_gaps(pair, T)
    assert violation <= 1e-12
    assert graph <= 1e-3
    pushed = pushforward_density(T, rho, grid)
    assert float(np.sum(np.abs(pushed.values - mu.values)) * grid.h[0]) < 1e-2


def test_circle_transport_of_identical_laws(torus1_grid, cosine_bump):
    rho = cosine_bump(torus1_grid)
    ct = circle_ot(rho, rho)
    assert ct.cost == pytest.approx(0.0, abs=1e-8)
    assert 0.0 <= ct.theta < 1.0


def test_circle_transport_never_beats_rotation_bound(torus1_grid):
    x = torus1_grid.axis_centers(0)
    rho = GridDensity.normalized(torus1_grid, 1.0 + 0.5 * np.cos(2.0 * np.pi * x))
    mu = GridDensity.normalized(torus1_grid, 1.0 + 0.5 * np.cos(2.0 * np.pi * (x - 0.25)))
    ct = circle_ot(rho, mu)
    assert 0.0 < ct.cost <= 0.25**2 + 1e-6
    line = w2_quantile(density_to_quantile(rho, 256), density_to_quantile(mu, 256)) ** 2
    assert ct.cost <= line + 1e-6
