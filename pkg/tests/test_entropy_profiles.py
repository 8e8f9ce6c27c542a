import math

import numpy as np
import pytest
from pydantic import ValidationError

from numerics.domain_grid import build_grid
from numerics.entropy_profiles import (
    GridDensity,
    ab_constant,
    barenblatt_support_radius,
    conjugate_constant_report,
    entropy,
    entropy_scaling_check,
    exact_pressure_laplacian,
    exact_profile,
    f_m,
    f_m_conjugate,
    f_m_prime,
    pressure_values,
    profile_truncation_radius,
)
from numerics.errors import EntropyDomainError, GridError, RegimeError
from numerics.schemas.domain import Domain
from numerics.schemas.scheme import ProfileKind, SchemeParams


def test_f_m_values():
    assert f_m(3.0, 2.0) == pytest.approx(9.0)
    assert f_m(4.0, 0.5) == pytest.approx(-4.0)
    assert f_m(math.e, 1.0) == pytest.approx(math.e)
    assert f_m(0.0, 1.0) == 0.0
    assert f_m(0.0, 2.0) == 0.0


def test_f_m_rejects_zero_below_one():
    with pytest.raises(EntropyDomainError):
        f_m(np.array([0.0, 1.0]), 0.5)
    with pytest.raises(EntropyDomainError):
        f_m(-1.0, 2.0)


def test_pressure_values():
    assert pressure_values(np.array([1.0]), 2.0)[0] == pytest.approx(2.0)
    assert pressure_values(np.array([1.0]), 1.0)[0] == pytest.approx(0.0)
    assert pressure_values(np.array([4.0]), 0.5)[0] == pytest.approx(-0.5)
    with pytest.raises(EntropyDomainError):
        pressure_values(np.array([0.0]), 1.0)


def test_f_m_prime_matches_finite_difference():
    z, h = 1.7, 1e-6
    for m in (0.6, 1.0, 2.5):
        fd = (f_m(z + h, m) - f_m(z - h, m)) / (2.0 * h)
        assert f_m_prime(z, m) == pytest.approx(fd, rel=1e-7)


def test_uniform_entropies():
    unit = build_grid(Domain.of("Interval"), 16)
    rho = GridDensity(grid=unit, values=np.ones(16))
    assert entropy(rho, 1.0) == pytest.approx(0.0, abs=1e-14)
    assert entropy(rho, 2.0) == pytest.approx(1.0)
    wide = build_grid(Domain.of("Interval", bounds=[(0.0, 2.0)]), 16)
    assert entropy(GridDensity(grid=wide, values=np.full(16, 0.5)), 1.0) == pytest.approx(-math.log(2.0))


def test_density_mass_is_validated(interval_grid):
    with pytest.raises(ValidationError):
        GridDensity(grid=interval_grid, values=np.full(interval_grid.shape, 2.0))
    with pytest.raises(ValidationError):
        GridDensity(grid=interval_grid, values=-np.ones(interval_grid.shape))


@pytest.mark.parametrize("m", [0.4, 0.7, 1.5, 2.0, 3.0])
def test_conjugate_constant_closed_form_is_the_maximum(m):
    report = conjugate_constant_report(m)
    assert report.verified == pytest.approx(report.closed_form, rel=1e-8)


def test_conjugate_constant_as_usually_stated_is_flagged():
    report = conjugate_constant_report(2.0)
    assert report.closed_form == pytest.approx(0.25)
    assert report.stated == pytest.approx(0.75)
    assert not report.consistent


def test_conjugate_is_legendre_transform():
    assert f_m_conjugate(2.0, 2.0) == pytest.approx(1.0)
    assert f_m_conjugate(1.0, 1.0) == pytest.approx(1.0)
    assert f_m_conjugate(-1.0, 0.5) == pytest.approx(1.0)
    assert math.isinf(f_m_conjugate(0.5, 0.5))
    with pytest.raises(RegimeError):
        conjugate_constant_report(1.0)


@pytest.mark.parametrize("m", [0.8, 1.0, 2.0])
@pytest.mark.parametrize("M", [0.5, 2.0, 4.0])
def test_entropy_scaling(m, M):
    grid = build_grid(Domain.of("TruncatedLine", radius=4.0), 256)
    x = grid.axis_centers(0)
    rho = GridDensity.normalized(grid, np.exp(-x * x) + 1e-3)
    lhs, rhs = entropy_scaling_check(rho, M, m)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_scaling_refuses_torus(torus1_grid, cosine_bump):
    with pytest.raises(GridError):
        entropy_scaling_check(cosine_bump(torus1_grid), 2.0, 1.0)


def test_ab_constant_values():
    assert ab_constant(1, 2.0) == pytest.approx(1.0 / 3.0)
    assert ab_constant(2, 1.0) == pytest.approx(1.0)
    assert ab_constant(1, 1.0) == pytest.approx(0.5)


def test_gaussian_profile_has_unit_mass_and_variance():
    params = SchemeParams(m=1.0, tau=0.1, d=1, truncated=True)
    grid = build_grid(Domain.of("TruncatedLine", radius=8.0), 1024)
    rho = exact_profile(ProfileKind.GAUSSIAN_HEAT, params, 0.5, grid, normalize=False)
    assert rho.mass == pytest.approx(1.0, abs=1e-9)
    assert rho.second_moment() == pytest.approx(1.0, rel=1e-4)


def test_barenblatt_support_and_pressure_laplacian():
    params = SchemeParams(m=2.0, tau=0.02, d=1, truncated=True)
    R1 = barenblatt_support_radius(params, 1.0)
    assert barenblatt_support_radius(params, 8.0) == pytest.approx(2.0 * R1)
    assert exact_pressure_laplacian(params, 2.0) == pytest.approx(-1.0 / 6.0)
    grid = build_grid(Domain.of("TruncatedLine", radius=1.5 * R1), 512)
    rho = exact_profile("BarenblattPME", params, 1.0, grid)
    x = grid.axis_centers(0)
    assert np.all(rho.values[np.abs(x) > R1 + grid.h[0]] == 0.0)
    assert profile_truncation_radius("BarenblattPME", params, 1.0) > R1


def test_profile_kind_must_match_exponent():
    params = SchemeParams(m=2.0, tau=0.1, d=1)
    grid = build_grid(Domain.of("Interval"), 16)
    with pytest.raises(RegimeError):
        exact_profile("GaussianHeat", params, 1.0, grid)
