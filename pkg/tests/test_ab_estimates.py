import csv
import math

import numpy as np
import pytest
from scipy import integrate

from numerics.domain_grid import build_grid
from numerics.entropy_profiles import UNIT_BALL_VOLUME, GridDensity, exact_profile
from numerics.errors import GridError, RegimeError
from numerics.schemas.domain import Domain
from numerics.schemas.scheme import ProfileKind, SchemeParams
from pipelines.ab_estimates import (
    F,
    F_inverse,
    ab_check_trajectory,
    ab_sequence,
    barenblatt_pressure_laplacian,
    l1_linfty_bound,
    late_time_index,
    linfty_bound_check,
    one_step_improvement_check,
    pressure_bound_constant,
    smallness_constant,
)
from pipelines.jko_1d import run_scheme


def test_F_value():
    assert F(0.5, 1, 2.0) == pytest.approx(4.0)
    assert F(0.0, 2, 1.0) == 0.0
    with pytest.raises(ValueError):
        F(1.0, 1, 1.0)


def test_F_inverse_quadratic_root():
    assert F_inverse(1.0, 2, 1.0) == pytest.approx((3.0 - math.sqrt(5.0)) / 2.0, abs=1e-9)
    assert F_inverse(0.0, 1, 2.0) == 0.0
    for Y in (1e-6, 0.3, 7.0, 1e4):
        assert F(F_inverse(Y, 1, 1.5), 1, 1.5) == pytest.approx(Y, rel=1e-10)


def test_sequence_starts_at_one_and_decreases():
    seq = ab_sequence(2, 1.0, 3)
    assert seq.values[0] == 1.0
    assert seq.X(2) == pytest.approx((3.0 - math.sqrt(5.0)) / 2.0, abs=1e-9)
    assert seq.X(0) == 1.0
    long = ab_sequence(1, 2.0, 500)
    assert np.all(np.diff(long.values) < 0.0)


@pytest.mark.parametrize(
    "d,m,alpha",
    [(1, 2.0, 1.0 / 3.0), (2, 1.0, 1.0), (1, 1.0, 0.5)],
)
def test_ab_constants(d, m, alpha):
    seq = ab_sequence(d, m, 5000)
    assert seq.ab_constant == pytest.approx(alpha)
    assert seq.asymptotic_ratio()[-1] == pytest.approx(1.0, abs=2e-2)


def test_sequence_rejects_bad_regime():
    with pytest.raises(RegimeError):
        ab_sequence(2, 0.0, 3)
    with pytest.raises(RegimeError):
        ab_sequence(3, 1.0, 3)
    with pytest.raises(ValueError):
        ab_sequence(1, 1.0, 0)


def test_sequence_csv(tmp_path):
    path = ab_sequence(1, 2.0, 4).to_csv(tmp_path / "ab_sequence.csv")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["k"] for r in rows] == ["1", "2", "3", "4"]
    assert float(rows[0]["X_k"]) == 1.0
    assert float(rows[1]["one_minus_X_k"]) == pytest.approx(1.0 - float(rows[1]["X_k"]))


def test_late_time_index():
    seq = ab_sequence(1, 1.0, 200)
    k0 = late_time_index(seq, 0.1)
    ratio = seq.asymptotic_ratio()
    assert np.all(ratio[k0 - 1:] <= 1.1)
    assert k0 == 1 or ratio[k0 - 2] > 1.1


def test_one_step_improvement():
    assert one_step_improvement_check(0.5, 1.2, 1, 2.0).branch == "Lambda>=1"
    report = one_step_improvement_check(0.0, 0.8, 1, 1.0)
    assert report.branch == "inequality"
    assert report.lhs == pytest.approx(1.0 + 0.8**-1 - 0.8**-1)
    assert report.ok
    low = one_step_improvement_check(0.99, 0.5, 2, 1.0)
    assert low.lhs == pytest.approx(-1.0)
    assert not low.ok


def test_l1_linfty_bound_values():
    assert l1_linfty_bound(1.0, 1, 0.0, 1.0) == pytest.approx(0.5)
    assert l1_linfty_bound(0.5, 1, 0.0, 1.0) == pytest.approx(0.5)
    assert l1_linfty_bound(0.5, 1, 1e6, 1.0) is None
    assert l1_linfty_bound(3.0, 1, 1.0, 1.0) is None
    assert l1_linfty_bound(3.0, 1, 1.0, 1.0, ball_mean=0.25) is not None
    assert l1_linfty_bound(2.0, 1, 0.0, 1.0) == pytest.approx(0.5)


@pytest.mark.parametrize("d", [1, 2])
def test_l1_linfty_correction_uses_the_ball_mean(d):
    num, _ = integrate.quad(lambda r: r ** (d + 1), 0.0, 1.0)
    den, _ = integrate.quad(lambda r: r ** (d - 1), 0.0, 1.0)
    ball_mean = num / den
    assert ball_mean == pytest.approx(d / (d + 2.0))
    K, r = 3.0, 0.4
    vol = UNIT_BALL_VOLUME[d] * r**d
    M = l1_linfty_bound(1.0, d, K, r)
    assert M == pytest.approx(math.exp(ball_mean * K * r * r) / vol)
    # the mean-value step needs only half the ball mean
    assert M > math.exp(0.5 * ball_mean * K * r * r) / vol
    assert smallness_constant(d, 0.5) == pytest.approx(UNIT_BALL_VOLUME[d] ** 0.5 / ball_mean)


def test_smallness_and_pressure_constants():
    assert math.isinf(smallness_constant(1, 2.0))
    assert smallness_constant(1, 0.5) == pytest.approx(math.sqrt(2.0) * 3.0)
    assert pressure_bound_constant(1, 1.0, 0.5, 0.1) == pytest.approx(5.0)
    assert pressure_bound_constant(1, 2.0, 0.5, 0.1) == pytest.approx(2.5)


def test_barenblatt_pressure_laplacian_is_sharp():
    params = SchemeParams(m=2.0, tau=0.02, d=1, truncated=True)
    grid = build_grid(Domain.of("TruncatedLine", radius=4.0), 1024)
    rho = exact_profile(ProfileKind.BARENBLATT_PME, params, 1.0, grid)
    lap = barenblatt_pressure_laplacian(rho, 2.0)
    assert lap.size > 10
    assert np.max(np.abs(lap + 1.0 / 3.0)) <= 0.01 / 3.0


def test_pressure_laplacian_needs_1d():
    grid = build_grid(Domain.of("Square"), 8)
    with pytest.raises(GridError):
        barenblatt_pressure_laplacian(GridDensity(grid=grid, values=np.ones((8, 8))), 2.0)


@pytest.fixture(scope="module")
def heat_trajectory():
    grid = build_grid(Domain.of("Torus1"), 128)
    x = grid.axis_centers(0)
    rho0 = GridDensity.normalized(grid, 1.0 + 0.5 * np.cos(2.0 * np.pi * x))
    params = SchemeParams(m=1.0, tau=1e-3, d=1)
    return run_scheme(rho0, params, 12)


def test_heat_trajectory_certifies(heat_trajectory, tmp_path):
    report = ab_check_trajectory(heat_trajectory)
    assert len(report.rows) == 12
    assert report.max_delta_conv <= 1e-8
    assert report.max_ma_slack <= 5e-3
    assert all(r.ma_ok and r.lap_u_ok and r.lap_p_ok and r.chain_ok for r in report.rows)
    assert report.rows[0].X_k == 1.0 and report.rows[0].one_minus_X_k == 0.0
    assert report.rows[1].one_step_ok is not None
    path = report.to_csv(tmp_path / "ab_report.csv")
    assert path.read_text().splitlines()[0].startswith("k,t,X_k")


def test_late_time_rows_use_trajectory_clock(heat_trajectory):
    report = ab_check_trajectory(heat_trajectory, k0=3, item3_eps=0.1)
    late = [r for r in report.rows if r.item3_bound is not None]
    assert [r.k for r in late] == list(range(3, 13))
    for r in late:
        assert r.item3_bound == pytest.approx(-1.1 * 0.5 / r.t)


def test_linfty_on_torus(heat_trajectory):
    report = linfty_bound_check(heat_trajectory, 0.5, 0.2, 0.005)
    assert report.times[0] >= 0.005 - 1e-12
    assert report.bound_M is not None
    assert report.ok
    with pytest.raises(GridError):
        linfty_bound_check(heat_trajectory, 0.5, 0.3, 0.005)
    with pytest.raises(ValueError):
        linfty_bound_check(heat_trajectory, 0.5, 0.1, 1.0)
