"""
Property and oracle batteries behind `runner.py verify <suite>`.

    ot1d-oracle    quantile W2 vs brute force; entropic cost vs exact cost
    ma-oracle      hull-area vertex masses vs supporting-plane lattice areas
    gaussian-step  1D heat JKO vs the closed-form std recursion
    barenblatt     sampled pressure Laplacian, late-time AB bound, L-inf decay
    scaling-law    entropy_scaling_check battery
    boundary-2d    corner and face behavior of the entropic map on the square
    full           all of the above plus the 1D AB battery, the optimality
                   residual battery, the X_k battery and the 2D torus heat run

Random instances come from numpy.random.default_rng(seed) and are drawn in the
calling thread before any case is dispatched, so the outcome does not depend on
the thread count.
"""
from __future__ import annotations
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

from numerics.domain_grid import build_grid
from numerics.entropy_profiles import GridDensity, barenblatt_support_radius, entropy_scaling_check, exact_profile
from numerics.monge_ampere import ConvexPotential, convexify, ma_measure, ma_oracle_vertex_area
from numerics.ot_1d import QuantileFunction, w2_bruteforce, w2_quantile
from numerics.schemas.domain import Domain
from numerics.schemas.reports import CheckResult, SuiteReport
from numerics.schemas.scheme import ProfileKind, SchemeParams
from pipelines.ab_estimates import (
    ab_check_trajectory,
    ab_sequence,
    barenblatt_pressure_laplacian,
    F,
    F_inverse,
    linfty_bound_check,
)
from pipelines.jko_1d import psi_sign_check, run_scheme, zero_set_check
from pipelines.jko_2d_entropic import barycentric_map, boundary_behavior_check, run_scheme_2d, sinkhorn_points, spectral_heat_reference
from pipelines.utils.pipeline_utils import timed

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def _map(fn: Callable[[T], R], cases: Iterable[T], threads: int) -> list[R]:
    cases = list(cases)
    if threads <= 1 or len(cases) <= 1:
        return [fn(c) for c in cases]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cases))


# ── ot1d-oracle ─────────────────────────────────────────────────────


def _step_quantile(x: np.ndarray, N: int) -> QuantileFunction:
    xs = np.sort(x)
    return QuantileFunction(samples=np.repeat(xs, N // xs.size), lo=-1.0, hi=1.0)


def _ot1d_case(case: tuple[np.ndarray, np.ndarray]) -> float:
    x, y = case
    N = 2 * math.lcm(x.size, y.size)
    return abs(w2_quantile(_step_quantile(x, N), _step_quantile(y, N)) - w2_bruteforce(x, y))


def suite_ot1d_oracle(rng: np.random.Generator, threads: int = 1, instances: int = 200) -> SuiteReport:
    cases = [
        (rng.uniform(-1.0, 1.0, rng.integers(1, 9)), rng.uniform(-1.0, 1.0, rng.integers(1, 9)))
        for _ in range(instances)
    ]
    with timed("verify ot1d-oracle"):
        errs = _map(_ot1d_case, cases, threads)
    worst = max(errs)
    checks = [CheckResult.of("w2_quantile_vs_bruteforce", worst <= 1e-9, 1e-9 - worst, 1e-9, instances=instances)]

    eps_list = (1e-1, 1e-2, 1e-3)
    monotone, last_gap = True, 0.0
    for _ in range(10):
        x, y = rng.uniform(0.0, 1.0, (2, 2)), rng.uniform(0.0, 1.0, (2, 2))
        a = b = np.full(2, 0.5)
        exact = 0.5 * w2_bruteforce(x, y) ** 2
        gaps = [sinkhorn_points(x, a, y, b, eps, tol=1e-12).transport_cost - exact for eps in eps_list]
        monotone &= all(g1 <= g0 + 1e-12 for g0, g1 in zip(gaps[:-1], gaps[1:])) and gaps[-1] >= -1e-9
        last_gap = max(last_gap, gaps[-1])
    checks.append(CheckResult.of("entropic_cost_monotone", monotone, eps=list(eps_list), max_final_gap=last_gap))
    return SuiteReport(name="ot1d-oracle", checks=checks)


# ── ma-oracle ───────────────────────────────────────────────────────


def _random_convex(rng: np.random.Generator) -> ConvexPotential:
    """Separable convex samples: quadratic plus random softplus ridges per axis."""
    n = int(rng.integers(6, 13))
    x = np.linspace(0.0, 1.0, n)

    def profile() -> np.ndarray:
        v = rng.uniform(0.2, 2.0) * x * x
        for _ in range(int(rng.integers(1, 4))):
            s, c = rng.uniform(2.0, 12.0), rng.uniform(0.1, 0.9)
            v = v + rng.uniform(0.05, 0.5) * np.logaddexp(0.0, s * (x - c)) / s
        return v

    values = np.add.outer(profile(), profile())
    return convexify(ConvexPotential(axes=(x, x), values=values, raw=values.copy()))


def _ma_case(u: ConvexPotential) -> float:
    measure = ma_measure(u)
    worst = 0.0
    for i, j in zip(*np.nonzero(measure.window)):
        hull = measure.masses[i, j]
        oracle = ma_oracle_vertex_area(u, (int(i), int(j)), lattice=400)
        worst = max(worst, abs(hull - oracle) / max(hull, 1e-12))
    return worst


def suite_ma_oracle(rng: np.random.Generator, threads: int = 1, instances: int = 50) -> SuiteReport:
    cases = [_random_convex(rng) for _ in range(instances)]
    with timed("verify ma-oracle"):
        errs = _map(_ma_case, cases, threads)
    worst = max(errs)
    return SuiteReport(name="ma-oracle", checks=[
        CheckResult.of("hull_vs_lattice", worst <= 0.02, 0.02 - worst, 0.02, instances=instances),
    ])


# ── gaussian-step ───────────────────────────────────────────────────


def gaussian_std_recursion(s0: float, tau: float, K: int) -> np.ndarray:
    """s_{k+1} = (s_k + sqrt(s_k^2 + 4 tau))/2."""
    s = [s0]
    for _ in range(K):
        s.append(0.5 * (s[-1] + math.sqrt(s[-1] ** 2 + 4.0 * tau)))
    return np.asarray(s)


def suite_gaussian_step(rng: np.random.Generator | None = None, threads: int = 1) -> SuiteReport:
    tau, K, N = 0.1, 20, 4096
    params = SchemeParams(m=1.0, tau=tau, d=1, truncated=True)
    grid = build_grid(Domain.of("TruncatedLine", radius=16.0), N // 4)
    rho0 = exact_profile(ProfileKind.GAUSSIAN_HEAT, params, 0.5, grid)
    with timed("verify gaussian-step"):
        traj = run_scheme(rho0, params, K, tol=1e-10, N=N)
    stds = np.array([s.diagnostics.std for s in traj.steps])
    # the recursion starts from the sampled std so quantile sampling bias cancels
    expected = gaussian_std_recursion(float(stds[0]), tau, K)
    rel = float(np.max(np.abs(stds - expected) / expected))
    res = max(s.diagnostics.residual for s in traj.steps[1:])
    return SuiteReport(name="gaussian-step", checks=[
        CheckResult.of("std_recursion", rel <= 1e-3, 1e-3 - rel, 1e-3, sampled_s0=float(stds[0])),
        CheckResult.of("step_residual", res <= 1e-6, 1e-6 - res, 1e-6),
    ])


# ── barenblatt ─────────────────────────────────────────────────────


def suite_barenblatt(rng: np.random.Generator | None = None, threads: int = 1) -> SuiteReport:
    params = SchemeParams(m=2.0, tau=0.02, d=1, truncated=True)
    alpha = params.ab_constant
    R3 = barenblatt_support_radius(params, 3.0)
    grid = build_grid(Domain.of("TruncatedLine", radius=1.25 * R3), 512)
    rho1 = exact_profile(ProfileKind.BARENBLATT_PME, params, 1.0, grid)
    lap = barenblatt_pressure_laplacian(rho1, params.m)
    sharp = float(np.max(np.abs(lap + alpha) / alpha))
    checks = [CheckResult.of("sampled_pressure_laplacian", sharp <= 0.01, 0.01 - sharp, 0.01, target=-alpha)]

    with timed("verify barenblatt"):
        traj = run_scheme(rho1, params, 100, time_offset=1.0)
        report = ab_check_trajectory(traj, params, item3_eps=0.1, k0=1)
    early = [r for r in report.rows if r.t <= 1.5 + 1e-12 and r.item3_ok is not None]
    margin = min(r.item3_margin for r in early)
    checks.append(CheckResult.of("late_time_pressure_bound", all(r.item3_ok for r in early), margin))

    radius = 0.25 * barenblatt_support_radius(params, 1.0)
    linf = linfty_bound_check(traj, 0.0, radius, 1.0, params)
    beta = 1.0 / params.exponent
    target = -params.d * beta
    slope = linf.decay_exponent if linf.decay_exponent is not None else math.nan
    slope_err = abs(slope - target) / abs(target)
    checks.append(CheckResult.of("sup_decay_exponent", slope_err <= 0.1, 0.1 - slope_err, 0.1, slope=slope, target=target))
    checks.append(CheckResult.of("linfty_bound", linf.ok,
                                 None if linf.bound_M is None else linf.bound_M - linf.sup_norm))
    return SuiteReport(name="barenblatt", checks=checks)


# ── scaling-law ─────────────────────────────────────────────────────


def _scaling_case(case: tuple[int, float, float, np.ndarray | None]) -> float:
    d, m, M, centre = case
    n = 512 if d == 1 else 96
    domain = Domain.of("TruncatedLine" if d == 1 else "TruncatedPlane", radius=4.0)
    grid = build_grid(domain, n)
    diff = grid.centers() - (0.0 if centre is None else (centre[0] if d == 1 else centre))
    r2 = diff * diff if d == 1 else np.sum(diff * diff, axis=-1)
    rho = GridDensity.normalized(grid, np.exp(-0.5 * r2))
    lhs, rhs = entropy_scaling_check(rho, M, m)
    return abs(lhs - rhs) / max(abs(rhs), 1e-300)


def suite_scaling_law(rng: np.random.Generator, threads: int = 1) -> SuiteReport:
    cases = []
    for d in (1, 2):
        for m in (0.9, 1.0, 2.0):
            for M in (0.25, 4.0):
                cases.append((d, m, M, None))
                cases.append((d, m, M, rng.uniform(-1.0, 1.0, d)))
    with timed("verify scaling-law"):
        errs = _map(_scaling_case, cases, threads)
    worst = max(errs)
    return SuiteReport(name="scaling-law", checks=[
        CheckResult.of("entropy_scaling_identity", worst <= 1e-6, 1e-6 - worst, 1e-6, cases=len(cases)),
    ])


# ── boundary-2d ─────────────────────────────────────────────────────


def _product_pair(n: int) -> tuple[GridDensity, GridDensity]:
    grid = build_grid(Domain.of("Square"), n)
    x0, x1 = grid.axis_centers(0), grid.axis_centers(1)
    rho = np.multiply.outer(1.0 + 0.5 * np.cos(np.pi * x0), 1.0 + 0.3 * np.cos(np.pi * x1))
    mu = np.multiply.outer(1.0 - 0.4 * np.cos(np.pi * x0), 1.0 + 0.2 * np.sin(np.pi * x1))
    return GridDensity.normalized(grid, rho), GridDensity.normalized(grid, mu)


def _boundary_case(case: tuple[int, float]):
    n, eps = case
    rho, mu = _product_pair(n)
    return boundary_behavior_check(barycentric_map(rho, mu, eps), eps)


def suite_boundary_2d(rng: np.random.Generator | None = None, threads: int = 1) -> SuiteReport:
    with timed("verify boundary-2d"):
        fine, coarse = _map(_boundary_case, [(48, 1e-3), (24, 2e-3)], threads)
    face_tol = 3.0 * (fine.eps + fine.h)

    def improves(c: float, f: float) -> bool:
        return c <= 1e-12 or c / max(f, 1e-300) >= 1.5

    return SuiteReport(name="boundary-2d", checks=[
        CheckResult.of("corner_err", fine.corner_err <= 0.05, 0.05 - fine.corner_err, 0.05),
        CheckResult.of("face_err", fine.face_err <= face_tol, face_tol - fine.face_err, face_tol),
        CheckResult.of("refinement_corner", improves(coarse.corner_err, fine.corner_err),
                       coarse=coarse.corner_err, fine=fine.corner_err),
        CheckResult.of("refinement_face", improves(coarse.face_err, fine.face_err),
                       coarse=coarse.face_err, fine=fine.face_err),
    ])


# ── batteries run by `full` only ────────────────────────────────────


def battery_ab_sequence() -> list[CheckResult]:
    checks = []
    for d, m in ((1, 1.0), (1, 2.0), (2, 1.0), (2, 1.5), (1, 0.7)):
        seq = ab_sequence(d, m, 10_000)
        X = np.asarray(seq.values)
        ratio = float(seq.asymptotic_ratio()[-1])
        ok = X[0] == 1.0 and bool(np.all(np.diff(X) < 0.0)) and 0.98 <= ratio <= 1.02
        checks.append(CheckResult.of(f"ab_sequence_d{d}_m{m:g}", ok, 0.02 - abs(ratio - 1.0), 0.02, ratio=ratio))
    X2 = F_inverse(1.0, 2, 1.0)
    err = abs(X2 - (3.0 - math.sqrt(5.0)) / 2.0)
    checks.append(CheckResult.of("F_inverse_quadratic_root", err <= 1e-9, 1e-9 - err, 1e-9, F_check=F(X2, 2, 1.0)))
    return checks


def _bump_datum(grid, amplitude: float = 0.5) -> GridDensity:
    lo, hi = grid.domain.bounds[0]
    x = grid.axis_centers(0)
    return GridDensity.normalized(grid, 1.0 + amplitude * np.cos(2.0 * np.pi * (x - lo) / (hi - lo)))


def _ab_case(case: tuple[float, str]) -> tuple[str, float, float, bool]:
    m, kind = case
    params = SchemeParams(m=m, tau=1e-3, d=1)
    grid = build_grid(Domain.of(kind), 512)
    traj = run_scheme(_bump_datum(grid), params, 50)
    report = ab_check_trajectory(traj, params)
    ok = all(r.ma_ok for r in report.rows)
    return f"{kind}_m{m:g}", report.max_delta_conv, report.max_ma_slack, ok


def battery_ab_1d(threads: int = 1) -> list[CheckResult]:
    cases = [(m, kind) for m in (0.7, 1.0, 2.0) for kind in ("Torus1", "Interval")]
    checks = []
    for name, delta, slack, ok in _map(_ab_case, cases, threads):
        passed = ok and delta <= 1e-8 and slack <= 5e-3
        checks.append(CheckResult.of(f"ab_item2_{name}", passed, 5e-3 - slack, slack, delta_conv=delta))
    return checks


def _residual_case(m: float) -> list[CheckResult]:
    params = SchemeParams(m=m, tau=1e-3, d=1)
    if m > 1.0:
        grid = build_grid(Domain.of("Interval", bounds=[(-2.0, 2.0)]), 512)
        rho0 = exact_profile(ProfileKind.BARENBLATT_PME, params, 0.5, grid)
    else:
        grid = build_grid(Domain.of("Interval"), 512)
        rho0 = _bump_datum(grid)
    traj = run_scheme(rho0, params, 20)
    worst = max(s.diagnostics.residual for s in traj.steps[1:])
    eul = max(s.diagnostics.eulerian_residual for s in traj.steps[1:])
    out = [
        CheckResult.of(f"residual_m{m:g}", worst <= 1e-5, 1e-5 - worst, 1e-5),
        CheckResult.of(f"eulerian_residual_m{m:g}", eul <= 1e-4, 1e-4 - eul, 1e-4),
    ]
    if m < 1.0:
        top = max(psi_sign_check(s.result, params).max_value for s in traj.steps[1:])
        out.append(CheckResult.of(f"psi_sign_m{m:g}", top < 0.0, -top))
    elif m > 1.0:
        reports = [zero_set_check(s.result, params) for s in traj.steps[1:]]
        low = min(r.zero_set_min_psi for r in reports)
        out.append(CheckResult.of(f"zero_set_m{m:g}", all(r.ok for r in reports), low + 1e-6, 1e-6, zero_set_min_psi=low))
    return out


def battery_residuals(threads: int = 1) -> list[CheckResult]:
    return [c for group in _map(_residual_case, (0.7, 1.0, 2.0), threads) for c in group]


def battery_heat_2d() -> list[CheckResult]:
    params = SchemeParams(m=1.0, tau=1e-3, d=2)
    grid = build_grid(Domain.of("Torus2"), 64)
    x0 = grid.axis_centers(0)
    rho0 = GridDensity.normalized(grid, np.broadcast_to((1.0 + 0.5 * np.cos(2.0 * np.pi * x0))[:, None], grid.shape))
    traj = run_scheme_2d(rho0, params, 20, eps=5e-4)
    ref = spectral_heat_reference(rho0, traj.steps[-1].t)
    err = grid.integrate(np.abs(traj.steps[-1].rho.values - ref.values))
    report = ab_check_trajectory(traj, params, ratio_slack=0.05)
    ratio = report.min_ma_ratio if report.min_ma_ratio is not None else math.inf
    return [
        CheckResult.of("heat_2d_l1", err <= 5e-2, 5e-2 - err, 5e-2),
        CheckResult.of("heat_2d_ma_ratio", ratio >= 0.95, ratio - 0.95, 0.05),
    ]


def suite_full(rng: np.random.Generator, threads: int = 1) -> SuiteReport:
    checks: list[CheckResult] = []
    for name in ("ot1d-oracle", "ma-oracle", "gaussian-step", "barenblatt", "scaling-law", "boundary-2d"):
        sub = SUITES[name](rng, threads)
        checks.extend(c.model_copy(update={"name": f"{name}/{c.name}"}) for c in sub.checks)
    with timed("verify full batteries"):
        checks.extend(battery_ab_sequence())
        checks.extend(battery_residuals(threads))
        checks.extend(battery_ab_1d(threads))
        checks.extend(battery_heat_2d())
    return SuiteReport(name="full", checks=checks)


SUITES: dict[str, Callable[[np.random.Generator, int], SuiteReport]] = {
    "ot1d-oracle": suite_ot1d_oracle,
    "ma-oracle": suite_ma_oracle,
    "gaussian-step": suite_gaussian_step,
    "barenblatt": suite_barenblatt,
    "scaling-law": suite_scaling_law,
    "boundary-2d": suite_boundary_2d,
    "full": suite_full,
}


def run_suite(name: str, seed: int = 0, threads: int = 1) -> SuiteReport:
    if name not in SUITES:
        raise KeyError(f"unknown suite '{name}'; choose from {', '.join(SUITES)}")
    rng = np.random.default_rng(seed)
    report = SUITES[name](rng, threads)
    log.info(f"[CHECK] suite {name}: {report.status.value} ({len(report.checks)} checks)")
    return report


__all__ = [
    "SUITES",
    "run_suite",
    "gaussian_std_recursion",
    "suite_ot1d_oracle",
    "suite_ma_oracle",
    "suite_gaussian_step",
    "suite_barenblatt",
    "suite_scaling_law",
    "suite_boundary_2d",
    "suite_full",
    "battery_ab_sequence",
    "battery_ab_1d",
    "battery_residuals",
    "battery_heat_2d",
]
