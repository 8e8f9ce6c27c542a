"""
Aronson-Bénilan estimates for JKO trajectories.

• F / F_inverse / ab_sequence: F_{d,m}[X] = X/(1-X)^{d(m-1)+2} and the
  universal sequence X_1 = 1, X_{k+1} = F^{-1}[X_k].
• ab_check_trajectory: per step, det(D^2 u_k)^{1/d} >= 1 - X_k through the
  Monge-Ampère measure, the weak Laplacian forms Lap u_k >= d(1 - X_k) and
  Lap p_k >= -d X_k/tau, the late-time bound Lap p >= -(1+eps) alpha/t and the
  one-step improvement inequality between consecutive steps.
• l1_linfty_bound / linfty_bound_check: local L-infinity bounds from a lower
  bound on the Laplacian of the pressure.

Relies on:
    • numerics.monge_ampere for measures, lifts and weak Laplacians
    • numpy.polyfit for the sup-norm decay exponent
"""
from __future__ import annotations
import logging
import math
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

from numerics.entropy_profiles import UNIT_BALL_VOLUME, GridDensity, ab_constant, f_m_prime
from numerics.errors import GridError, RegimeError
from numerics.monge_ampere import (
    ConvexPotential,
    amgm_subharmonic_check,
    convexify,
    discrete_laplacian,
    lift_periodic,
    ma_lower_bound_check,
    ma_measure,
    weak_laplacian_margin,
)
from numerics.schemas.scheme import SchemeParams, critical_exponents
from numerics.utils.file_utils import write_csv
from pipelines.jko_1d import SchemeTrajectory, TrajectoryStep
from pipelines.utils.pipeline_utils import timed

log = logging.getLogger(__name__)

LIFT_HALO = 3
DEFAULT_ITEM3_EPS = 0.1


def _exponent(d: int, m: float) -> float:
    return d * (m - 1.0) + 2.0


def _check_regime(d: int, m: float) -> None:
    if d not in (1, 2):
        raise RegimeError(f"d = {d} is outside the supported dimensions 1 and 2")
    m_c1, _ = critical_exponents(d)
    if not m > max(m_c1, 0.0):
        raise RegimeError(f"m = {m} is not above m_c1 = {m_c1:g} for d = {d}")


# ── the universal sequence ──────────────────────────────────────────


def F(X: float, d: int, m: float) -> float:
    """X / (1 - X)^{d(m-1)+2}, an increasing bijection [0, 1) -> [0, inf)."""
    _check_regime(d, m)
    if not 0.0 <= X < 1.0:
        raise ValueError(f"F is defined on [0, 1), got X = {X}")
    return X / (1.0 - X) ** _exponent(d, m)


def _F_prime(X: float, a: float) -> float:
    return (1.0 - X + a * X) / (1.0 - X) ** (a + 1.0)


def _solve_F(Y: float, a: float, lo: float, hi: float, x0: float, tol: float) -> float:
    """Bracketed Newton on F(X) = Y with bisection fallback, then one Newton polish."""
    X = min(max(x0, lo), hi)
    for _ in range(200):
        r = X / (1.0 - X) ** a - Y
        if abs(r) <= tol * max(1.0, Y):
            break
        if r > 0.0:
            hi = X
        else:
            lo = X
        step = X - r / _F_prime(X, a)
        X = step if lo < step < hi else 0.5 * (lo + hi)
    polished = X - (X / (1.0 - X) ** a - Y) / _F_prime(X, a)
    if 0.0 <= polished < 1.0 and abs(polished / (1.0 - polished) ** a - Y) <= abs(X / (1.0 - X) ** a - Y):
        X = polished
    return X


def F_inverse(Y: float, d: int, m: float, tol: float = 1e-12) -> float:
    """The unique X in [0, 1) with F_{d,m}(X) = Y."""
    _check_regime(d, m)
    if Y < 0.0:
        raise ValueError(f"F_inverse needs Y >= 0, got {Y}")
    if Y == 0.0:
        return 0.0
    a = _exponent(d, m)
    delta = 0.5
    while (1.0 - delta) / delta**a < Y:
        delta *= 0.5
    hi = min(Y, 1.0 - delta) if Y < 1.0 else 1.0 - delta
    return _solve_F(Y, a, 0.0, hi, 0.5 * hi, tol)


class ABSequence(BaseModel):
    d: int
    m: float
    values: list[float] = Field(..., description="X_1 .. X_K")
    alpha: float = Field(..., description="Exponent d(m-1)+2")
    ab_constant: float = Field(..., description="d/(d(m-1)+2)")

    @property
    def K(self) -> int:
        return len(self.values)

    def X(self, k: int) -> float:
        """X_k for k >= 1 (X_0 is not defined; callers clamp to k = 1)."""
        return self.values[max(k, 1) - 1]

    def asymptotic_ratio(self) -> np.ndarray:
        """k alpha X_k, which tends to 1."""
        k = np.arange(1, self.K + 1)
        return k * self.alpha * np.asarray(self.values)

    def rows(self) -> list[dict]:
        ratio = self.asymptotic_ratio()
        return [
            {"k": k, "X_k": x, "one_minus_X_k": 1.0 - x, "k_alpha_X_k": float(r)}
            for k, (x, r) in enumerate(zip(self.values, ratio), start=1)
        ]

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(path, self.rows(), ["k", "X_k", "one_minus_X_k", "k_alpha_X_k"])


def ab_sequence(d: int, m: float, K: int, tol: float = 1e-12) -> ABSequence:
    _check_regime(d, m)
    if K < 1:
        raise ValueError("K must be at least 1")
    a = _exponent(d, m)
    values = [1.0]
    for _ in range(K - 1):
        Y = values[-1]
        # 1/X_{k+1} - 1/X_k is close to a, which brackets the root from below
        guess = Y / (1.0 + a * Y)
        values.append(_solve_F(Y, a, 0.0, min(Y, 1.0 - 1e-16), guess, tol))
    return ABSequence(d=d, m=m, values=values, alpha=a, ab_constant=d / a)


def late_time_index(seq: ABSequence, eps: float = DEFAULT_ITEM3_EPS) -> int:
    """Smallest k0 with k alpha X_k <= 1 + eps for every k in [k0, K]."""
    ratio = seq.asymptotic_ratio()
    bad = np.nonzero(ratio > 1.0 + eps)[0]
    return 1 if bad.size == 0 else int(bad[-1]) + 2


# ── one-step improvement ────────────────────────────────────────────


class OneStepReport(BaseModel):
    ok: bool
    lhs: float | None = Field(None, description="1 + Lambda^{-(d(m-1)+1)} - Lambda^{-dm}")
    branch: str


def one_step_improvement_check(
    lambda_prev: float, Lambda_next: float, d: int, m: float, slack: float = 0.0
) -> OneStepReport:
    """Either Lambda >= 1, or 1 + Lambda^{-(d(m-1)+1)} - Lambda^{-dm} >= lambda_prev."""
    if Lambda_next >= 1.0 - slack:
        return OneStepReport(ok=True, lhs=None, branch="Lambda>=1")
    if Lambda_next <= 0.0:
        return OneStepReport(ok=lambda_prev <= slack, lhs=None, branch="degenerate")
    lhs = 1.0 + Lambda_next ** -(d * (m - 1.0) + 1.0) - Lambda_next ** -(d * m)
    return OneStepReport(ok=lhs >= lambda_prev - slack, lhs=lhs, branch="inequality")


# ── trajectory certification ────────────────────────────────────────


class ABRow(BaseModel):
    k: int
    t: float
    X_k: float
    one_minus_X_k: float
    min_det: float = Field(..., description="min over the window of (MA density)^{1/d}")
    ma_ok: bool
    ma_worst_ratio: float | None
    ma_slack: float
    delta_conv: float
    lap_u_margin: float
    lap_u_ok: bool
    lap_p_bound: float
    lap_p_margin: float
    lap_p_ok: bool
    item3_bound: float | None = None
    item3_margin: float | None = None
    item3_ok: bool | None = None
    one_step_ok: bool | None = None
    chain_ok: bool = Field(..., description="MA pass implies the weak Lap u pass")
    max_rho: float

    @property
    def ok(self) -> bool:
        return (
            self.ma_ok and self.lap_u_ok and self.lap_p_ok and self.chain_ok
            and self.item3_ok is not False and self.one_step_ok is not False
        )


class ABReport(BaseModel):
    d: int
    m: float
    tau: float
    item3_eps: float
    k0: int
    ratio_slack: float = Field(0.0, description="Extra MA ratio slack granted (entropic runs)")
    rows: list[ABRow] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def max_ma_slack(self) -> float:
        return max((r.ma_slack for r in self.rows), default=0.0)

    @property
    def max_delta_conv(self) -> float:
        return max((r.delta_conv for r in self.rows), default=0.0)

    @property
    def min_ma_ratio(self) -> float | None:
        ratios = [r.ma_worst_ratio for r in self.rows if r.ma_worst_ratio is not None and math.isfinite(r.ma_worst_ratio)]
        return min(ratios) if ratios else None

    def to_csv(self, path: str | Path) -> Path:
        fields = list(ABRow.model_fields)
        return write_csv(path, [r.model_dump() for r in self.rows], fields)


def _step_potential(step: TrajectoryStep, traj: SchemeTrajectory) -> ConvexPotential:
    """u_k = tau f'_m(rho_k) + |x|^2/2, unconvexified; lifted on tori."""
    params, grid = traj.params, traj.grid
    tau, m = params.tau, params.m
    result = step.result
    if result is None:
        raise ValueError(f"step {step.k} carries no solver result")
    if grid.d == 2:
        if grid.domain.is_periodic:
            return lift_periodic(result.u, grid, halo=LIFT_HALO)
        return ConvexPotential.on_grid(grid, result.u)

    cells = result.cells
    c = cells.centres
    u = tau * cells.pressure(m) + 0.5 * c * c
    if cells.period is None:
        return ConvexPotential.on_points(c, u)
    lo = grid.domain.bounds[0][0]
    L = cells.period
    base = lo + np.mod(c - lo, L)
    # rewrite u at the wrapped point: the periodic part tau f' is unchanged
    u = tau * cells.pressure(m) + 0.5 * base * base
    order = np.argsort(base)
    return lift_periodic(u[order], grid, halo=LIFT_HALO, points=base[order])


def _min_det(u: ConvexPotential) -> float:
    measure = ma_measure(u)
    dens = measure.density()[measure.window]
    return float(max(np.min(dens), 0.0) ** (1.0 / u.d)) if dens.size else 0.0


def _pressure_from_potential(u: ConvexPotential, tau: float) -> np.ndarray:
    X = u.points()
    sq = X * X if u.d == 1 else np.sum(X * X, axis=-1)
    return (u.raw - 0.5 * sq) / tau


def ab_check_trajectory(
    traj: SchemeTrajectory,
    params: SchemeParams | None = None,
    item3_eps: float = DEFAULT_ITEM3_EPS,
    k0: int | None = None,
    ratio_slack: float = 0.0,
) -> ABReport:
    """Certify det(D^2 u_k)^{1/d} >= 1 - X_k and its Laplacian consequences along a trajectory.

    Item (3) is evaluated on the trajectory clock t = time_offset + k tau for
    k >= k0; by default k0 is the first index from which k alpha X_k stays
    within 1 + item3_eps. Runs started from a self-similar profile pass k0 = 1.
    """
    params = params or traj.params
    d, m, tau = params.d, params.m, params.tau
    steps = [s for s in traj.steps if s.k >= 1]
    if not steps:
        raise ValueError("trajectory has no JKO steps")
    seq = ab_sequence(d, m, max(s.k for s in steps))
    k0 = late_time_index(seq, item3_eps) if k0 is None else max(int(k0), 1)
    alpha = ab_constant(d, m)
    report = ABReport(d=d, m=m, tau=tau, item3_eps=item3_eps, k0=k0, ratio_slack=ratio_slack)

    prev_det: float | None = None
    with timed("ab_check_trajectory"):
        for step in steps:
            X = seq.X(step.k)
            lam = 1.0 - X
            u = convexify(_step_potential(step, traj))
            window = u.default_window()
            ma = ma_lower_bound_check(u, lam, window)
            ma_ok = ma.ok or (lam > 0.0 and ma.worst_ratio >= 1.0 - ratio_slack)
            lap_u = amgm_subharmonic_check(u, lam, window)
            p = _pressure_from_potential(u, tau)
            raw, _ = weak_laplacian_margin(p, u.axes, 0.0, window, u.cell_volumes())
            p_slack = lap_u.slack / tau
            lap_p_bound = -d * X / tau
            min_det = _min_det(u)

            item3_bound = item3_margin = item3_ok = None
            if step.k >= k0 and step.t > 0.0:
                item3_bound = -(1.0 + item3_eps) * alpha / step.t
                item3_margin = raw - item3_bound
                item3_ok = item3_margin >= -p_slack

            one_step_ok = None
            if prev_det is not None:
                one_step_ok = one_step_improvement_check(prev_det, min_det, d, m, slack=ma.slack + ratio_slack).ok
            prev_det = min_det

            row = ABRow(
                k=step.k, t=step.t, X_k=X, one_minus_X_k=lam, min_det=min_det,
                ma_ok=ma_ok, ma_worst_ratio=ma.worst_ratio if math.isfinite(ma.worst_ratio) else None,
                ma_slack=ma.slack, delta_conv=u.delta_conv,
                lap_u_margin=lap_u.margin, lap_u_ok=lap_u.ok,
                lap_p_bound=lap_p_bound, lap_p_margin=raw - lap_p_bound, lap_p_ok=raw - lap_p_bound >= -p_slack,
                item3_bound=item3_bound, item3_margin=item3_margin, item3_ok=item3_ok,
                one_step_ok=one_step_ok, chain_ok=(not ma.ok) or lap_u.ok,
                max_rho=step.diagnostics.max_rho,
            )
            report.rows.append(row)
            if not row.ok:
                log.warning(f"[WARN] AB check failed at k={step.k}: {row.model_dump()}")
    log.info(
        f"[CHECK] AB d={d} m={m:g} steps={len(report.rows)} ok={report.ok} "
        f"max_slack={report.max_ma_slack:.3e} max_delta_conv={report.max_delta_conv:.3e}"
    )
    return report


def barenblatt_pressure_laplacian(rho: GridDensity, m: float, inner: float = 0.8) -> np.ndarray:
    """Discrete Lap f'_m(rho) on the inner fraction of the support of a 1D profile."""
    if rho.grid.d != 1:
        raise GridError("the sampled sharpness check is one-dimensional")
    x = rho.grid.axis_centers(0)
    support = np.nonzero(rho.values > 0.0)[0]
    if support.size < 5:
        raise GridError("profile support is too small to differentiate")
    a, b = x[support[0]], x[support[-1]]
    mid, half = 0.5 * (a + b), 0.5 * inner * (b - a)
    keep = (np.abs(x - mid) <= half) & (rho.values > 0.0)
    keep[[0, -1]] = False
    p = np.zeros_like(x)
    p[rho.values > 0.0] = f_m_prime(rho.values[rho.values > 0.0], m)
    lap = discrete_laplacian(p, (x,))
    return lap[keep]


# ── L1 - L-infinity regularization ──────────────────────────────────


def _c_d(d: int) -> float:
    """Mean of |x|^2 over the unit ball of R^d.

    The mean-value step on h_m(g) + (K/2)|x - y|^2 only needs (K/2) times this
    mean over B_r, so c_d K r^2 overstates the correction by a factor 2 and
    every bound built on it is conservative.
    """
    return d / (d + 2.0)


def smallness_constant(d: int, m: float) -> float:
    """C(d, m) = omega_d^{1-m}/c_d in r^{2+d(m-1)} <= C/K (m < 1); unconstrained otherwise."""
    _check_regime(d, m)
    if m >= 1.0:
        return math.inf
    return UNIT_BALL_VOLUME[d] ** (1.0 - m) / _c_d(d)


def pressure_bound_constant(d: int, m: float, X_k: float, tau: float) -> float:
    """K with Lap h_m(rho) >= -K, h_m = log for m = 1 and rho^{m-1} otherwise."""
    base = d * X_k / tau
    return base if m == 1.0 else abs(m - 1.0) / m * base


def l1_linfty_bound(m: float, d: int, K: float, r: float, ball_mean: float | None = None) -> float | None:
    """Sup bound M on a unit-mass density from Lap h_m(rho) >= -K on balls of radius r.

    Returns None when the bound is not available: the radius violates the
    m < 1 smallness condition, or m > 2 without a measured ball mean of rho^{m-1}.
    """
    _check_regime(d, m)
    if not (r > 0.0 and K >= 0.0):
        raise ValueError("l1_linfty_bound needs r > 0 and K >= 0")
    omega, c = UNIT_BALL_VOLUME[d], _c_d(d)
    vol = omega * r**d
    if m == 1.0:
        return math.exp(c * K * r * r) / vol
    if m < 1.0:
        rhs = vol ** (1.0 - m) - c * K * r * r
        if rhs <= 0.0:
            return None
        return rhs ** (-1.0 / (1.0 - m))
    if m <= 2.0:
        return (vol ** (1.0 - m) + c * K * r * r) ** (1.0 / (m - 1.0))
    if ball_mean is None:
        log.warning("[WARN] m > 2 bound needs the measured ball mean of rho^{m-1}")
        return None
    log.warning("[WARN] m > 2 L1-Linf bound is an implementation-defined surrogate")
    return (ball_mean + c * K * r * r) ** (1.0 / (m - 1.0))


class LinftyReport(BaseModel):
    sup_norm: float
    bound_M: float | None
    ok: bool
    times: list[float]
    sups: list[float]
    decay_exponent: float | None = Field(None, description="Slope of log sup vs log t")
    surrogate: bool = False


def linfty_bound_check(
    traj: SchemeTrajectory,
    center: float | tuple[float, float],
    radius: float,
    t0: float,
    params: SchemeParams | None = None,
) -> LinftyReport:
    params = params or traj.params
    d, m, tau = params.d, params.m, params.tau
    grid = traj.grid
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.size != d:
        raise GridError(f"ball centre needs {d} coordinates")
    if not grid.domain.is_periodic:
        for axis, (lo, hi) in enumerate(grid.domain.bounds):
            if c[axis] - 2.0 * radius < lo or c[axis] + 2.0 * radius > hi:
                raise GridError("ball of twice the radius leaves the domain")
    elif 4.0 * radius > min(grid.domain.lengths):
        raise GridError("ball of twice the radius wraps around the torus")

    X = grid.centers()
    diff = X - c[0] if d == 1 else X - c
    if grid.domain.is_periodic:
        L = np.asarray(grid.domain.lengths)
        diff = diff - (L[0] if d == 1 else L) * np.round(diff / (L[0] if d == 1 else L))
    r2 = diff * diff if d == 1 else np.sum(diff * diff, axis=-1)
    ball = r2 <= radius * radius
    if not np.any(ball):
        raise GridError("ball contains no cells")

    late = [s for s in traj.steps if s.k >= 1 and s.t >= t0]
    if not late:
        raise ValueError(f"no steps at or after t0 = {t0}")
    times = [s.t for s in late]
    sups = [float(np.max(s.rho.values[ball])) for s in late]
    k_start = max(1, int(round((t0 - traj.time_offset) / tau)))
    X_k = ab_sequence(d, m, k_start).X(k_start)
    K = pressure_bound_constant(d, m, X_k, tau)
    first = late[0].rho.values
    ball_mean = float(np.mean(first[ball] ** (m - 1.0))) if m > 2.0 else None
    M = l1_linfty_bound(m, d, K, radius, ball_mean)
    sup = max(sups)
    slope = None
    if len(times) >= 2 and min(times) > 0.0 and min(sups) > 0.0:
        slope = float(np.polyfit(np.log(times), np.log(sups), 1)[0])
    ok = M is not None and sup <= M
    log.info(f"[CHECK] L-inf on B({c.tolist()}, {radius}) sup={sup:.6g} M={M} ok={ok}")
    return LinftyReport(sup_norm=sup, bound_M=M, ok=ok, times=times, sups=sups,
                        decay_exponent=slope, surrogate=m > 2.0)


__all__ = [
    "F",
    "F_inverse",
    "ABSequence",
    "ab_sequence",
    "late_time_index",
    "OneStepReport",
    "one_step_improvement_check",
    "ABRow",
    "ABReport",
    "ab_check_trajectory",
    "barenblatt_pressure_laplacian",
    "smallness_constant",
    "pressure_bound_constant",
    "l1_linfty_bound",
    "LinftyReport",
    "linfty_bound_check",
]
