"""
One experiment from a RunConfig to artifacts on disk.

    run_pipeline(config, out_dir)
        0  build grid, params and the initial density
        1  iterate the JKO scheme (1D Lagrangian Newton or 2D entropic)
        2  run the configured certifications
        3  write trajectory.csv, ab_report.csv, summary.json, report.md
           and optional field dumps

A JkoLabError raised in steps 0-2 is logged, recorded in summary.json and
turned into exit code 1; whatever was computed before it is still written.
"""
from __future__ import annotations
import json
import logging
import math
from pathlib import Path

import numpy as np
from jinja2 import Environment, FileSystemLoader
from jsonschema import ValidationError as SchemaError
from jsonschema import validate

from numerics.domain_grid import Grid, build_grid
from numerics.entropy_profiles import GridDensity, exact_profile, profile_truncation_radius
from numerics.errors import ConfigError, JkoLabError, RegimeError
from numerics.schemas.domain import DEFAULT_TRUNCATION_RADIUS, Domain
from numerics.schemas.reports import CheckResult, CheckStatus, RunStatus, RunSummary
from numerics.schemas.run_config import BumpShape, InitialDatumSpec, InitialSource, RunConfig
from numerics.schemas.scheme import ProfileKind, SchemeParams
from numerics.utils.file_utils import dump_field, generate_md5, load_field, write_csv, write_json
from pipelines.ab_estimates import ab_check_trajectory, linfty_bound_check
from pipelines.jko_1d import (
    SchemeTrajectory,
    energy_dissipation,
    propagation_of_bounds,
    psi_sign_check,
    run_scheme,
    zero_set_check,
)
from pipelines.jko_2d_entropic import boundary_behavior_check, run_scheme_2d, spectral_heat_reference
from pipelines.utils.pipeline_utils import timed

log = logging.getLogger(__name__)

SOURCE_DIR = Path(__file__).resolve().parents[1]
SCHEMA_PATH = SOURCE_DIR / "summary_schema.json"
TEMPLATE_DIR = SOURCE_DIR / "templates"
TRUNCATION_MASS_TOL = 1e-8

TRAJECTORY_FIELDS = [
    "k", "t", "entropy", "entropy_lagrangian", "w2_step", "residual", "eulerian_residual",
    "min_rho", "max_rho", "mass", "objective", "iterations", "std",
]

_jinja = Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)), keep_trailing_newline=True)

with open(SCHEMA_PATH, encoding="utf-8") as _fh:
    SUMMARY_SCHEMA = json.load(_fh)


# ── initial data ────────────────────────────────────────────────────


def _bump(spec, X: np.ndarray, grid: Grid) -> np.ndarray:
    d = grid.d
    if spec.shape is BumpShape.COSINE:
        modes = (list(spec.modes) + [0] * d)[:d]
        phase = 0.0
        for axis, (k, (lo, _), L) in enumerate(zip(modes, grid.domain.bounds, grid.domain.lengths)):
            x = X if d == 1 else X[..., axis]
            phase = phase + 2.0 * math.pi * k * (x - lo) / L
        return spec.amplitude * np.cos(phase)
    c = np.asarray(spec.center, dtype=float).reshape(d)
    diff = X - c[0] if d == 1 else X - c
    if grid.domain.is_periodic:
        L = np.asarray(grid.domain.lengths)
        diff = diff - (L[0] if d == 1 else L) * np.round(diff / (L[0] if d == 1 else L))
    r2 = diff * diff if d == 1 else np.sum(diff * diff, axis=-1)
    if spec.shape is BumpShape.GAUSSIAN:
        return spec.amplitude * np.exp(-0.5 * r2 / spec.width**2)
    return spec.amplitude * (r2 <= spec.width**2).astype(float)


def initial_density(spec: InitialDatumSpec, grid: Grid, params: SchemeParams, time_offset: float = 0.0) -> GridDensity:
    """Materialize the configured initial datum as a unit-mass grid density."""
    try:
        if spec.source is InitialSource.PROFILE:
            t0 = spec.t0 if spec.t0 is not None else time_offset
            if not t0 > 0.0:
                raise ConfigError("profile data need t0 > 0 (or a positive scheme.time_offset)")
            return exact_profile(spec.profile, params, t0, grid, spec.center)
        if spec.source is InitialSource.FILE:
            path = Path(spec.path)
            if not path.exists():
                raise ConfigError(f"initial datum file not found: {path}")
            values = np.load(path) if path.suffix == ".npy" else load_field(path)
            if values.shape != grid.shape:
                raise ConfigError(f"initial datum shape {values.shape} does not match grid {grid.shape}")
            return GridDensity.normalized(grid, values)
        X = grid.centers()
        values = np.full(grid.shape, spec.background, dtype=float)
        for bump in spec.bumps:
            values = values + _bump(bump, X, grid)
        return GridDensity.normalized(grid, values)
    except (ValueError, OSError) as err:
        raise ConfigError(f"invalid initial datum: {err}") from err


def datum_truncation_radius(
    spec: InitialDatumSpec, params: SchemeParams, time_offset: float = 0.0, K: int = 0,
    tol: float = TRUNCATION_MASS_TOL,
) -> float | None:
    """Half-width of an origin-centred box holding all but `tol` of the datum's mass.

    None when the datum does not decay (file data, a positive background or
    cosine terms). A compact Barenblatt support is taken at the last step.
    """
    if spec.source is InitialSource.PROFILE:
        t0 = spec.t0 if spec.t0 is not None else time_offset
        if not t0 > 0.0:
            raise ConfigError("profile data need t0 > 0 (or a positive scheme.time_offset)")
        reach = float(np.linalg.norm(spec.center)) if spec.center else 0.0
        t = t0 + K * params.tau if ProfileKind(spec.profile) is ProfileKind.BARENBLATT_PME else t0
        try:
            return reach + profile_truncation_radius(spec.profile, params, t, tol)
        except RegimeError as err:
            raise ConfigError(f"no truncation radius for the initial profile: {err}") from err
    if spec.source is InitialSource.FILE or spec.background > 0.0 or not spec.bumps:
        return None
    if any(b.shape is BumpShape.COSINE for b in spec.bumps):
        return None
    # a gaussian keeps all but tol of its mass within sqrt(2 log(1/tol)) widths (d <= 2)
    k = math.sqrt(2.0 * math.log(1.0 / tol))
    return max(
        float(np.linalg.norm(b.center)) + (k if b.shape is BumpShape.GAUSSIAN else 1.0) * b.width
        for b in spec.bumps
    )


def resolve_domain(config: RunConfig, params: SchemeParams) -> Domain:
    """The run's domain; a truncated kind given neither bounds nor radius is sized from the datum."""
    spec = config.domain
    domain = spec.build()
    if not domain.is_truncated or spec.bounds is not None or spec.radius is not None:
        return domain
    R = datum_truncation_radius(config.initial, params, config.scheme.time_offset, config.scheme.K)
    if R is None:
        log.warning(f"[WARN] the initial datum does not decay; truncating at radius {DEFAULT_TRUNCATION_RADIUS:g}")
        return domain
    log.info(f"[TRACE] truncation radius {R:.6g} keeps 1 - {TRUNCATION_MASS_TOL:g} of the initial mass")
    return Domain.of(spec.kind, radius=R)


# ── checks ──────────────────────────────────────────────────────────


def _trajectory_rows(traj: SchemeTrajectory) -> list[dict]:
    return [{"k": s.k, "t": s.t, **s.diagnostics.model_dump()} for s in traj.steps]


def _residual_check(traj: SchemeTrajectory, tol: float) -> CheckResult:
    worst = max(s.diagnostics.residual for s in traj.steps[1:])
    return CheckResult.of("optimality_residual", worst <= tol, tol - worst, tol, max_residual=worst)


def _eulerian_residual_check(traj: SchemeTrajectory, tol: float) -> CheckResult:
    worst = max(s.diagnostics.eulerian_residual or 0.0 for s in traj.steps[1:])
    return CheckResult.of("optimality_residual_eulerian", worst <= tol, tol - worst, tol, max_residual=worst)


def _sign_checks(traj: SchemeTrajectory, params: SchemeParams) -> list[CheckResult]:
    out: list[CheckResult] = []
    steps = traj.steps[1:]
    if params.m < 1.0:
        reports = [psi_sign_check(s.result, params) for s in steps]
        worst = max(r.max_value for r in reports)
        out.append(CheckResult.of("psi_sign", all(r.ok for r in reports), -worst, 0.0, max_value=worst))
    elif params.m > 1.0 and not traj.grid.domain.is_periodic:
        reports = [zero_set_check(s.result, params) for s in steps]
        worst = min(r.zero_set_min_psi for r in reports)
        out.append(CheckResult.of("zero_set_psi", all(r.ok for r in reports), worst + 1e-6, 1e-6,
                                  zero_set_min_psi=worst,
                                  edge_pressure_slack=max(r.edge_pressure_slack for r in reports)))
    return out


def _ab_checks(traj: SchemeTrajectory, config: RunConfig, out_dir: Path, artifacts: list[Path]) -> list[CheckResult]:
    checks = config.checks
    report = ab_check_trajectory(traj, traj.params, checks.item3_eps, checks.k0, checks.ratio_slack)
    artifacts.append(report.to_csv(out_dir / "ab_report.csv"))
    rows = report.rows
    ma_ok = all(r.ma_ok for r in rows)
    ratio = report.min_ma_ratio
    margin = None if ratio is None else ratio - 1.0 + max(report.max_ma_slack, checks.ratio_slack)
    out = [
        CheckResult.of("ab_item2_ma", ma_ok, margin, max(report.max_ma_slack, checks.ratio_slack),
                       min_ratio=ratio, max_delta_conv=report.max_delta_conv),
        CheckResult.of("ab_item2_lap_u", all(r.lap_u_ok for r in rows), min(r.lap_u_margin for r in rows)),
        CheckResult.of("ab_lap_p", all(r.lap_p_ok for r in rows), min(r.lap_p_margin for r in rows)),
        CheckResult.of("ab_chain", all(r.chain_ok for r in rows)),
    ]
    late = [r for r in rows if r.item3_ok is not None]
    if late:
        out.append(CheckResult.of("ab_item3", all(r.item3_ok for r in late), min(r.item3_margin for r in late),
                                  k0=report.k0, eps=report.item3_eps))
    else:
        out.append(CheckResult(name="ab_item3", status=CheckStatus.SKIPPED, details={"k0": report.k0}))
    pairs = [r.one_step_ok for r in rows if r.one_step_ok is not None]
    if pairs:
        out.append(CheckResult.of("ab_one_step", all(pairs)))
    return out


def _reference_check(traj: SchemeTrajectory, config: RunConfig) -> CheckResult:
    last = traj.steps[-1]
    if config.checks.heat_reference:
        ref = spectral_heat_reference(traj.steps[0].rho, last.t - traj.time_offset)
        name = "heat_reference_l1"
    else:
        spec = config.initial
        t0 = spec.t0 if spec.t0 is not None else traj.time_offset
        ref = exact_profile(spec.profile, traj.params, t0 + (last.t - traj.time_offset), traj.grid, spec.center)
        name = "profile_reference_l1"
    err = traj.grid.integrate(np.abs(last.rho.values - ref.values))
    tol = config.checks.reference_l1_tol
    return CheckResult.of(name, err <= tol, tol - err, tol, l1_error=err, t=last.t)


def run_checks(traj: SchemeTrajectory, config: RunConfig, out_dir: Path, artifacts: list[Path]) -> list[CheckResult]:
    checks = config.checks
    params = traj.params
    d = traj.grid.d
    out: list[CheckResult] = []
    with timed("checks"):
        if checks.optimality:
            tol = checks.residual_tol if d == 1 else max(checks.residual_tol, config.solver.tol)
            out.append(_residual_check(traj, tol))
            if d == 1:
                out.append(_eulerian_residual_check(traj, checks.eulerian_residual_tol))
                out.extend(_sign_checks(traj, params))
        if checks.energy and d == 1:
            worst = max(energy_dissipation(traj))
            out.append(CheckResult.of("energy_dissipation", worst <= checks.energy_tol, checks.energy_tol - worst,
                                      checks.energy_tol, max_increment=worst))
        if checks.bounds:
            b = propagation_of_bounds(traj)
            out.append(CheckResult.of("propagation_of_bounds", b.ok, min_over_k=b.min_over_k, max_over_k=b.max_over_k))
        if checks.ab:
            out.extend(_ab_checks(traj, config, out_dir, artifacts))
        if checks.linfty is not None:
            spec = checks.linfty
            t0 = spec.t0 if spec.t0 is not None else traj.steps[1].t
            rep = linfty_bound_check(traj, tuple(spec.center) if d == 2 else spec.center[0], spec.radius, t0, params)
            margin = None if rep.bound_M is None else rep.bound_M - rep.sup_norm
            out.append(CheckResult.of("linfty_bound", rep.ok, margin, sup_norm=rep.sup_norm, bound_M=rep.bound_M,
                                      decay_exponent=rep.decay_exponent, surrogate=rep.surrogate))
        if checks.heat_reference or checks.profile_reference:
            out.append(_reference_check(traj, config))
        if checks.boundary:
            last = traj.steps[-1].result
            rep = boundary_behavior_check(last.barycentric, last.eps)
            face_tol = 3.0 * (last.eps + rep.h)
            out.append(CheckResult.of("boundary_corner", rep.corner_err <= 0.05, 0.05 - rep.corner_err, 0.05))
            out.append(CheckResult.of("boundary_face", rep.face_err <= face_tol, face_tol - rep.face_err, face_tol))
    return out


# ── artifacts ───────────────────────────────────────────────────────


def _dump_fields(traj: SchemeTrajectory, out_dir: Path, every: int, artifacts: list[Path]) -> None:
    domain = traj.grid.domain
    bounds = [list(b) for b in domain.bounds]
    fields = out_dir / "fields"
    for step in traj.steps:
        if step.k % every and step.k != traj.steps[-1].k:
            continue
        artifacts.extend(dump_field(fields, "rho", step.k, step.rho.values, domain.kind.value, bounds))
        if step.result is not None and traj.grid.d == 2:
            artifacts.extend(dump_field(fields, "u", step.k, step.result.u, domain.kind.value, bounds))
            artifacts.extend(dump_field(fields, "psi", step.k, step.result.psi, domain.kind.value, bounds))


def write_summary(summary: RunSummary, out_dir: Path) -> Path:
    """Validate against summary_schema.json, then write summary.json and report.md."""
    payload = summary.model_dump(mode="json")
    try:
        validate(instance=payload, schema=SUMMARY_SCHEMA)
    except SchemaError as err:
        log.error(f"[ERROR] summary.json does not match its schema: {err.message}")
        raise
    path = write_json(out_dir / "summary.json", payload)
    report = _jinja.get_template("report.md.j2").render(summary=payload)
    (out_dir / "report.md").write_text(report, encoding="utf-8")
    return path


def run_pipeline(config: RunConfig, out_dir: str | Path, seed: int = 0, dump_fields: bool | None = None) -> RunSummary:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: list[Path] = []
    checks: list[CheckResult] = []
    error: str | None = None
    params = config.params()
    log.info(f"[TRACE] run '{config.name}' d={params.d} m={params.m:g} tau={params.tau:g} K={config.scheme.K}")
    domain = resolve_domain(config, params)

    try:
        with timed("0-initial_datum"):
            grid = build_grid(domain, config.grid.n)
            rho0 = initial_density(config.initial, grid, params, config.scheme.time_offset)
        with timed("1-trajectory"):
            if params.d == 1:
                traj = run_scheme(
                    rho0, params, config.scheme.K, config.solver.tol, config.solver.method.value,
                    config.grid.quantiles, config.scheme.time_offset,
                )
            else:
                traj = run_scheme_2d(
                    rho0, params, config.scheme.K, config.solver.eps, config.solver.tol,
                    config.solver.sinkhorn_tol, config.scheme.time_offset, config.solver.max_cells,
                )
        artifacts.append(write_csv(out_dir / "trajectory.csv", _trajectory_rows(traj), TRAJECTORY_FIELDS))
        if dump_fields if dump_fields is not None else config.output.dump_fields:
            _dump_fields(traj, out_dir, config.output.dump_every, artifacts)
        with timed("2-checks"):
            checks = run_checks(traj, config, out_dir, artifacts)
    except ConfigError:
        raise
    except JkoLabError as err:
        error = f"{type(err).__name__}: {err}"
        log.error(f"[ERROR] run '{config.name}' aborted: {error}")

    failed = [c.name for c in checks if not c.ok]
    if error is not None:
        status = RunStatus.RUNTIME_ERROR
    elif failed:
        status = RunStatus.CHECK_FAILED
        log.error(f"[ERROR] failed checks: {', '.join(failed)}")
    else:
        status = RunStatus.PASSED
    summary = RunSummary(
        run_name=config.name,
        status=status,
        exit_code=status.exit_code,
        seed=seed,
        params={**params.model_dump(), "K": config.scheme.K, "time_offset": config.scheme.time_offset,
                "eps": config.solver.eps, "domain": config.domain.kind.value,
                "bounds": [list(b) for b in domain.bounds]},
        checks=checks,
        artifacts={p.relative_to(out_dir).as_posix(): generate_md5(p) for p in artifacts},
        error=error,
    )
    write_summary(summary, out_dir)
    log.info(f"[CHECK] run '{config.name}' finished with {status.value}")
    return summary


__all__ = [
    "datum_truncation_radius",
    "initial_density",
    "resolve_domain",
    "run_checks",
    "run_pipeline",
    "write_summary",
    "SUMMARY_SCHEMA",
]
