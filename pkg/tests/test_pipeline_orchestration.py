import json
import math

import jsonschema
import numpy as np
import pytest
from scipy import integrate

from numerics.domain_grid import build_grid
from numerics.entropy_profiles import exact_profile_values
from numerics.errors import ConfigError, ConvergenceError
from numerics.schemas.domain import DEFAULT_TRUNCATION_RADIUS, Domain
from numerics.schemas.reports import CheckResult, CheckStatus, RunStatus, RunSummary, SuiteReport
from numerics.schemas.run_config import InitialDatumSpec, RunConfig
from numerics.schemas.scheme import ProfileKind, SchemeParams
from numerics.utils.file_utils import dump_field
from pipelines import pipeline_orchestration
from pipelines.pipeline_orchestration import (
    SUMMARY_SCHEMA,
    datum_truncation_radius,
    initial_density,
    resolve_domain,
    run_pipeline,
    write_summary,
)

PARAMS = SchemeParams(m=1.0, tau=1e-3, d=1)


def _config(**overrides) -> RunConfig:
    raw = {
        "name": "orchestration",
        "domain": {"kind": "Torus1"},
        "grid": {"n": 16},
        "scheme": {"m": 1.0, "tau": 1e-3, "K": 2},
        "initial": {"source": "expression", "bumps": [{"shape": "cosine", "amplitude": 0.3, "modes": [1]}]},
        "checks": {"bounds": True},
    }
    raw.update(overrides)
    return RunConfig.model_validate(raw)


def test_exit_codes():
    assert RunStatus.PASSED.exit_code == 0
    assert RunStatus.CHECK_FAILED.exit_code == 1
    assert RunStatus.RUNTIME_ERROR.exit_code == 1
    assert RunStatus.CONFIG_ERROR.exit_code == 2


def test_check_result_drops_infinite_margins():
    check = CheckResult.of("ratio", True, float("inf"), 0.1, worst=3)
    assert check.margin is None and check.slack == 0.1
    assert check.details == {"worst": 3}
    assert CheckResult(name="late", status=CheckStatus.SKIPPED).ok
    suite = SuiteReport(name="s", checks=[check, CheckResult.of("bad", False)])
    assert suite.status is CheckStatus.FAIL
    assert suite.failures == ["bad"]


def test_expression_datum_is_normalized():
    grid = build_grid(Domain.of("Torus1"), 32)
    spec = InitialDatumSpec.model_validate({
        "source": "expression", "background": 1.0,
        "bumps": [{"shape": "gaussian", "amplitude": 2.0, "center": [0.9], "width": 0.05}],
    })
    rho = initial_density(spec, grid, PARAMS)
    assert rho.mass == pytest.approx(1.0)
    x = grid.axis_centers(0)
    # the gaussian wraps across x = 1: cells 0.115625 either side of the centre agree
    left, right = np.argmin(np.abs(x - 0.784375)), np.argmin(np.abs(x - 0.015625))
    assert rho.values[left] == pytest.approx(rho.values[right], rel=1e-12)
    assert rho.values[right] > rho.values[np.argmin(np.abs(x - 0.5))]


def test_indicator_datum_on_square():
    grid = build_grid(Domain.of("Square"), 8)
    spec = InitialDatumSpec.model_validate({
        "source": "expression", "background": 0.0,
        "bumps": [{"shape": "indicator", "center": [0.5, 0.5], "width": 0.3}],
    })
    rho = initial_density(spec, grid, SchemeParams(m=1.0, tau=1e-3, d=2))
    assert rho.values[0, 0] == 0.0
    assert rho.values[3, 4] > 0.0
    assert rho.mass == pytest.approx(1.0)


def test_file_datum(tmp_path):
    grid = build_grid(Domain.of("Torus1"), 16)
    bin_path, _ = dump_field(tmp_path, "rho", 0, np.linspace(1.0, 2.0, 16), "Torus1", [[0.0, 1.0]])
    rho = initial_density(InitialDatumSpec(source="file", path=bin_path), grid, PARAMS)
    assert rho.mass == pytest.approx(1.0)
    assert np.all(np.diff(rho.values) > 0.0)
    np.save(tmp_path / "short.npy", np.ones(8))
    with pytest.raises(ConfigError):
        initial_density(InitialDatumSpec(source="file", path=tmp_path / "short.npy"), grid, PARAMS)


def test_profile_datum_needs_positive_time():
    grid = build_grid(Domain.of("TruncatedLine", radius=8.0), 64)
    params = SchemeParams(m=1.0, tau=1e-2, d=1, truncated=True)
    spec = InitialDatumSpec(source="profile", profile="GaussianHeat")
    with pytest.raises(ConfigError):
        initial_density(spec, grid, params, time_offset=0.0)
    assert initial_density(spec, grid, params, time_offset=0.5).mass == pytest.approx(1.0)


def test_write_summary_validates_and_renders(tmp_path):
    summary = RunSummary(
        run_name="demo", status=RunStatus.CHECK_FAILED, exit_code=1, seed=0,
        params={"m": 2.0}, checks=[CheckResult.of("a", False, -0.5, 0.0)],
    )
    path = write_summary(summary, tmp_path)
    payload = json.loads(path.read_text())
    jsonschema.validate(payload, SUMMARY_SCHEMA)
    report = (tmp_path / "report.md").read_text()
    assert report.startswith("# demo")
    assert "| a | FAIL | -5.000e-01 |" in report


def test_write_summary_rejects_inconsistent_payload(tmp_path):
    summary = RunSummary(run_name="demo", status=RunStatus.PASSED, exit_code=7, seed=0)
    with pytest.raises(jsonschema.ValidationError):
        write_summary(summary, tmp_path)


def test_pipeline_writes_artifacts(tmp_path):
    summary = run_pipeline(_config(), tmp_path, seed=11, dump_fields=True)
    assert summary.exit_code in (0, 1)
    assert summary.params["domain"] == "Torus1"
    names = set(summary.artifacts)
    assert {"trajectory.csv", "ab_report.csv", "fields/rho_k0.bin", "fields/rho_k2.json"} <= names
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("k,t,entropy")
    assert "eulerian_residual" in header.split(",")
    checks = {c.name: c for c in summary.checks}
    assert checks["optimality_residual"].ok
    assert checks["optimality_residual_eulerian"].ok
    assert checks["optimality_residual_eulerian"].details["max_residual"] > 0.0
    assert checks["energy_dissipation"].ok
    assert checks["propagation_of_bounds"].ok


def test_pipeline_records_runtime_errors(tmp_path, monkeypatch):
    def diverge(*args, **kwargs):
        raise ConvergenceError("newton stalled", iterations=200, residual=1e-3)

    monkeypatch.setattr(pipeline_orchestration, "run_scheme", diverge)
    summary = run_pipeline(_config(), tmp_path)
    assert summary.status is RunStatus.RUNTIME_ERROR
    assert summary.exit_code == 1
    assert summary.error.startswith("ConvergenceError")
    assert summary.checks == []
    assert json.loads((tmp_path / "summary.json").read_text())["status"] == "RUNTIME_ERROR"


def test_fast_diffusion_profile_sets_a_wide_truncation():
    params = SchemeParams(m=0.5, tau=1e-3, d=1, truncated=True)
    spec = InitialDatumSpec(source="profile", profile="BarenblattFDE", t0=1.0)
    R = datum_truncation_radius(spec, params)
    assert R > DEFAULT_TRUNCATION_RADIUS
    tail, _ = integrate.quad(
        lambda r: float(exact_profile_values(ProfileKind.BARENBLATT_FDE, params, 1.0, np.array(r))), R, math.inf,
        limit=200,
    )
    assert 2.0 * tail <= 1e-8 * (1.0 + 1e-6)
    # the fixed default loses far more than 1e-8 of this profile
    default_tail, _ = integrate.quad(
        lambda r: float(exact_profile_values(ProfileKind.BARENBLATT_FDE, params, 1.0, np.array(r))),
        DEFAULT_TRUNCATION_RADIUS, math.inf, limit=200,
    )
    assert 2.0 * default_tail > 1e-8


def test_resolve_domain_sizes_truncated_kinds_from_the_datum():
    raw = {
        "domain": {"kind": "TruncatedLine"},
        "scheme": {"m": 0.5, "tau": 1e-3, "K": 2},
        "initial": {"source": "profile", "profile": "BarenblattFDE", "t0": 1.0},
    }
    config = _config(**raw)
    domain = resolve_domain(config, config.params())
    lo, hi = domain.bounds[0]
    assert lo == -hi and hi > DEFAULT_TRUNCATION_RADIUS

    pinned = _config(**{**raw, "domain": {"kind": "TruncatedLine", "radius": 4.0}})
    assert resolve_domain(pinned, pinned.params()).bounds == ((-4.0, 4.0),)

    flat = _config(domain={"kind": "TruncatedLine"})
    assert resolve_domain(flat, flat.params()).bounds == ((-DEFAULT_TRUNCATION_RADIUS, DEFAULT_TRUNCATION_RADIUS),)


def test_gaussian_bump_truncation_radius():
    params = SchemeParams(m=1.0, tau=1e-3, d=1, truncated=True)
    spec = InitialDatumSpec.model_validate({
        "source": "expression", "background": 0.0,
        "bumps": [{"shape": "gaussian", "center": [1.0], "width": 2.0}],
    })
    R = datum_truncation_radius(spec, params)
    assert R == pytest.approx(1.0 + 2.0 * math.sqrt(2.0 * math.log(1e8)))
    assert 0.5 * math.erfc((R - 1.0) / (2.0 * math.sqrt(2.0))) <= 1e-8
