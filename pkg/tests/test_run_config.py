from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from numerics.errors import ConfigError
from numerics.schemas.run_config import InitialSource, RunConfig, load_run_config

CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.toml"))

MINIMAL = """
name = "tiny"

[domain]
kind = "Torus1"

[grid]
n = 16

[scheme]
m = 1.0
tau = 1e-3
K = 2

[initial]
source = "expression"

[[initial.bumps]]
shape = "cosine"
amplitude = 0.3
modes = [1]
"""


def _raw(**overrides) -> dict:
    raw = {
        "domain": {"kind": "Torus1"},
        "grid": {"n": 16},
        "scheme": {"m": 1.0, "tau": 1e-3, "K": 2},
        "initial": {"source": "expression"},
    }
    for key, value in overrides.items():
        raw[key] = value
    return raw


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    config = load_run_config(path)
    assert config.scheme.K >= 1
    assert config.params().d == config.d


def test_minimal_config_defaults(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(MINIMAL)
    config = load_run_config(path)
    assert config.name == "tiny"
    assert config.seed is None
    assert config.solver.tol == 1e-9
    assert config.solver.method.value == "newton"
    assert config.checks.item3_eps == 0.1
    assert config.output.dir is None
    assert config.initial.source is InitialSource.EXPRESSION


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.toml")


def test_bad_toml_is_a_config_error(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[domain\nkind = Torus1")
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_file_datum_resolves_next_to_config(tmp_path):
    np.save(tmp_path / "rho0.npy", np.ones(16))
    path = tmp_path / "file.toml"
    path.write_text(MINIMAL.split("[initial]")[0] + '[initial]\nsource = "file"\npath = "rho0.npy"\n')
    config = load_run_config(path)
    assert config.initial.path == tmp_path / "rho0.npy"
    (tmp_path / "rho0.npy").unlink()
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_unknown_keys_are_rejected():
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(scheme={"m": 1.0, "tau": 1e-3, "K": 2, "steps": 3}))


def test_two_dimensional_runs_need_eps():
    raw = _raw(domain={"kind": "Torus2"})
    with pytest.raises(ValidationError):
        RunConfig.model_validate(raw)
    raw["solver"] = {"eps": 1e-2}
    assert RunConfig.model_validate(raw).d == 2


def test_cell_counts_match_dimension():
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(grid={"n": [16, 16]}))
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(grid={"n": 3}))


def test_regime_is_gated_before_running():
    # truncated lines need m > 1/3
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(domain={"kind": "TruncatedLine", "radius": 4.0},
                                      scheme={"m": 0.3, "tau": 1e-3, "K": 2}))
    assert RunConfig.model_validate(_raw(domain={"kind": "Torus2"}, scheme={"m": 0.3, "tau": 1e-3, "K": 2},
                                         solver={"eps": 1e-2})).scheme.m == 0.3


def test_check_combinations():
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(domain={"kind": "Interval"}, checks={"heat_reference": True}))
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(checks={"boundary": True}))
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(checks={"profile_reference": True}))


def test_datum_requirements():
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(initial={"source": "profile"}))
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(initial={"source": "file"}))
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(initial={"source": "expression", "bumps": [{"shape": "gaussian"}]}))
    with pytest.raises(ValidationError):
        RunConfig.model_validate(_raw(initial={"source": "expression", "bumps": [{"shape": "cosine"}]}))
