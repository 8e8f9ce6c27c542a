import json

import pytest

import runner
from pipelines import verify_suites

TINY = """
name = "tiny-heat"

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


def test_ab_seq_prints_csv(capsys):
    assert runner.main(["ab-seq", "1", "2", "4"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "k,X_k,one_minus_X_k,k_alpha_X_k"
    assert lines[1].startswith("1,1.0,0.0,")
    assert len(lines) == 5


def test_ab_seq_writes_csv(tmp_path, capsys):
    assert runner.main(["ab-seq", "2", "1", "3", "--csv", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "ab_sequence.csv").read_text().splitlines()[0] == "k,X_k,one_minus_X_k,k_alpha_X_k"


def test_ab_seq_bad_regime_is_a_config_error(capsys):
    assert runner.main(["ab-seq", "2", "0.0", "4"]) == 2
    assert runner.main(["ab-seq", "1", "2", "0"]) == 2


def test_run_missing_config(tmp_path):
    assert runner.main(["run", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == 2


def test_run_invalid_config(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text(TINY.replace("n = 16", "n = [16, 16]"))
    assert runner.main(["run", str(path), "--out", str(tmp_path / "out")]) == 2


def test_run_writes_reports(tmp_path, capsys):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    out = tmp_path / "out"
    code = runner.main(["run", str(path), "--out", str(out), "--seed", "3"])
    assert code in (0, 1)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["run_name"] == "tiny-heat"
    assert summary["seed"] == 3
    assert summary["exit_code"] == code
    assert "trajectory.csv" in summary["artifacts"]
    assert (out / "report.md").exists()


def test_unknown_suite_is_rejected_by_argparse():
    with pytest.raises(SystemExit) as exc:
        runner.main(["verify", "no-such-suite"])
    assert exc.value.code == 2


def test_verify_writes_status_and_summary(tmp_path, monkeypatch, capsys):
    monkeypatch.setitem(
        verify_suites.SUITES, "ot1d-oracle",
        lambda rng, threads: verify_suites.suite_ot1d_oracle(rng, threads, instances=10),
    )
    code = runner.main(["verify", "ot1d-oracle", "--out", str(tmp_path), "--seed", "5", "--threads", "2"])
    assert code == 0
    status = json.loads((tmp_path / "ot1d-oracle_status.json").read_text())
    assert status["name"] == "ot1d-oracle"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "PASSED"
    assert summary["params"] == {"suite": "ot1d-oracle", "threads": 2}
    assert "ot1d-oracle_status.json" in summary["artifacts"]
