import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gohcert.cli import main
from gohcert.io import (ParseError, multiplier_from_toml, multiplier_to_toml, problem_from_toml, problem_to_toml,
                        trajectory_from_toml, trajectory_to_toml)
from gohcert.registry import registry_get, registry_names
from gohcert.report import VERDICTS, CertificationReport, exit_code_for, run_certify
from gohcert.selftest import format_report, run_selftest


def _certify(capsys, *args):
    code = main(["certify", *args])
    out, err = capsys.readouterr()
    return code, out, err


def test_reg1_second_order_with_fit(capsys):
    code, out, _ = _certify(capsys, "--registry", "REG1", "--order", "second", "--fit-multiplier")
    rep = CertificationReport.from_json(out)
    assert code == 0 and rep.exit_code == 0
    # the cone is {0} here, so the necessary condition holds vacuously
    assert rep.verdicts["second_order_necessary"] in ("PASS", "VACUOUS")
    assert rep.data["stages"]["multipliers"][0]["source"] == "fit"


def test_cb1_second_order_vacuous(capsys):
    code, out, _ = _certify(capsys, "--registry", "CB1", "--order", "second")
    rep = CertificationReport.from_json(out)
    assert code == 0
    assert rep.verdicts["second_order_necessary"] == "VACUOUS"
    assert rep.data["stages"]["cone"]["dim"] == 0


def test_cb1_sufficient_not_certified(capsys):
    code, out, err = _certify(capsys, "--registry", "CB1", "--order", "sufficient")
    rep = CertificationReport.from_json(out)
    assert code != 0
    assert rep.verdicts["legendre"] == "NOT_CERTIFIED"
    assert abs(rep.data["verdicts"]["legendre"]["evidence"]["alpha_min"]) <= 1e-12
    assert "exit code 1" in err


def test_sr1_sufficient_pass_and_srn_fail():
    rep, code = run_certify(registry="SR1", order="sufficient", N=100)
    assert code == 0 and rep.verdicts["sufficient"] == "PASS"
    rep, code = run_certify(registry="SRN", order="second", N=100)
    assert code == 1 and rep.verdicts["second_order_necessary"] == "FAIL"
    assert rep.data["stages"]["necessary"]["witness"]["omega"] < 0


@pytest.mark.parametrize("name", registry_names())
def test_report_roundtrip(name):
    rep, code = run_certify(registry=name, order="second", N=80)
    text = rep.to_json()
    assert CertificationReport.from_json(text).to_json() == text
    assert code == exit_code_for(rep.requested_verdicts) == rep.data["exit_code"]
    for v in rep.data["verdicts"].values():
        assert v["verdict"] in VERDICTS and isinstance(v["evidence"], dict)


def test_report_schema_version_checked():
    with pytest.raises(ValueError):
        CertificationReport.from_json(json.dumps({"schema_version": 99}))


@given(st.dictionaries(st.text(min_size=1, max_size=5), st.sampled_from(VERDICTS), max_size=6))
def test_exit_code_is_pure_function_of_verdicts(verdicts):
    code = exit_code_for(verdicts)
    assert code == exit_code_for(dict(reversed(list(verdicts.items()))))
    assert code == (0 if all(v in ("PASS", "VACUOUS") for v in verdicts.values()) else 1)


def test_exit_code_rejects_unknown_verdict():
    with pytest.raises(ValueError):
        exit_code_for({"a": "MAYBE"})


@pytest.mark.parametrize("name", registry_names())
def test_toml_roundtrip(name):
    e = registry_get(name, 30)
    text = problem_to_toml(e.spec)
    assert problem_to_toml(problem_from_toml(text)) == text
    ttext = trajectory_to_toml(e.traj)
    traj = trajectory_from_toml(ttext)
    assert trajectory_to_toml(traj) == ttext
    assert np.array_equal(traj.x, e.traj.x) and traj.arcs == e.traj.arcs


def test_multiplier_roundtrip(registry):
    e, lam = registry["REG1"]
    text = multiplier_to_toml(lam)
    back = multiplier_from_toml(text, e.traj)
    assert multiplier_to_toml(back) == text
    assert back.atom_mass[-1] == lam.atom_mass[-1]


def test_parse_error_has_location(tmp_path, capsys):
    e = registry_get("REG1", 20)
    (tmp_path / "traj.toml").write_text(trajectory_to_toml(e.traj))
    (tmp_path / "bad.toml").write_text("n = 2\nT = ?\n")
    code, _, err = _certify(capsys, "--problem", str(tmp_path / "bad.toml"), "--trajectory", str(tmp_path / "traj.toml"))
    assert code == 2
    assert "line 2" in err and "column" in err
    with pytest.raises(ParseError, match="line 2"):
        problem_from_toml("n = 2\nT = ?\n")


def test_missing_key_and_bad_shapes():
    with pytest.raises(ParseError, match="'T'"):
        problem_from_toml("n = 2\n[f0]\n[f1]\n[g]\n")
    e = registry_get("REG1", 20)
    with pytest.raises(ParseError, match="grid"):
        multiplier_from_toml("beta = 1.0\np_minus = [[0.0, 0.0]]\np_plus = [[0.0, 0.0]]\n", e.traj)


def test_cli_error_exits(capsys, tmp_path):
    assert _certify(capsys, "--registry", "NOPE")[0] == 2
    assert _certify(capsys, "--registry", "REG1", "--tol", "bogus=1")[0] == 2
    assert _certify(capsys, "--problem", str(tmp_path / "missing.toml"), "--trajectory", "x")[0] == 2
    assert _certify(capsys, "--problem", str(tmp_path / "p.toml"))[0] == 2


def test_tolerance_override_recorded(capsys):
    code, out, _ = _certify(capsys, "--registry", "REG1", "--tol", "stat_tol=1e-5", "--grid", "100")
    rep = CertificationReport.from_json(out)
    assert rep.data["provenance"]["tolerances"]["stat_tol"] == 1e-5
    assert rep.data["provenance"]["grid"]["intervals"] == 100


def test_dump_then_certify_from_files(tmp_path, capsys):
    assert main(["dump", "--registry", "CBQ", "--grid", "100", "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    report = tmp_path / "report.json"
    code, _, _ = _certify(capsys, "--problem", str(tmp_path / "problem.toml"),
                          "--trajectory", str(tmp_path / "trajectory.toml"),
                          "--multiplier", str(tmp_path / "multiplier.toml"),
                          "--order", "second", "--report", str(report), "--csv-dir", str(tmp_path / "csv"))
    rep = CertificationReport.from_json(report.read_text())
    assert code == 0
    assert rep.verdicts["multiplier_validity"] == "PASS"
    assert set(rep.data["provenance"]["inputs"]) == {str(tmp_path / f) for f in
                                                     ("problem.toml", "trajectory.toml", "multiplier.toml")}
    with (tmp_path / "csv" / "nodes.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "u", "x_1", "x_2", "x_3", "p_1", "p_2", "p_3", "nu", "g", "H_u", "R"]
    assert len(rows) == 102
    assert (tmp_path / "csv" / "fields.csv").exists()


def test_selftest_corrupt_fails_dynamics(capsys):
    results = run_selftest(0, corrupt=True, n_random=2)
    by_name = {r.name: r for r in results}
    assert not by_name["dynamics_residual_reintegration"].passed


def test_selftest_seed0_all_pass_and_deterministic():
    a = format_report(run_selftest(0), 0)
    assert a.endswith("summary: 16/16 properties pass\n")
    assert format_report(run_selftest(0), 0) == a


@pytest.mark.parametrize("seed", range(1, 11))
def test_selftest_verdicts_independent_of_seed(seed):
    assert all(r.passed for r in run_selftest(seed))
