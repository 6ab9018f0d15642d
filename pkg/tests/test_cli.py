import csv
import json

import pytest

from lifenet.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main


def _csv(path):
    return list(csv.DictReader(path.open()))


def test_validate_builtin(capsys):
    assert main(["validate", "abilene"]) == EXIT_OK
    assert "22 layered nodes, 67 edges, 2 clients" in capsys.readouterr().out


def test_run_writes_outputs_and_manifest(tmp_path):
    out = tmp_path / "r"
    assert main(["run", "--scenario", "abilene", "--T", "1500", "--V-native", "0", "--out", str(out)]) == EXIT_OK
    rows = _csv(out / "metrics.csv")
    assert len(rows) == 1500 and rows[0]["policy"] == "proposed"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["T"] == 1500 and summary["V"] == 0.0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "run" and man["effective"]["T"] == 1500
    assert set(man["outputs"]) == {"metrics.csv", "gap.csv", "summary.json"}


def test_manifest_replay_is_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--scenario", "abilene", "--T", "1e3", "--seed", "9", "--V", "100", "--out", str(a)]) == 0
    assert main(["run", "--manifest", str(a / "manifest.json"), "--out", str(b)]) == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"]
    assert ma["effective"]["V_native"] == pytest.approx(1.0)


def test_stride_and_dcnc(tmp_path):
    out = tmp_path / "d"
    assert main(["run", "--scenario", "abilene", "--policy", "dcnc", "--T", "1000", "--stride", "100",
                 "--V-native", "1", "--out", str(out)]) == 0
    rows = _csv(out / "metrics.csv")
    assert [int(r["slot"]) for r in rows] == list(range(0, 1000, 100))
    assert rows[0]["policy"] == "dcnc"


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LIFENET_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["run", "--scenario", "abilene", "--T", "200"]) == 0
    assert (tmp_path / "env" / "summary.json").exists()


def test_capacity_table(tmp_path, capsys):
    out = tmp_path / "c"
    assert main(["capacity", "--scenario", "abilene", "--L", "6", "7", "--export-lp", "--out", str(out)]) == 0
    rows = _csv(out / "capacity.csv")
    assert [r["L"] for r in rows] == ["6", "7"]
    assert float(rows[0]["theta_star"]) == pytest.approx(50 / 9, abs=1e-3)
    assert float(rows[0]["h_star"]) == pytest.approx(4.4)
    assert (out / "capacity_L7.lp").read_text().startswith("\\ capacity L=7")
    assert "theta*" in capsys.readouterr().out


def test_capacity_infeasible_exit(tmp_path):
    args = ["capacity", "--scenario", "abilene", "--L", "6", "--lambda-scale", "8", "--out", str(tmp_path)]
    assert main(args) == 0
    assert main(args + ["--require-feasible"]) == EXIT_INFEASIBLE
    assert _csv(tmp_path / "capacity.csv")[0]["h_star"] == ""


def test_sweep_policies_and_replications(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "--scenario", "abilene", "--axis", "V", "--values", "0", "1000", "--native",
                 "--policies", "proposed", "dcnc", "--replications", "2", "--T", "400", "--out", str(out)]) == 0
    rows = _csv(out / "sweep.csv")
    assert len(rows) == 8
    agg = _csv(out / "aggregate.csv")
    assert {(r["policy"], r["value"]) for r in agg} == {(p, v) for p in ("proposed", "dcnc") for v in ("0.0", "1000.0")}
    assert all(r["replications"] == "2" for r in agg)


def test_sweep_over_lifetimes(tmp_path):
    assert main(["sweep", "--scenario", "abilene", "--axis", "L", "--values", "5", "7", "--T", "300",
                 "--out", str(tmp_path)]) == 0
    assert [r["value"] for r in _csv(tmp_path / "sweep.csv")] == ["5", "7"]


@pytest.mark.parametrize("argv", [
    ["run", "--scenario", "missing.toml", "--T", "10"],
    ["run", "--scenario", "abilene", "--T", "-5"],
    ["run", "--scenario", "abilene", "--V-native", "-1"],
    ["run", "--T", "10"],
    ["capacity", "--scenario", "abilene", "--L"],
    ["sweep", "--scenario", "abilene", "--values"],
    ["sweep", "--scenario", "abilene", "--values", "1", "--policies"],
])
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_schema_violation_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[network]\nnum_nodes = 2\n")
    assert main(["validate", str(bad)]) == EXIT_CONFIG


def test_argparse_rejects_non_integer_horizon():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--scenario", "abilene", "--T", "2.5"])
    assert exc.value.code == 2
