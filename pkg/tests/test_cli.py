import json
import subprocess
import sys

import pytest

from elnetsim.cli import main


def test_validate(table1_path, capsys):
    assert main(["validate", str(table1_path)]) == 0
    assert "N=6, n=1, M=6" in capsys.readouterr().out


def test_rates(table1_path, capsys):
    assert main(["rates", str(table1_path)]) == 0
    out = capsys.readouterr().out.split()
    assert out == ["k1=1.0", "k2=5.0", "k3=12.0", "beta=2.4"]


def test_run_and_certify(table1_path, tmp_path, capsys):
    assert main(["run", str(table1_path), "--out", str(tmp_path)]) == 0
    assert "PASS" in capsys.readouterr().out
    report = tmp_path / "again.json"
    assert main(["certify", str(tmp_path / "table1.csv"), str(table1_path), "--report", str(report)]) == 0
    assert json.loads(report.read_text())["ok"] is True


def test_certify_failure_exit_code(table1_path, tmp_path):
    assert main(["run", str(table1_path), "--out", str(tmp_path)]) == 0
    # certify the trace against gains it was not produced with
    data = json.loads(table1_path.read_text())
    data["controller"]["gains"]["K"] = 30.0
    other = tmp_path / "other.json"
    other.write_text(json.dumps(data))
    assert main(["certify", str(tmp_path / "table1.csv"), str(other)]) == 1


def test_run_parallel(scenario_paths, tmp_path):
    paths = [str(scenario_paths["table1"]), str(scenario_paths["ring_sync_backstepping"])]
    assert main(["run", *paths, "--out", str(tmp_path), "--jobs", "2"]) == 0
    assert (tmp_path / "table1.csv").exists() and (tmp_path / "ring_sync_backstepping.csv").exists()


def test_usage_errors(table1_path, tmp_path, capsys):
    assert main(["validate", str(tmp_path / "absent.json")]) == 2
    data = json.loads(table1_path.read_text())
    del data["graph"]["edges"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    assert main(["validate", str(bad)]) == 2
    assert "edges" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["run", str(bad), "--jobs", "0"])
    assert info.value.code == 2


def test_run_reports_bad_file(table1_path, tmp_path):
    assert main(["run", str(table1_path), str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 2


def test_seed_from_environment(scenario_paths, tmp_path):
    path = str(scenario_paths["ring_sync_backstepping"])
    runs = []
    for seed in ("11", "11", "12"):
        out = tmp_path / seed / str(len(runs))
        env = {"ELNETSIM_SEED": seed, "PATH": ""}
        subprocess.run([sys.executable, "-m", "elnetsim", "run", path, "--out", str(out)],
                       check=True, env=env, capture_output=True)
        runs.append((out / "ring_sync_backstepping.csv").read_bytes())
    assert runs[0] == runs[1]
    assert runs[0] != runs[2]
