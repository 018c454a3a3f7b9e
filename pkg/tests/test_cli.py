import csv
import json

import jsonschema
import pytest

from maplab.cli import main, schema
from maplab.core import dump_instance, load_instance
from maplab.offline import random_instance


@pytest.fixture
def inst_file(tmp_path):
    path = tmp_path / "inst.json"
    dump_instance(random_instance(3, 5, 0, "weighted-hinge"), path)
    return str(path)


def test_run_summary_is_byte_identical(inst_file, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["run", "--algo", "wstar", "--instance", inst_file, "--summary", str(out),
                     "--oracle", "--grid", "12"]) == 0
    assert a.read_bytes() == b.read_bytes()
    data = json.loads(a.read_text())
    jsonschema.validate(data, schema())
    assert data["total"] == pytest.approx(data["service"] + data["movement"])
    assert data["offline"] > 0 and data["ratio"] is not None


def test_run_trace_and_plot(inst_file, tmp_path):
    trace = tmp_path / "t.csv"
    assert main(["run", "--algo", "tree", "--instance", inst_file, "--trace", str(trace),
                 "--plot", "--summary", str(tmp_path / "s.json")]) == 0
    rows = list(csv.reader(open(trace)))
    assert len(rows) > 2 and "t" in rows[0]
    assert (tmp_path / "t.png").stat().st_size > 0


def test_empty_instance(tmp_path, capsys):
    path = tmp_path / "e.json"
    path.write_text(json.dumps({"metric": {"type": "star", "weights": [1, 1]}, "phases": []}))
    assert main(["run", "--algo", "tree", "--instance", str(path)]) == 0
    assert json.loads(capsys.readouterr().out)["total"] == 0


def test_verify_clean_and_fault(inst_file, tmp_path):
    rep = tmp_path / "rep.json"
    args = ["verify", "--algo", "wstar", "--instance", inst_file, "--grid", "10",
            "--summary", str(tmp_path / "s.json")]
    assert main(args + ["--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["violations"] == []
    assert main(args + ["--offline", "random"]) == 0
    assert main(args + ["--inject-fault", "1e4", "--report", str(rep)]) == 2
    bad = json.loads(rep.read_text())["violations"][0]
    assert bad["margin"] < 0 and "x" in bad


def test_verify_offline_file(inst_file, tmp_path):
    n_phases = len(load_instance(inst_file).phases)
    off = tmp_path / "off.json"
    off.write_text(json.dumps([[1 / 3] * 3] * n_phases))
    args = ["verify", "--algo", "tree", "--instance", inst_file, "--offline", "file",
            "--summary", str(tmp_path / "s.json")]
    assert main(args + ["--offline-file", str(off)]) == 0
    assert main(args) == 1
    off.write_text(json.dumps([[1 / 3] * 3]))
    assert main(args + ["--offline-file", str(off)]) == 1


def test_input_errors(tmp_path, inst_file):
    assert main(["run", "--algo", "nope", "--instance", inst_file]) == 1
    assert main(["run", "--algo", "wstar", "--instance", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"metric": {"type": "star", "weights": [1, 1]},
                               "phases": [{"r": 5, "s": 0.5, "T": 1}]}))
    assert main(["run", "--algo", "wstar", "--instance", str(bad)]) == 1
    assert main([]) == 1


def test_resource_limit(tmp_path):
    path = tmp_path / "big.json"
    dump_instance(random_instance(5, 300, 0, "uniform-hinge"), path)
    assert main(["oracle", "--instance", str(path), "--grid", "60"]) == 3


def test_oracle_reports_refinement(inst_file, tmp_path):
    out = tmp_path / "o.json"
    assert main(["oracle", "--instance", inst_file, "--grid", "8", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["cost_2g"] <= data["cost"] + 1e-12


def test_config_file_and_env(inst_file, tmp_path, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# coarse\nepsilon = 0.5\ngrid=6\n")
    out = tmp_path / "s.json"
    assert main(["run", "--algo", "wstar", "--instance", inst_file, "--config", str(cfg),
                 "--summary", str(out)]) == 0
    assert json.loads(out.read_text())["params"]["epsilon"] == 0.5
    # flags override the file
    assert main(["run", "--algo", "wstar", "--instance", inst_file, "--config", str(cfg),
                 "--epsilon", "0.1", "--summary", str(out)]) == 0
    assert json.loads(out.read_text())["params"]["epsilon"] == 0.1
    monkeypatch.setenv("MAP_LAB_CONFIG", str(cfg))
    assert main(["run", "--algo", "wstar", "--instance", inst_file, "--summary", str(out)]) == 0
    assert json.loads(out.read_text())["params"]["epsilon"] == 0.5
    cfg.write_text("bogus = 1\n")
    assert main(["run", "--algo", "wstar", "--instance", inst_file]) == 1


def test_encode_commands(tmp_path, inst_file):
    costs = tmp_path / "c.json"
    costs.write_text(json.dumps([[1, 0], [0, 2]]))
    out = tmp_path / "m.json"
    assert main(["encode", "mts", "--costs", str(costs), "--out", str(out)]) == 0
    assert len(load_instance(out).phases) == 2
    assert main(["encode", "kserver", "--requests", "0,2,1", "--n", "3", "--k", "2",
                 "--offsets", "0.1,0,0.1", "--out", str(out)]) == 0
    assert len(load_instance(out).phases) == 9
    assert main(["encode", "flip", "--instance", inst_file, "--out", str(out)]) == 0
    assert main(["encode", "penalty", "--instance", inst_file, "--a", "10", "--out", str(out)]) == 0
    assert len(load_instance(out).phases) == 5 * 4
    assert main(["encode", "kserver", "--n", "3"]) == 1


def test_embed_command(tmp_path):
    m = tmp_path / "d.json"
    m.write_text(json.dumps([[0, 1, 2], [1, 0, 1], [2, 1, 0]]))
    out = tmp_path / "t.json"
    assert main(["embed", "--matrix", str(m), "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["point_map"] == [0, 1, 2]
    m.write_text(json.dumps([[0, 1, 5], [1, 0, 1], [5, 1, 0]]))
    assert main(["embed", "--matrix", str(m)]) == 1


def test_lowerbound_and_bench(tmp_path):
    out, csvp = tmp_path / "lb.json", tmp_path / "lb.csv"
    assert main(["lowerbound", "--n", "3,4", "--rounds", "50", "--csv", str(csvp), "--plot",
                 "--out", str(out)]) == 0
    rows = json.loads(out.read_text())["rows"]
    assert [r["n"] for r in rows] == [3, 4]
    assert (tmp_path / "lb.png").exists()
    assert main(["lowerbound", "--algo", "wstar", "--n", "3", "--rounds", "5"]) == 1
    out = tmp_path / "b.json"
    assert main(["bench", "--family", "uniform-hinge", "--n", "2,6", "--seeds", "2",
                 "--phases", "3", "--grid", "8", "--out", str(out)]) == 0
    table = json.loads(out.read_text())["table"]
    assert [t["n"] for t in table] == [2, 6] and all(t["runs"] == 2 for t in table)
