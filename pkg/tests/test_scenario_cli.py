from __future__ import annotations

import json
from pathlib import Path

import pytest

from qoealloc.cli import main
from qoealloc.errors import DataIOError, ScenarioError
from qoealloc.scenario import (
    emit_report,
    load_scenario,
    run_experiment,
    scenario_from_dict,
    split_total,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
CLASS_RATIOS = {"WEB": 1, "DL": 1, "SSH": 1, "VoIP": 1, "VoD": 0.5, "Live": 0.5}


def base_doc(**over):
    doc = {
        "name": "t",
        "seed": 1,
        "topology": {
            "nodes": ["S", "C"],
            "links": [{"from": "S", "to": "C", "capacity_kbps": 10000, "delay_curve": [[0, 2], [10000, 2]]}],
        },
        "applications": [{"type": "DL", "count": 1, "src": "S", "dst": "C"}],
        "sim": {"duration_s": 4},
    }
    doc.update(over)
    return doc


def write(tmp_path, doc, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_minimal_loads_with_defaults():
    sc = load_scenario(SCENARIOS / "minimal.json")
    assert sc.solver["epsilon"] == 0.3 and sc.solver["mode"] == "exact"
    assert sc.sim["buffer_bytes"] == 1_000_000 and sc.sim["bottleneck"] == ["S", "C"] or sc.bottleneck == ("S", "C")
    assert sc.sim["base_delay_ms"] == 2.0
    echoed = sc.to_dict()
    assert echoed["solver"]["k_paths"] == sc.solver["k_paths"]


def test_missing_capacity_names_link(tmp_path):
    doc = base_doc()
    del doc["topology"]["links"][0]["capacity_kbps"]
    with pytest.raises(ScenarioError, match="S->C"):
        load_scenario(write(tmp_path, doc))


def test_parse_error_has_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "x",\n  "seed": }')
    with pytest.raises(ScenarioError, match="line 2"):
        load_scenario(path)


def test_unresolved_grid(tmp_path):
    doc = base_doc(applications=[{"type": "DL", "count": 1, "src": "S", "dst": "C", "grid": "nope.csv"}])
    with pytest.raises(ScenarioError, match="nope.csv"):
        load_scenario(write(tmp_path, doc))


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(DataIOError):
        load_scenario(tmp_path / "absent.json")


def test_sweep_expansion():
    doc = base_doc(sweep={"totals": [10, 20], "ratios": CLASS_RATIOS})
    doc["applications"] = [{"type": t, "count": 0, "src": "S", "dst": "C"} for t in CLASS_RATIOS]
    sc = scenario_from_dict(doc)
    points = sc.points()
    assert [p.id for p in points] == ["A010", "A020"]
    assert points[0].counts == {"WEB": 2, "DL": 2, "SSH": 2, "VoIP": 2, "VoD": 1, "Live": 1}
    assert sum(points[1].counts.values()) == 20


def test_sweep_must_ascend():
    doc = base_doc(sweep={"totals": [20, 10], "ratios": {"DL": 1}})
    with pytest.raises(ScenarioError, match="ascending"):
        scenario_from_dict(doc)


def test_split_total():
    assert split_total(10, CLASS_RATIOS) == {"WEB": 2, "DL": 2, "SSH": 2, "VoIP": 2, "VoD": 1, "Live": 1}
    assert split_total(120, CLASS_RATIOS)["VoD"] == 12


def test_empty_mix_point():
    doc = base_doc(applications=[{"type": "DL", "count": 0, "src": "S", "dst": "C"}])
    rep = run_experiment(scenario_from_dict(doc))
    point = rep.points[0]
    assert point.status == "ok" and point.per_app == [] and point.managed.flows == {}


def test_json_round_trip_and_reemit(tmp_path):
    rep = run_experiment(load_scenario(SCENARIOS / "minimal.json"))
    (target,) = emit_report(rep, "json", tmp_path / "a")
    assert json.loads(target.read_text()) == json.loads(json.dumps(rep.to_dict()))
    (again,) = emit_report(rep, "json", tmp_path / "b")
    assert target.read_bytes() == again.read_bytes()


def test_csv_tables(tmp_path):
    rep = run_experiment(load_scenario(SCENARIOS / "sweep_small.json"))
    files = emit_report(rep, "csv", tmp_path)
    assert sorted(f.name for f in files) == ["per_app.csv", "per_link.csv", "per_type.csv", "sweep.csv"]
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("point,total,status") and len(rows) == 1 + len(rep.points)


def test_unwritable_output(tmp_path):
    rep = run_experiment(load_scenario(SCENARIOS / "minimal.json"), best_effort=False)
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(DataIOError):
        emit_report(rep, "json", blocker / "sub")


def test_managed_rates_fit_bottleneck():
    rep = run_experiment(load_scenario(SCENARIOS / "small_mix.json"), best_effort=False)
    for p in rep.points:
        cap = 20000
        assert sum(p.allocation.throughput.values()) <= cap


# CLI -------------------------------------------------------------------------

def test_cli_validate_and_run(tmp_path, capsys):
    assert main(["validate", str(SCENARIOS / "minimal.json")]) == 0
    assert main(["--out-dir", str(tmp_path), "run", str(SCENARIOS / "minimal.json")]) == 0
    assert (tmp_path / "report.json").exists()


def test_cli_flags_after_subcommand(tmp_path):
    code = main(["run", str(SCENARIOS / "minimal.json"), "--out-dir", str(tmp_path), "--format", "csv", "--seed", "5"])
    assert code == 0 and (tmp_path / "per_app.csv").exists()


def test_cli_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("QOEALLOC_OUT_DIR", str(tmp_path / "env"))
    assert main(["solve", str(SCENARIOS / "minimal.json")]) == 0
    assert (tmp_path / "env" / "allocation.json").exists()


def test_cli_solve_then_simulate(tmp_path):
    assert main(["--out-dir", str(tmp_path), "solve", str(SCENARIOS / "small_mix.json")]) == 0
    trace = tmp_path / "trace.csv"
    code = main(["--out-dir", str(tmp_path), "simulate", str(SCENARIOS / "small_mix.json"),
                 "--allocation", str(tmp_path / "allocation.json"), "--trace", str(trace)])
    assert code == 0 and trace.exists()
    sim = json.loads((tmp_path / "sim.json").read_text())
    assert sim["link"]["loss"] == 0


def test_cli_oracle(tmp_path):
    doc = base_doc(applications=[{"type": "DL", "count": 3, "src": "S", "dst": "C"}],
                   solver={"per_type_equal": True})
    path = write(tmp_path, doc)
    assert main(["--out-dir", str(tmp_path), "oracle", str(path)]) == 0
    assert json.loads((tmp_path / "oracle.json").read_text())["match"] is True
    # the full per-app product of a realistic mix is refused
    assert main(["--out-dir", str(tmp_path), "oracle", str(SCENARIOS / "small_mix.json")]) == 1


def test_cli_sweep_list(capsys):
    assert main(["sweep", str(SCENARIOS / "testbed_sweep.json"), "--list"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 12


def test_cli_exit_codes(tmp_path):
    bad = write(tmp_path, {"name": "x"}, "bad.json")
    assert main(["validate", str(bad)]) == 1
    tight = base_doc()
    tight["topology"]["links"][0]["capacity_kbps"] = 1
    tight["topology"]["links"][0]["delay_curve"] = [[0, 2], [1, 2]]
    path = write(tmp_path, tight, "tight.json")
    assert main(["--out-dir", str(tmp_path), "run", str(path)]) == 2
    assert main(["--out-dir", str(tmp_path), "solve", str(path)]) == 2
    assert main(["validate", str(tmp_path / "missing.json")]) == 3
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["--out-dir", str(blocker / "x"), "solve", str(SCENARIOS / "minimal.json")]) == 3
