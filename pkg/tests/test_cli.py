import csv
import io
import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mercury_qos.cli import ControllerRunError, main, run_compare, run_traces
from mercury_qos.core import MachineSpec, ScenarioSpec, ValidationError, bi_app, ls_app
from mercury_qos.report import CSV_COLUMNS, Report, emit_report
from mercury_qos.scenario_io import BUNDLED, ParseError, dump_scenario, load_scenario, parse_scenario

TRIVIAL = ScenarioSpec(MachineSpec(), (ls_app("a", 2, 4, 150, access_rate=1e6),
                                       bi_app("b", 1, 4, 20, 10)), (), 4.0, 0.2, 0, "trivial")


# -- scenario loading ---------------------------------------------------------------------


def test_missing_machine_is_a_parse_error(tmp_path):
    raw = json.loads(dump_scenario(TRIVIAL))
    del raw["machine"]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(raw, indent=2))
    with pytest.raises(ParseError) as exc:
        load_scenario(p)
    assert exc.value.line is not None and "machine" in str(exc.value)


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "machine": {},\n  "apps": [,]\n}')
    with pytest.raises(ParseError) as exc:
        load_scenario(p)
    assert exc.value.line == 3


def test_bundled_longrun_scenario():
    sc = load_scenario("fig13_longrun")
    assert len(sc.apps) == 3
    assert [a.slo.value for a in sc.apps] == [200, 70, 180]
    assert sc.machine.local_capacity_gb == 70


def test_duplicate_priority_is_a_validation_error(tmp_path):
    bad = replace(TRIVIAL, apps=tuple(replace(a, priority=1) for a in TRIVIAL.apps))
    text = dump_scenario(bad)
    with pytest.raises(ValidationError) as exc:
        parse_scenario(text)
    assert "DuplicatePriority" in exc.value.codes


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_round_trip(name):
    sc = load_scenario(name)
    assert parse_scenario(dump_scenario(sc), name) == sc


@settings(max_examples=40, deadline=None)
@given(st.floats(1, 64), st.floats(101, 500), st.floats(1, 200), st.integers(0, 2**32))
def test_round_trip_generated(wss, slo, demand, seed):
    sc = ScenarioSpec(MachineSpec(local_capacity_gb=wss * 2),
                      (ls_app("l", 2, wss, slo, access_rate=1e6), bi_app("b", 1, wss, demand, demand / 2)),
                      (), 10.0, 0.2, seed)
    assert parse_scenario(dump_scenario(sc)) == sc


# -- batch runs and reports -----------------------------------------------------------------


def test_compare_on_mixed_scenario(tmp_path):
    sc = load_scenario("fig10_mixed")
    rep = run_compare(sc, ["mercury", "tpp"], tmp_path, warmup_s=20)
    assert rep.controllers == ["mercury", "tpp"]
    for c in rep.controllers:
        run = rep.run(c)
        assert list(run.apps) == ["redis", "llama", "vectordb"]
        assert all(0.0 <= a.slo_fraction <= 1.0 for a in run.apps.values())
        assert (tmp_path / f"{c}_trace.csv").exists()
        assert (tmp_path / f"{c}_actions.jsonl").exists()
        assert (tmp_path / f"{c}_timeseries.png").stat().st_size > 0
    assert (tmp_path / "slo_fraction.png").exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["schema"] == 1


def test_trivial_scenario_all_satisfied():
    rep = run_compare(TRIVIAL, ["mercury"])
    assert [a.slo_fraction for a in rep.run("mercury").apps.values()] == [1.0, 1.0]


def test_reports_are_byte_identical(tmp_path):
    sc = load_scenario("fig12_dynamic_bw")
    a = run_compare(sc, ["mercury", "tpp"], tmp_path / "a", plots=False)
    b = run_compare(sc, ["mercury", "tpp"], tmp_path / "b", jobs=2, plots=False)
    for f in ("report.json", "mercury_trace.csv", "tpp_trace.csv", "mercury_actions.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert emit_report(a) == emit_report(b)


def test_json_round_trip():
    rep = run_compare(TRIVIAL, ["mercury", "tpp"])
    text = emit_report(rep, "json")
    back = Report.from_dict(json.loads(text))
    assert back == rep
    assert emit_report(back, "json") == text


def test_csv_summary_one_row_per_app_and_controller():
    rep = run_compare(TRIVIAL, ["mercury", "tpp", "fcfs"])
    rows = list(csv.reader(io.StringIO(emit_report(rep, "csv-summary"))))
    assert rows[0] == ["schema", "1"]
    assert rows[1] == list(CSV_COLUMNS)
    body = rows[2:]
    assert len(body) == 3 * 2
    assert {(r[0], r[1]) for r in body} == {(c, a) for c in ("mercury", "tpp", "fcfs")
                                            for a in ("a", "b")}


def test_unknown_format_rejected():
    rep = run_compare(TRIVIAL, ["none"])
    with pytest.raises(ValueError):
        emit_report(rep, "xml")
    with pytest.raises(SystemExit) as exc:
        main(["run", "--scenario", "fig03_sweep", "--format", "xml"])
    assert exc.value.code == 2


def test_deltas_are_relative_to_first_controller():
    rep = run_compare(load_scenario("fig10_mixed"), ["mercury", "tpp"], warmup_s=20)
    d = rep.deltas()
    m = {k: a.slo_fraction for k, a in rep.run("mercury").apps.items()}
    t = {k: a.slo_fraction for k, a in rep.run("tpp").apps.items()}
    for app in m:
        assert d["tpp"][app] == pytest.approx(t[app] - m[app])


def test_simulation_errors_are_tagged_by_controller(monkeypatch):
    import mercury_qos.cli as cli

    def boom(*a, **k):
        raise RuntimeError("kaput")

    monkeypatch.setattr(cli, "run_scenario", boom)
    with pytest.raises(ControllerRunError) as exc:
        run_traces(TRIVIAL, ["tpp"])
    assert exc.value.controller == "tpp" and "kaput" in str(exc.value)


def test_unknown_controller_rejected():
    with pytest.raises(ValueError):
        run_traces(TRIVIAL, ["mercury", "magic"])
    with pytest.raises(ValueError):
        run_traces(TRIVIAL, [])


# -- command line ------------------------------------------------------------------------


def test_cli_validate(capsys):
    assert main(["validate", "--scenario", "fig10_mixed"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["ok"] and out["apps"] == 3


def test_cli_validate_bad_file(tmp_path, capsys):
    p = tmp_path / "x.json"
    p.write_text("{}")
    assert main(["validate", "--scenario", str(p)]) == 2
    assert "parse error" in capsys.readouterr().err


def test_cli_profile_and_calibrate(capsys):
    assert main(["profile", "--scenario", "fig10_mixed", "--app", "vectordb"]) == 0
    prof = json.loads(capsys.readouterr().out)
    assert prof["admissible"] is True and 0 <= prof["mem_limit_gb"] <= 20
    assert main(["calibrate", "--scenario", "fig10_mixed"]) == 0
    th = json.loads(capsys.readouterr().out)
    assert th["thresh_local_bw"] == pytest.approx(78.0776, abs=1e-3)
    assert main(["profile", "--scenario", "fig10_mixed", "--app", "ghost"]) == 2


def test_cli_run_writes_outputs(tmp_path, capsys):
    rc = main(["run", "--scenario", "fig03_sweep", "--out", str(tmp_path), "--no-plots",
               "--format", "csv-summary", "--tick", "0.5"])
    assert rc == 0
    assert capsys.readouterr().out.startswith("schema,1")
    assert (tmp_path / "report.csv").exists()
    assert len((tmp_path / "mercury_trace.csv").read_text().splitlines()) == 1 + 20 * 2


def test_cli_compare_defaults(capsys):
    assert main(["compare", "--scenario", "fig03_sweep", "--no-plots"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["controllers"] == list(rep["runs"]) == ["mercury", "tpp"]


def test_cli_sweep(capsys):
    assert main(["sweep", "--scenario", "fig03_sweep", "--app", "bi", "--steps", "4"]) == 0
    pts = json.loads(capsys.readouterr().out)
    assert [p["p"] for p in pts] == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_cli_unknown_controller_exits_nonzero(capsys):
    assert main(["run", "--scenario", "fig03_sweep", "--controller", "magic", "--no-plots"]) == 1
