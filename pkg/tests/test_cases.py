import json

import numpy as np
import pytest

from cellfdi.cases import (
    CaseError,
    PROVENANCE,
    evaluate_expectations,
    load_cases,
    load_scenario,
    parse_scenario,
    run_case,
)

CASES = load_cases()


def test_all_named_cases_present():
    names = [f"case{i}" for i in range(1, 13)] + [f"case{r}" for r in ("I", "II", "III", "IV", "V")]
    assert list(CASES) == names


def test_every_expectation_has_provenance():
    for case in CASES.values():
        for e in case.expected:
            assert e["provenance"] in PROVENANCE


@pytest.mark.parametrize("name,node,mag,t0,t1", [
    ("case2", 18, 0.3, 100, 110),
    ("case3", 2, 0.7, 150, 160),
    ("caseII", 23, 0.5, 100, 110),
    ("caseV", 2, 0.7, 150, 160),
])
def test_published_pulse_definitions(name, node, mag, t0, t1):
    (f,) = CASES[name].document.scenario.faults
    assert (f.shape, f.node, f.magnitude, f.t_start, f.t_end) == ("pulse", node, mag, t0, t1)


def test_published_filter_tuning():
    c = CASES["case1"]
    assert c.filter["q_scale"] == 100.0
    assert (c.filter["s_own"], c.filter["s_other"]) == (0.1, 0.001)
    assert c.thresholds == [0.3, 0.3]
    assert c.document.scenario.meas_noise_var == 1e-3
    assert c.document.sensors == [7, 19]


def test_noise_levels():
    levels = [CASES[n].document.scenario.meas_noise_var for n in ("case9", "case10", "case11")]
    assert levels == [0.01, 0.05, 0.08]


def test_perturbations():
    assert CASES["case6"].document.plant_scale == {"k": 1.4}
    assert CASES["case7"].document.plant_scale == {"gamma_N": 1.43}


def test_plant_perturbation_applied(model):
    plant, filt = CASES["case6"].document.models(model)
    assert plant.params.conductivity_k == pytest.approx(1.4 * model.params.conductivity_k)
    assert filt.params == model.params
    np.testing.assert_array_equal(plant.C, filt.C)


def _write(tmp_path, d):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(d))
    return p


def test_scenario_file(tmp_path):
    (tmp_path / "prof.csv").write_text("time_s,current_A\n0,10\n5,20\n")
    p = _write(tmp_path, {"duration": 5, "current": {"csv": "prof.csv"}, "sensors": [7, 19],
                          "zones": [list(range(1, 13)), list(range(13, 25))]})
    doc = load_scenario(p)
    assert doc.scenario.current_profile(2.5) == 15.0
    assert doc.partition(24).K == 2


def test_single_sensor_defaults_to_whole_cell():
    doc = parse_scenario({"sensors": [14]}, n_nodes=24)
    assert doc.zones == [list(range(1, 25))]


@pytest.mark.parametrize("d,match", [
    ({"colour": 1}, "unknown scenario keys"),
    ({"faults": [{"node": 1, "size": 3}]}, "unknown fault keys"),
    ({"faults": [{"node": 1, "shape": "pulse", "t_start": 5}]}, "t_end"),
    ({"sensors": [7, 19]}, "no zones"),
    ({"current": "fast"}, "current profile"),
])
def test_scenario_errors(d, match):
    with pytest.raises(CaseError, match=match):
        parse_scenario(d)


def test_invalid_json(tmp_path):
    p = tmp_path / "s.json"
    p.write_text("{")
    with pytest.raises(CaseError, match="invalid JSON"):
        load_scenario(p)


def test_sensor_outside_its_zone(model):
    doc = parse_scenario({"sensors": [19, 7], "zones": [list(range(1, 13)), list(range(13, 25))]})
    with pytest.raises(CaseError, match="not in zone 1"):
        doc.models(model)


def test_unknown_plant_key(model):
    doc = parse_scenario({"sensors": [7, 19], "zones": [list(range(1, 13)), list(range(13, 25))],
                          "plant_scale": {"mass": 2}})
    with pytest.raises(CaseError, match="plant_scale"):
        doc.models(model)


def test_case_file_needs_provenance(tmp_path):
    p = _write(tmp_path, {"version": 1, "cases": [
        {"name": "x", "expected": [{"check": "false_alarms", "value": [0]}]}]})
    with pytest.raises(CaseError, match="provenance"):
        load_cases(p)


def test_case_file_version(tmp_path):
    with pytest.raises(CaseError, match="version"):
        load_cases(_write(tmp_path, {"version": 2, "cases": []}))


def test_duplicate_case(tmp_path):
    with pytest.raises(CaseError, match="duplicate"):
        load_cases(_write(tmp_path, {"version": 1, "cases": [{"name": "a"}, {"name": "a"}]}))


def test_case1_quiet(model, config):
    r = run_case(CASES["case1"], model, config)
    assert r.passed
    assert r.runs["two_sensor"].report.false_alarm_counts == [0, 0]


def test_case2_report_text(model, config):
    r = run_case(CASES["case2"], model, config)
    text = r.text()
    assert r.passed and "result: PASS" in text
    assert "[PASS] zone 2 detected within 4.5 s" in text


def test_failed_check_reported(model, config):
    case = CASES["case1"]
    runs = run_case(case, model, config).runs
    case.expected.append({"check": "detected", "zone": 1, "published_time": 1.0,
                          "provenance": "property"})
    try:
        checks = evaluate_expectations(case, runs)
    finally:
        case.expected.pop()
    assert not checks[-1].passed and checks[-1].detail == "missed, published 1.0 s"


@pytest.mark.parametrize("name", list(CASES))
def test_case_expectations(name, model, config):
    result = run_case(CASES[name], model, config)
    failed = [f"{c.description}: {c.detail}" for c in result.checks if not c.passed]
    assert not failed, "; ".join(failed)
