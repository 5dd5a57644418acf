import json
from pathlib import Path

import pytest

from didgov.errors import ScenarioAssertionFailed
from didgov.scenario import ScenarioScript, is_subset, lookup, run_scenario, substitute

SCENARIOS = Path(__file__).parent / "fixtures" / "scenarios"


def load(name: str) -> ScenarioScript:
    return ScenarioScript.from_json(json.loads((SCENARIOS / f"{name}.json").read_text()))


def test_empty_script(tmp_path):
    assert run_scenario(ScenarioScript([]), workdir=tmp_path) == {"passed": True, "steps": [], "ledgerDigest": None}


@pytest.mark.parametrize("name", ["e2e_two_of_three", "token_single_use", "adaptable_governance"])
def test_fixture_scenarios_pass(tmp_path, name):
    report = run_scenario(load(name), workdir=tmp_path)
    assert report["passed"]
    assert all(step["passed"] for step in report["steps"])
    assert len(report["ledgerDigest"]) == 64


def test_token_replay_step_reports_exhausted(tmp_path):
    report = run_scenario(load("token_single_use"), workdir=tmp_path)
    errors = [s["output"].get("error") for s in report["steps"] if s["exit"] == 1]
    assert errors == ["TokenExhausted"]


def test_failing_expectation_names_the_step(tmp_path):
    script = ScenarioScript([
        {"cmd": ["init", "--seed", "00" * 32]},
        {"cmd": ["resolve", "did:gov:ghost"], "expect": {"exit": 0}},
        {"cmd": ["verify-chain"]},
    ])
    with pytest.raises(ScenarioAssertionFailed) as info:
        run_scenario(script, workdir=tmp_path)
    assert info.value.details["step"] == 1


def test_failure_without_raising(tmp_path):
    script = ScenarioScript([{"cmd": ["keygen"], "expect": {"exit": 2}}])
    report = run_scenario(script, workdir=tmp_path, raise_on_failure=False)
    assert report["passed"] is False
    assert report["steps"][0]["reason"]


def test_capture_and_substitution(tmp_path):
    script = ScenarioScript([
        {"cmd": ["keygen", "--seed", "11" * 32], "capture": {"pk": "publicKey"}},
        {"cmd": ["keygen", "--seed", "11" * 32], "expect": {"json_subset": {"publicKey": "${pk}"}}},
    ])
    assert run_scenario(script, workdir=tmp_path)["passed"]


def test_clock_schedule_drives_tick(tmp_path):
    script = ScenarioScript(
        [{"cmd": ["init", "--seed", "${seed}"]}, {"tick": True}, {"tick": True}],
        seed="22" * 32, clock_schedule=[5, 9])
    report = run_scenario(script, workdir=tmp_path)
    assert [s["output"]["now"] for s in report["steps"][1:]] == [5, 9]


def test_file_step_writes_json(tmp_path):
    run_scenario(ScenarioScript([{"file": "x.json", "content": {"b": 1, "a": [2]}}]), workdir=tmp_path)
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": [2], "b": 1}


def test_subset_rules():
    assert is_subset({"a": 1}, {"a": 1, "b": 2})
    assert not is_subset({"a": 1, "c": 3}, {"a": 1})
    assert is_subset([{"id": 1}], [{"id": 1, "x": 0}])
    assert not is_subset([{"id": 1}], [{"id": 1}, {"id": 2}])


def test_lookup_and_substitute():
    assert lookup({"a": [{"b": 7}]}, "a.0.b") == 7
    with pytest.raises(KeyError):
        lookup({"a": {}}, "a.z")
    assert substitute(["x-${v}", {"k": "${v}"}], {"v": "1"}) == ["x-1", {"k": "1"}]
