import pytest

from uwbsim.scenario import ScenarioError, load_scenario, parse_scenario

BASE = """\
schema_version: 1
name: t
duration: 10
nodes:
  - {id: 1, role: tag, position: [0, 0]}
  - {id: 2, role: anchor, position: [10, 0]}
"""


def test_minimal_scenario_defaults():
    sc = parse_scenario(BASE)
    assert sc.mode == 4 and sc.protocol == "sstwr"
    assert sc.policy.t_offset == 2.0 and sc.policy.n_range == 15.0 and sc.policy.hop_limit == 1
    assert sc.mesh.latency == 0.05


def test_schema_version_is_mandatory():
    with pytest.raises(ScenarioError) as info:
        parse_scenario(BASE.replace("schema_version: 1\n", ""))
    assert "schema_version" in str(info.value)
    with pytest.raises(ScenarioError, match="unsupported schema_version"):
        parse_scenario(BASE.replace("schema_version: 1", "schema_version: 2"))


def test_error_points_at_offending_line():
    bad = BASE.replace("role: anchor", "role: beacon")
    with pytest.raises(ScenarioError) as info:
        parse_scenario(bad, "office.yaml")
    line, path, _ = info.value.issues[0]
    assert line == 6 and path.startswith("nodes.1.role")
    assert str(info.value).startswith("office.yaml:6: nodes.1.role")


def test_unknown_key_rejected_with_line():
    with pytest.raises(ScenarioError) as info:
        parse_scenario(BASE + "colour: blue\n", "s.yaml")
    assert info.value.issues[0][0] == 7


def test_yaml_syntax_error_has_line():
    with pytest.raises(ScenarioError) as info:
        parse_scenario(BASE + "policy: {regime: motion\n", "s.yaml")
    assert info.value.issues[0][0] is not None
    assert "parse error" in str(info.value)


@pytest.mark.parametrize(
    "text, message",
    [
        (BASE.replace("id: 2", "id: 1"), "duplicate node ids"),
        (BASE.replace("duration: 10", "duration: 0"), "greater than 0"),
        (BASE.replace("role: anchor", "role: tag"), "at least one anchor"),
        (BASE.replace("position: [0, 0]}", "position: [0, 0], trace: [[0, 0, 0], [20, 1, 1]]}"), "beyond duration"),
        (BASE.replace("position: [0, 0]}", "position: [0, 0], trace: [[2, 0, 0], [1, 1, 1]]}"), "strictly increasing"),
        (BASE.replace("position: [0, 0]}", "position: [0, 0], drift_ppm: 40}"), "drift_ppm"),
    ],
)
def test_invariants(text, message):
    with pytest.raises(ScenarioError, match=message):
        parse_scenario(text)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="file not found"):
        load_scenario(tmp_path / "nope.yaml")


def test_json_is_accepted(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"schema_version": 1, "duration": 5, "nodes": [{"id": 1, "role": "tag"},'
                    ' {"id": 2, "role": "anchor", "position": [3, 4]}]}')
    assert load_scenario(path).nodes[1].position == (3.0, 4.0)


def test_shipped_scenarios_validate():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "scenarios"
    for name in ("range_10m.yaml", "office.yaml"):
        load_scenario(root / name)
