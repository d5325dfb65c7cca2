import csv
import json

import pytest

from campusepi.cli import main
from campusepi.control import StaggerSchedule
from campusepi.scenario import DEFAULTS, ScenarioError, apply_overrides, load_scenario

TINY = ["--set", "population.total=60", "--set", "simulation.horizon_days=2"]


def _err(capsys):
    lines = [l for l in capsys.readouterr().err.splitlines() if l.startswith("{")]
    return json.loads(lines[-1])


def test_defaults_fill_missing_fields():
    cfg = load_scenario({"map": "campus_map.json"})
    assert cfg.population.size() == DEFAULTS["population"]["total"]
    assert cfg.infection.radius == 2.0 and cfg.infection.incubation_days == 7
    assert cfg.horizon_days == 21 and cfg.initial_infected == 1
    assert cfg.policy.batch is None and cfg.policy.stagger is None


def test_bundled_scenarios_load():
    campus = load_scenario("campus.json")
    assert campus.population.size() == 1680
    cruise = load_scenario("cruise.json")
    assert cruise.population.size() == 3711 and cruise.infection.beta == 0.0


def test_overrides_parse_json_values():
    doc = apply_overrides({"a": {"b": 1}}, ["a.b=2.5", "a.c=[1,2]", "d.e=text", "f={}"])
    assert doc == {"a": {"b": 2.5, "c": [1, 2]}, "d": {"e": "text"}, "f": {}}
    with pytest.raises(ScenarioError):
        apply_overrides({}, ["novalue"])
    with pytest.raises(ScenarioError):
        apply_overrides({"a": 3}, ["a.b=1"])


def test_policies_from_document():
    cfg = load_scenario("campus.json", ["control.batch={\"split\": 0.4}", "control.stagger=reference",
                                        "control.isolation={\"detection_delay_days\": 1}", "infection.beta=0.3"])
    assert cfg.policy.batch.split == 0.4
    assert cfg.policy.stagger == "reference"
    assert cfg.policy.isolation.detection_delay_days == 1
    assert cfg.infection.beta == 0.3 == cfg.policy.beta
    explicit = load_scenario("campus.json", ['control.stagger={"departure": {"dormitory_2": 600}}'])
    assert isinstance(explicit.policy.stagger, StaggerSchedule)


def test_unknown_key_reports_line(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{\n  "map": "campus_map.json",\n  "infection": {\n    "betta": 0.2\n  }\n}\n')
    with pytest.raises(ScenarioError) as exc:
        load_scenario(p)
    assert exc.value.field == "infection.betta"
    assert exc.value.line == 4


@pytest.mark.parametrize("override, field", [
    ("infection.beta=1.5", "infection.beta"),
    ("population.total=-3", "population.total"),
    ("simulation.horizon_days=0", "simulation.horizon_days"),
    ("infection.radius=\"far\"", "infection.radius"),
])
def test_invalid_values_name_their_field(override, field):
    with pytest.raises(ScenarioError) as exc:
        load_scenario("campus.json", [override])
    assert exc.value.field == field


def test_run_writes_outputs_and_replays_from_manifest(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--scenario", "campus.json", "--out", str(out), "--seed", "5",
                 "--replications", "2", *TINY]) == 0
    assert "cumulative infection rate" in capsys.readouterr().out
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"] == [5, 6]
    again = tmp_path / "again"
    assert main(["run", "--from-manifest", str(out / "manifest.json"), "--out", str(again)]) == 0
    for name in ("daily_curves.csv", "heatmap.csv", "manifest.json"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_sweep_writes_one_directory_per_value(tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", "--scenario", "campus.json", "--param", "beta", "--values", "0,1",
                 "--out", str(out), "--replications", "1", *TINY]) == 0
    rows = list(csv.DictReader(open(out / "sweep_summary.csv")))
    assert [r["beta"] for r in rows] == ["0", "1"]
    assert (out / "beta=0" / "daily_curves.csv").exists()
    man = json.loads((out / "beta=1" / "manifest.json").read_text())
    assert man["sweep"] == {"param": "infection.beta", "value": "1"}
    assert float(rows[1]["rate"]) == pytest.approx(1 / 60)


def test_sweep_rejects_unknown_parameter(tmp_path, capsys):
    assert main(["sweep", "--scenario", "campus.json", "--param", "foo", "--values", "1",
                 "--out", str(tmp_path)]) == 2
    assert "cannot sweep 'foo'" in _err(capsys)["message"]


def test_stagger_opt_prints_table(capsys):
    assert main(["stagger-opt", "--scenario", "campus.json", "--set", "control.batch={}"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split() == ["Building", "Start", "Time", "(s)"]
    assert "dormitory_1" in out and "departure: C optimized=" in out
    assert main(["stagger-opt", "--scenario", "campus.json", "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert set(data) == {"departure", "after_class", "congestion", "synchronized"}


def test_validate_map(tmp_path, capsys):
    from importlib.resources import files
    assert main(["validate-map", str(files("campusepi") / "data" / "campus_map.json")]) == 0
    assert capsys.readouterr().out.startswith("ok:")
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "nodes": [{"id": "a", "x": 0, "y": 0}],\n "edges": [{"a": "a", "b": "q", "width_m": 1}]\n}\n')
    assert main(["validate-map", str(bad)]) == 3
    err = _err(capsys)
    assert err["error"] == "map" and err["line"] == 3 and err["file"] == str(bad)
    assert str(bad) not in err["message"]


def test_exit_codes(tmp_path, capsys):
    assert main(["run", "--scenario", "campus.json", "--out", str(tmp_path), "--set", "infection.beta=2"]) == 2
    err = _err(capsys)
    assert err["error"] == "config" and err["field"] == "infection.beta"
    assert main(["run", "--out", str(tmp_path)]) == 2
    broken_map = tmp_path / "m.json"
    broken_map.write_text('{"nodes": [], "edges": [], "bogus": 1}')
    scen = tmp_path / "s.json"
    scen.write_text(json.dumps({"map": str(broken_map)}))
    assert main(["run", "--scenario", str(scen), "--out", str(tmp_path / "o")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--scenario", "campus.json", "--out", str(blocker / "sub"), *TINY,
                 "--replications", "1"]) == 4
    assert _err(capsys)["error"] == "io"
