from pathlib import Path

import numpy as np
import pytest
import yaml

from fcsched.scenario import BUILTINS, SCHEMA, ScenarioError, load_scenario, load_scenario_text, parse_scenario

REPO = Path(__file__).resolve().parents[1]

BASE = {
    "schema": SCHEMA,
    "name": "t",
    "topology": {
        "n_procs": 2,
        "tasks": [
            {"id": "a", "wcet_est": 0.05, "rate_init": 8.0, "criticality": "SC",
             "home_proc": 0, "replica_procs": [1]},
            {"id": "b", "wcet_est": 0.05, "rate_init": 8.0, "home_proc": 1},
        ],
    },
}


def doc(**overrides):
    d = yaml.safe_load(yaml.safe_dump(BASE))
    for path, value in overrides.items():
        node = d
        keys = path.split("__")
        for k in keys[:-1]:
            node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
        if isinstance(node, list):
            node[int(keys[-1])] = value
        else:
            node[keys[-1]] = value
    return d


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_validate(name):
    s = load_scenario(name)
    assert s.name == name
    assert s.topology.n == 2 and s.topology.m == 8
    assert s.loop.n_steps == 1000


def test_builtin_parameters():
    assert np.all(load_scenario("exp1").topology.exec_factors == 0.3)
    assert np.all(load_scenario("exp2").topology.exec_factors == 7.0)
    assert [s for s, _ in load_scenario("exp3").loop.load_schedule] == [300, 400, 800]
    assert load_scenario("ft").loop.faults.mode == "random"


@pytest.mark.parametrize("path", sorted((REPO / "scenarios").glob("*.yaml")))
def test_shipped_scenario_files_validate(path):
    load_scenario(path)


def test_minimal_document_uses_defaults():
    s = parse_scenario(doc())
    assert s.loop.n_steps == 1000 and s.loop.controller.set_point == 0.8123
    assert s.topology.tasks[0].replica_procs == (1,)
    assert s.output.trace == "{name}_trace.csv"


@pytest.mark.parametrize(
    "overrides, field",
    [
        ({"schema": "fcsched/0"}, "schema"),
        ({"name": ""}, "name"),
        ({"bogus": 1}, "bogus"),
        ({"topology__tasks__0__rate_min": 9.0, "topology__tasks__0__rate_max": 8.5},
         "topology.tasks[0].rate_min"),
        ({"topology__tasks__1__home_proc": 5}, "topology.tasks[1].home_proc"),
        ({"topology__tasks__0__replica_procs": [2]}, "topology.tasks[0].replica_procs"),
        ({"topology__tasks__0__criticality": "maybe"}, "topology.tasks[0].criticality"),
        ({"topology__tasks__0__wcet_est": "fast"}, "topology.tasks[0].wcet_est"),
        ({"topology__n_procs": 3}, "topology.tasks"),
        ({"loop": {"n_steps": 10, "warmup_steps": 10}}, "loop.warmup_steps"),
        ({"loop": {"n_steps": 2.5}}, "loop.n_steps"),
        ({"estimator": {"lambda": 1.5}}, "estimator.lambda"),
        ({"estimator": {"forget": 0.9}}, "estimator.forget"),
        ({"controller": {"q_weight": 0}}, "controller.q_weight"),
        ({"controller": {"move_penalty": "other"}}, "controller.move_penalty"),
        ({"plant": {"noise": -0.1}}, "plant.noise"),
        ({"faults": {"mode": "random", "p_f": 2.0}}, "faults.p_f"),
        ({"faults": {"mode": "scripted", "script": [{"step": 1, "task": "b", "proc": 0}]}},
         "faults.script[0].proc"),
        ({"faults": {"mode": "scripted", "script": [{"step": 1, "task": "z", "proc": 0}]}},
         "faults.script[0].task"),
        ({"faults": {"mode": "none", "p_f": 0.1}}, "faults.p_f"),
        ({"load_schedule": [{"step": 5, "exec_factor": 0}]}, "load_schedule[0]"),
        ({"load_schedule": [{"step": 5, "exec_factor": 1}, {"step": 5, "exec_factor": 2}]},
         "load_schedule[1].step"),
        ({"load_schedule": [{"step": 5, "exec_factor": {"nope": 2.0}}]},
         "load_schedule[0].exec_factor.nope"),
        ({"topology": {"file": "missing.yaml"}}, "topology.file"),
    ],
)
def test_invalid_fields_are_named(overrides, field):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(doc(**overrides), base_dir=REPO)
    assert info.value.field == field, str(info.value)


def test_rate_bound_violation_names_task():
    with pytest.raises(ScenarioError, match="'a'"):
        parse_scenario(doc(topology__tasks__0__rate_min=9.0, topology__tasks__0__rate_max=8.5))


def test_null_disables_safeguards():
    s = parse_scenario(doc(estimator={"saturation_guard": None, "gain_floor": None}))
    assert s.loop.estimator.saturation_guard is None and s.loop.estimator.gain_floor is None


def test_topology_file_reference(tmp_path):
    (tmp_path / "topo.yaml").write_text("generate: {n_procs: 3, tasks_per_proc: 2}\n")
    (tmp_path / "s.yaml").write_text(
        f"schema: {SCHEMA}\nname: ref\ntopology: {{file: topo.yaml}}\n")
    s = load_scenario(tmp_path / "s.yaml")
    assert s.topology.n == 3 and s.topology.m == 6


def test_load_schedule_forms():
    s = parse_scenario(doc(load_schedule=[
        {"step": 3, "exec_factor": 2},
        {"step": 4, "exec_factor": [1.0, 0.5]},
        {"step": 9, "exec_factor": {"a": 3.0}},
    ]))
    assert s.loop.load_schedule == ((3, 2.0), (4, [1.0, 0.5]), (9, {"a": 3.0}))


def test_unknown_reference():
    with pytest.raises(ScenarioError, match="neither a file nor a builtin"):
        load_scenario("exp9")


def test_yaml_syntax_error():
    with pytest.raises(ScenarioError, match="not valid YAML"):
        load_scenario_text("schema: [unclosed\n")


def test_with_seed():
    s = load_scenario("exp1").with_seed(42)
    assert s.loop.seed == 42
