"""Scenario files: YAML documents describing one closed-loop experiment.

A scenario names a topology (explicit task list, a generated symmetric one,
or a separate topology file), the loop/estimator/controller/plant settings,
an optional fault process and load-fluctuation schedule, and where outputs
go.  Every document carries ``schema: fcsched/1``.  Errors raise
:class:`ScenarioError` naming the offending field with a dotted path.

Example::

    schema: fcsched/1
    name: demo
    topology:
      generate: {n_procs: 2, tasks_per_proc: 4, exec_factor: 0.3}
    loop: {n_steps: 1000, seed: 0}
    controller: {q_weight: 0.15}
    load_schedule:
      - {step: 300, exec_factor: 1.6}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .faults import FaultConfigError, FaultProcess, ScriptedFault
from .loop import ControlConfig, EstimatorConfig, LoopConfig, PlantConfig
from .model import (
    Criticality,
    SystemTopology,
    TaskSpec,
    TopologyError,
    build_allocation_matrix,
    uniform_topology,
)
from .plant import apply_load_fluctuation

SCHEMA = "fcsched/1"


class ScenarioError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class OutputSpec:
    dir: str | None = None
    trace: str = "{name}_trace.csv"
    metrics: str = "{name}_metrics.json"


@dataclass(frozen=True)
class Scenario:
    name: str
    topology: SystemTopology
    loop: LoopConfig
    output: OutputSpec = field(default_factory=OutputSpec)
    settle_tol: float = 0.02
    source: str | None = None

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, loop=replace(self.loop, seed=int(seed)))


# ---------------------------------------------------------------------------
# field readers


def _mapping(value, where: str) -> Mapping:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ScenarioError(where, f"expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(section: Mapping, allowed, where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ScenarioError(f"{where}.{key}" if where else str(key), "unknown field")


def _number(section, key, where, default=None, *, integer=False, positive=False,
            nonneg=False, optional=False):
    path = f"{where}.{key}"
    if key not in section or section[key] is None:
        if default is None and not optional:
            raise ScenarioError(path, "required field is missing")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ScenarioError(path, f"expected an integer, got {value!r}")
        value = int(value)
    elif not math.isfinite(value):
        raise ScenarioError(path, "must be finite")
    if positive and not value > 0:
        raise ScenarioError(path, f"must be > 0, got {value!r}")
    if nonneg and value < 0:
        raise ScenarioError(path, f"must be >= 0, got {value!r}")
    return value if integer else float(value)


def _string(section, key, where, default=None, choices=None):
    path = f"{where}.{key}"
    value = section.get(key, default)
    if value is None:
        raise ScenarioError(path, "required field is missing")
    if not isinstance(value, str):
        raise ScenarioError(path, f"expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ScenarioError(path, f"{value!r} is not one of {', '.join(choices)}")
    return value


def _bool(section, key, where, default):
    value = section.get(key, default)
    if not isinstance(value, bool):
        raise ScenarioError(f"{where}.{key}", f"expected true or false, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# sections

TASK_KEYS = ("id", "wcet_est", "rate_init", "exec_factor", "rate_min", "rate_max",
             "criticality", "home_proc", "replica_procs")
GENERATE_KEYS = ("n_procs", "tasks_per_proc", "set_point", "exec_factor", "wcet_est",
                 "replicate_sc")


def _parse_task(raw, where: str) -> TaskSpec:
    raw = _mapping(raw, where)
    _check_keys(raw, TASK_KEYS, where)
    task_id = raw.get("id")
    if not isinstance(task_id, str) or not task_id:
        raise ScenarioError(f"{where}.id", "task id must be a nonempty string")
    crit = raw.get("criticality", "non-SC")
    try:
        crit = Criticality(crit)
    except ValueError:
        raise ScenarioError(f"{where}.criticality", f"{crit!r} is not SC or non-SC") from None
    replicas = raw.get("replica_procs", [])
    if not isinstance(replicas, list) or any(
        isinstance(p, bool) or not isinstance(p, int) for p in replicas
    ):
        raise ScenarioError(f"{where}.replica_procs", "expected a list of processor indices")
    return TaskSpec(
        id=task_id,
        wcet_est=_number(raw, "wcet_est", where),
        rate_init=_number(raw, "rate_init", where),
        exec_factor=_number(raw, "exec_factor", where, 1.0),
        rate_min=_number(raw, "rate_min", where, optional=True),
        rate_max=_number(raw, "rate_max", where, optional=True),
        criticality=crit,
        home_proc=_number(raw, "home_proc", where, 0, integer=True),
        replica_procs=tuple(replicas),
    )


def _parse_topology(raw, base_dir: Path | None, where="topology") -> SystemTopology:
    raw = _mapping(raw, where)
    if not raw:
        raise ScenarioError(where, "required section is missing")
    _check_keys(raw, ("file", "generate", "n_procs", "tasks", "sample_period"), where)
    if "file" in raw:
        if len(raw) != 1:
            raise ScenarioError(f"{where}.file", "a topology file excludes other topology fields")
        ref = raw["file"]
        if not isinstance(ref, str):
            raise ScenarioError(f"{where}.file", "expected a path")
        path = Path(ref)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.is_file():
            raise ScenarioError(f"{where}.file", f"referenced file {str(path)!r} does not exist")
        try:
            inner = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ScenarioError(f"{where}.file", f"not valid YAML: {exc}") from None
        inner = _mapping(inner, f"{where}.file")
        if "file" in inner:
            raise ScenarioError(f"{where}.file", "topology files may not reference other files")
        return _parse_topology(inner, path.parent, where)

    period = _number(raw, "sample_period", where, 1.0, positive=True)
    if "generate" in raw:
        if "tasks" in raw or "n_procs" in raw:
            raise ScenarioError(f"{where}.generate", "use either generate or an explicit task list")
        gen = _mapping(raw["generate"], f"{where}.generate")
        _check_keys(gen, GENERATE_KEYS, f"{where}.generate")
        w = f"{where}.generate"
        topo = uniform_topology(
            n_procs=_number(gen, "n_procs", w, 2, integer=True, positive=True),
            tasks_per_proc=_number(gen, "tasks_per_proc", w, 4, integer=True, positive=True),
            set_point=_number(gen, "set_point", w, 0.8123, positive=True),
            exec_factor=_number(gen, "exec_factor", w, 1.0, positive=True),
            wcet_est=_number(gen, "wcet_est", w, 0.05, positive=True),
            replicate_sc=_bool(gen, "replicate_sc", w, True),
            sample_period=period,
        )
    else:
        tasks = raw.get("tasks")
        if not isinstance(tasks, list) or not tasks:
            raise ScenarioError(f"{where}.tasks", "expected a nonempty list of tasks")
        topo = SystemTopology(
            n_procs=_number(raw, "n_procs", where, integer=True),
            tasks=tuple(_parse_task(t, f"{where}.tasks[{j}]") for j, t in enumerate(tasks)),
            sample_period=period,
        )
    try:
        topo.validate()
    except TopologyError as exc:
        raise ScenarioError(f"{where}.{exc.field}" if not exc.field.startswith("topology")
                            else exc.field, str(exc).split(": ", 1)[1]) from None
    return topo


def _parse_faults(raw, where="faults") -> FaultProcess:
    raw = _mapping(raw, where)
    if not raw:
        return FaultProcess()
    _check_keys(raw, ("mode", "script", "p_f", "seed"), where)
    mode = _string(raw, "mode", where, "none", ("none", "scripted", "random"))
    script = raw.get("script", [])
    if not isinstance(script, list):
        raise ScenarioError(f"{where}.script", "expected a list")
    if script and mode != "scripted":
        raise ScenarioError(f"{where}.script", f"only used in scripted mode, mode is {mode!r}")
    entries = []
    for k, e in enumerate(script):
        w = f"{where}.script[{k}]"
        e = _mapping(e, w)
        _check_keys(e, ("step", "task", "proc", "progress"), w)
        entries.append(ScriptedFault(
            step=_number(e, "step", w, integer=True, nonneg=True),
            task=_string(e, "task", w),
            proc=_number(e, "proc", w, integer=True, nonneg=True),
            progress=_number(e, "progress", w, 0.5),
        ))
    p_f = _number(raw, "p_f", where, 0.0, nonneg=True)
    if p_f and mode != "random":
        raise ScenarioError(f"{where}.p_f", f"only used in random mode, mode is {mode!r}")
    seed = _number(raw, "seed", where, 0, integer=True)
    try:
        return FaultProcess(mode=mode, script=tuple(entries), p_f=p_f, seed=seed)
    except FaultConfigError as exc:
        raise ScenarioError(*str(exc).split(": ", 1)) from None


def _parse_schedule(raw, topology: SystemTopology, where="load_schedule") -> tuple:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ScenarioError(where, "expected a list of {step, exec_factor} entries")
    schedule = []
    for k, entry in enumerate(raw):
        w = f"{where}[{k}]"
        entry = _mapping(entry, w)
        _check_keys(entry, ("step", "exec_factor"), w)
        step = _number(entry, "step", w, integer=True, nonneg=True)
        g = entry.get("exec_factor")
        if isinstance(g, Mapping):
            for tid in g:
                try:
                    topology.task_index(tid)
                except KeyError:
                    raise ScenarioError(f"{w}.exec_factor.{tid}", "unknown task id") from None
            factors = {tid: _number(g, tid, f"{w}.exec_factor") for tid in g}
        elif isinstance(g, list):
            factors = [_number({"g": v}, "g", f"{w}.exec_factor") for v in g]
        else:
            factors = _number(entry, "exec_factor", w)
        schedule.append((step, factors))
    try:
        apply_load_fluctuation(topology, schedule)
    except ValueError as exc:
        raise ScenarioError(*str(exc).split(": ", 1)) from None
    return tuple(schedule)


def _parse_loop(doc: Mapping, topology: SystemTopology) -> LoopConfig:
    loop = _mapping(doc.get("loop"), "loop")
    _check_keys(loop, ("n_steps", "warmup_steps", "dither", "seed"), "loop")
    est = _mapping(doc.get("estimator"), "estimator")
    _check_keys(est, ("order", "lambda", "p0", "prior", "identify_outputs",
                      "saturation_guard", "dead_zone", "gain_floor"), "estimator")
    ctl = _mapping(doc.get("controller"), "controller")
    _check_keys(ctl, ("set_point", "v_weight", "q_weight", "miss_set_point", "move_penalty"),
                "controller")
    plant = _mapping(doc.get("plant"), "plant")
    _check_keys(plant, ("noise",), "plant")

    defaults = LoopConfig()
    d_est, d_ctl = defaults.estimator, defaults.controller

    def opt(section, key, where, default):
        # explicit null disables an optional safeguard
        if key in section and section[key] is None:
            return None
        return _number(section, key, where, default, nonneg=True, optional=True)

    cfg = LoopConfig(
        n_steps=_number(loop, "n_steps", "loop", defaults.n_steps, integer=True),
        warmup_steps=_number(loop, "warmup_steps", "loop", defaults.warmup_steps, integer=True),
        dither=_number(loop, "dither", "loop", defaults.dither),
        seed=_number(loop, "seed", "loop", defaults.seed, integer=True),
        estimator=EstimatorConfig(
            order=_number(est, "order", "estimator", d_est.order, integer=True, positive=True),
            lam=_number(est, "lambda", "estimator", d_est.lam),
            p0=_number(est, "p0", "estimator", d_est.p0),
            prior=_string(est, "prior", "estimator", d_est.prior, ("nominal", "zero")),
            identify_outputs=_bool(est, "identify_outputs", "estimator", d_est.identify_outputs),
            saturation_guard=opt(est, "saturation_guard", "estimator", d_est.saturation_guard),
            dead_zone=opt(est, "dead_zone", "estimator", d_est.dead_zone),
            gain_floor=opt(est, "gain_floor", "estimator", d_est.gain_floor),
        ),
        controller=ControlConfig(
            set_point=_number(ctl, "set_point", "controller", d_ctl.set_point),
            v_weight=_number(ctl, "v_weight", "controller", d_ctl.v_weight),
            q_weight=_number(ctl, "q_weight", "controller", d_ctl.q_weight),
            miss_set_point=_number(ctl, "miss_set_point", "controller", optional=True),
            move_penalty=_string(ctl, "move_penalty", "controller", d_ctl.move_penalty,
                                 ("command", "rate")),
        ),
        plant=PlantConfig(noise=_number(plant, "noise", "plant", defaults.plant.noise)),
        faults=_parse_faults(doc.get("faults")),
        load_schedule=_parse_schedule(doc.get("load_schedule"), topology),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ScenarioError(*str(exc).split(": ", 1)) from None
    try:
        cfg.faults.check(topology, build_allocation_matrix(topology))
    except FaultConfigError as exc:
        raise ScenarioError(*str(exc).split(": ", 1)) from None
    return cfg


def parse_scenario(doc: Any, base_dir: Path | None = None, source: str | None = None) -> Scenario:
    """Build a validated :class:`Scenario` from a loaded YAML document."""
    doc = _mapping(doc, "<document>")
    _check_keys(doc, ("schema", "name", "topology", "loop", "estimator", "controller",
                      "plant", "faults", "load_schedule", "output", "settle_tol"), "")
    if "schema" not in doc:
        raise ScenarioError("schema", f"missing schema version tag (expected {SCHEMA!r})")
    if doc["schema"] != SCHEMA:
        raise ScenarioError("schema", f"unsupported schema {doc['schema']!r} (expected {SCHEMA!r})")
    name = doc.get("name")
    if not isinstance(name, str) or not name.strip():
        raise ScenarioError("name", "scenario name must be a nonempty string")
    topology = _parse_topology(doc.get("topology"), base_dir)
    loop = _parse_loop(doc, topology)
    out = _mapping(doc.get("output"), "output")
    _check_keys(out, ("dir", "trace", "metrics"), "output")
    output = OutputSpec(
        dir=_string(out, "dir", "output") if "dir" in out else None,
        trace=_string(out, "trace", "output", OutputSpec.trace),
        metrics=_string(out, "metrics", "output", OutputSpec.metrics),
    )
    tol = _number(doc, "settle_tol", "<document>", 0.02, positive=True)
    return Scenario(name=name, topology=topology, loop=loop, output=output,
                    settle_tol=tol, source=source)


def load_scenario_text(text: str, base_dir: Path | None = None, source: str | None = None) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError("<document>", f"not valid YAML: {exc}") from None
    return parse_scenario(doc, base_dir, source)


def load_scenario(ref: str | Path) -> Scenario:
    """Load a builtin scenario by name or a scenario file by path."""
    path = Path(ref)
    if path.is_file():
        return load_scenario_text(path.read_text(encoding="utf-8"), path.parent, str(path))
    if str(ref) in BUILTINS:
        return load_scenario_text(BUILTINS[str(ref)], None, f"builtin:{ref}")
    raise ScenarioError("<scenario>", f"{str(ref)!r} is neither a file nor a builtin "
                                      f"({', '.join(sorted(BUILTINS))})")


# ---------------------------------------------------------------------------
# builtin scenarios

_COMMON = """\
loop: {n_steps: 1000, warmup_steps: 10, dither: 0.02, seed: 0}
estimator: {order: 1, lambda: 0.98, p0: 100.0}
controller: {set_point: 0.8123, v_weight: 1.0, q_weight: 0.15, move_penalty: rate}
plant: {noise: 0.005}
"""

BUILTINS: dict[str, str] = {
    # actual execution times at 30% of the estimate: the loop raises rates
    "exp1": """\
schema: fcsched/1
name: exp1
topology:
  generate: {n_procs: 2, tasks_per_proc: 4, set_point: 0.8123, exec_factor: 0.3, wcet_est: 0.05}
""" + _COMMON,
    # seven times the estimate: both processors start saturated
    "exp2": """\
schema: fcsched/1
name: exp2
topology:
  generate: {n_procs: 2, tasks_per_proc: 4, set_point: 0.8123, exec_factor: 7.0, wcet_est: 0.05}
""" + _COMMON,
    # accurate estimate, then workload steps at samples 300, 400 and 800
    "exp3": """\
schema: fcsched/1
name: exp3
topology:
  generate: {n_procs: 2, tasks_per_proc: 4, set_point: 0.8123, exec_factor: 1.0, wcet_est: 0.05}
""" + _COMMON + """\
load_schedule:
  - {step: 300, exec_factor: 1.6}
  - {step: 400, exec_factor: 0.7}
  - {step: 800, exec_factor: 1.2}
""",
    # accurate estimate with random transient faults
    "ft": """\
schema: fcsched/1
name: ft
topology:
  generate: {n_procs: 2, tasks_per_proc: 4, set_point: 0.8123, exec_factor: 1.0, wcet_est: 0.05}
""" + _COMMON + """\
faults:
  mode: random
  p_f: 0.002
  seed: 7
""",
}
