"""Task set, processor topology and the task-to-processor allocation matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np


class Criticality(str, Enum):
    SC = "SC"
    NON_SC = "non-SC"


class TopologyError(ValueError):
    """Raised when a task or topology violates its invariants.

    ``field`` names the offending entry (e.g. ``tasks[3].rate_min``) so that
    scenario validation can report it verbatim.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class TaskSpec:
    """A periodic task.

    ``exec_factor`` is the ratio of actual to estimated execution time, so the
    real per-job demand is ``exec_factor * wcet_est`` seconds.  Rate bounds
    default to ``[0.1, 10] * rate_init`` when left as ``None``.
    """

    id: str
    wcet_est: float
    rate_init: float
    exec_factor: float = 1.0
    rate_min: float | None = None
    rate_max: float | None = None
    criticality: Criticality = Criticality.NON_SC
    home_proc: int = 0
    replica_procs: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "criticality", Criticality(self.criticality))
        object.__setattr__(self, "replica_procs", tuple(int(p) for p in self.replica_procs))
        if self.rate_min is None:
            object.__setattr__(self, "rate_min", 0.1 * self.rate_init)
        if self.rate_max is None:
            object.__setattr__(self, "rate_max", 10.0 * self.rate_init)

    @property
    def demand(self) -> float:
        """Actual execution time of one job."""
        return self.exec_factor * self.wcet_est

    @property
    def procs(self) -> tuple[int, ...]:
        return (self.home_proc,) + self.replica_procs

    def validate(self, n_procs: int, where: str = "task") -> None:
        if not self.id:
            raise TopologyError(f"{where}.id", "task id must be nonempty")
        for name in ("wcet_est", "exec_factor", "rate_init", "rate_min", "rate_max"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise TopologyError(f"{where}.{name}", f"task {self.id!r}: must be finite")
        if self.wcet_est <= 0:
            raise TopologyError(f"{where}.wcet_est", f"task {self.id!r}: must be > 0")
        if self.exec_factor <= 0:
            raise TopologyError(f"{where}.exec_factor", f"task {self.id!r}: must be > 0")
        if self.rate_min <= 0:
            raise TopologyError(f"{where}.rate_min", f"task {self.id!r}: must be > 0")
        if self.rate_min > self.rate_max:
            raise TopologyError(
                f"{where}.rate_min",
                f"task {self.id!r}: rate_min {self.rate_min} > rate_max {self.rate_max}",
            )
        if not self.rate_min <= self.rate_init <= self.rate_max:
            raise TopologyError(
                f"{where}.rate_init",
                f"task {self.id!r}: rate_init {self.rate_init} outside "
                f"[{self.rate_min}, {self.rate_max}]",
            )
        for p in self.procs:
            if not 0 <= p < n_procs:
                raise TopologyError(
                    f"{where}.replica_procs" if p in self.replica_procs else f"{where}.home_proc",
                    f"task {self.id!r}: processor {p} does not exist (n_procs={n_procs})",
                )
        if self.home_proc in self.replica_procs:
            raise TopologyError(
                f"{where}.replica_procs", f"task {self.id!r}: replica on its home processor"
            )
        if len(set(self.replica_procs)) != len(self.replica_procs):
            raise TopologyError(f"{where}.replica_procs", f"task {self.id!r}: duplicate replica")
        if self.replica_procs and self.criticality is not Criticality.SC:
            raise TopologyError(
                f"{where}.replica_procs", f"task {self.id!r}: only SC tasks may be replicated"
            )


@dataclass(frozen=True)
class SystemTopology:
    n_procs: int
    tasks: tuple[TaskSpec, ...]
    sample_period: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))

    @property
    def m(self) -> int:
        return len(self.tasks)

    @property
    def n(self) -> int:
        return self.n_procs

    def validate(self) -> None:
        if self.n_procs < 1:
            raise TopologyError("topology.n_procs", "need at least one processor")
        if not self.tasks:
            raise TopologyError("topology.tasks", "need at least one task")
        if not (self.sample_period > 0 and math.isfinite(self.sample_period)):
            raise TopologyError("topology.sample_period", "must be a positive number")
        seen = set()
        for j, task in enumerate(self.tasks):
            task.validate(self.n_procs, where=f"tasks[{j}]")
            if task.id in seen:
                raise TopologyError(f"tasks[{j}].id", f"duplicate task id {task.id!r}")
            seen.add(task.id)
        hosted = {p for task in self.tasks for p in task.procs}
        idle = sorted(set(range(self.n_procs)) - hosted)
        if idle:
            raise TopologyError("topology.tasks", f"processor {idle[0]} hosts no task")

    def task_index(self, task_id: str) -> int:
        for j, task in enumerate(self.tasks):
            if task.id == task_id:
                return j
        raise KeyError(task_id)

    @property
    def wcet_est(self) -> np.ndarray:
        return np.array([t.wcet_est for t in self.tasks])

    @property
    def exec_factors(self) -> np.ndarray:
        return np.array([t.exec_factor for t in self.tasks])

    @property
    def rate_init(self) -> np.ndarray:
        return np.array([t.rate_init for t in self.tasks])

    @property
    def rate_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([t.rate_min for t in self.tasks])
        hi = np.array([t.rate_max for t in self.tasks])
        return lo, hi

    def with_exec_factors(self, factors: Sequence[float]) -> "SystemTopology":
        if len(factors) != self.m:
            raise ValueError(f"expected {self.m} exec factors, got {len(factors)}")
        tasks = tuple(replace(t, exec_factor=float(g)) for t, g in zip(self.tasks, factors))
        return replace(self, tasks=tasks)


def build_allocation_matrix(topology: SystemTopology) -> np.ndarray:
    """Return K (n_procs x m): K[i, j] counts the instances of task j on processor i."""
    K = np.zeros((topology.n_procs, topology.m), dtype=np.int64)
    for j, task in enumerate(topology.tasks):
        for p in task.procs:
            if not 0 <= p < topology.n_procs:
                raise TopologyError(
                    f"tasks[{j}]", f"task {task.id!r} placed on processor {p} >= {topology.n_procs}"
                )
            K[p, j] += 1
    return K


def estimated_utilization(topology: SystemTopology, rates, K: np.ndarray | None = None) -> np.ndarray:
    """Per-processor utilization predicted from the WCET estimates alone."""
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (topology.m,):
        raise ValueError(f"rate vector has shape {rates.shape}, expected ({topology.m},)")
    if K is None:
        K = build_allocation_matrix(topology)
    return K @ (topology.wcet_est * rates)


def actual_utilization(topology: SystemTopology, rates, K: np.ndarray | None = None) -> np.ndarray:
    """Unsaturated utilization using the true per-job demand g * wcet_est."""
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (topology.m,):
        raise ValueError(f"rate vector has shape {rates.shape}, expected ({topology.m},)")
    if K is None:
        K = build_allocation_matrix(topology)
    return K @ (topology.exec_factors * topology.wcet_est * rates)


def uniform_topology(
    n_procs: int = 2,
    tasks_per_proc: int = 4,
    *,
    set_point: float = 0.8123,
    exec_factor: float = 1.0,
    wcet_est: float = 0.05,
    replicate_sc: bool = True,
    sample_period: float = 1.0,
) -> SystemTopology:
    """Symmetric topology whose estimated utilization equals ``set_point`` on every processor.

    The first task homed on each processor is safety critical; with
    ``replicate_sc`` it is actively replicated on the next processor (ring
    order), so every processor hosts ``tasks_per_proc + 1`` instances.
    """
    replicate = replicate_sc and n_procs > 1
    per_proc = tasks_per_proc + (1 if replicate else 0)
    rate = set_point / (per_proc * wcet_est)
    tasks = []
    for p in range(n_procs):
        for k in range(tasks_per_proc):
            sc = k == 0
            tasks.append(
                TaskSpec(
                    id=f"p{p}t{k}",
                    wcet_est=wcet_est,
                    exec_factor=exec_factor,
                    rate_init=rate,
                    criticality=Criticality.SC if sc else Criticality.NON_SC,
                    home_proc=p,
                    replica_procs=((p + 1) % n_procs,) if sc and replicate else (),
                )
            )
    return SystemTopology(n_procs=n_procs, tasks=tuple(tasks), sample_period=sample_period)
