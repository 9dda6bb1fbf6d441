"""Transient fault injection and recovery (re-execution, active replication)."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .edf import Job
    from .model import SystemTopology


class Recovery(str, Enum):
    REEXECUTED = "ReExecuted"
    MASKED = "MaskedByReplica"
    UNRECOVERED = "Unrecovered"


@dataclass
class FaultEvent:
    # recovery is downgraded to UNRECOVERED if the re-executed job later misses
    step: int
    task: int
    proc: int
    recovery: Recovery


@dataclass(frozen=True)
class ScriptedFault:
    step: int
    task: str
    proc: int
    progress: float = 0.5


@dataclass(frozen=True)
class FaultHit:
    job: "Job"
    progress: float


class FaultConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FaultProcess:
    """How faults are generated.

    ``mode`` is ``"none"``, ``"scripted"`` (explicit ``(step, task, proc)``
    hits) or ``"random"`` (each job is hit independently with probability
    ``p_f``, drawn from a generator seeded with ``seed``).
    """

    mode: str = "none"
    script: tuple[ScriptedFault, ...] = ()
    p_f: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "script", tuple(self.script))
        if self.mode not in ("none", "scripted", "random"):
            raise FaultConfigError(f"faults.mode: unknown mode {self.mode!r}")
        if not 0.0 <= self.p_f <= 1.0:
            raise FaultConfigError(f"faults.p_f: {self.p_f} not in [0, 1]")
        for k, f in enumerate(self.script):
            if not 0.0 <= f.progress <= 1.0:
                raise FaultConfigError(f"faults.script[{k}].progress: {f.progress} not in [0, 1]")
            if f.step < 0:
                raise FaultConfigError(f"faults.script[{k}].step: must be >= 0")

    @classmethod
    def scripted(cls, entries: Iterable[tuple]) -> "FaultProcess":
        return cls(mode="scripted", script=tuple(ScriptedFault(*e) for e in entries))

    @classmethod
    def random(cls, p_f: float, seed: int = 0) -> "FaultProcess":
        return cls(mode="random", p_f=p_f, seed=seed)

    def check(self, topology: "SystemTopology", K: np.ndarray) -> None:
        """Reject scripted hits on a (task, processor) pair with no instance."""
        for k, f in enumerate(self.script):
            try:
                j = topology.task_index(f.task)
            except KeyError:
                raise FaultConfigError(f"faults.script[{k}].task: unknown task {f.task!r}") from None
            if not 0 <= f.proc < K.shape[0] or K[f.proc, j] == 0:
                raise FaultConfigError(
                    f"faults.script[{k}].proc: task {f.task!r} has no instance on processor {f.proc}"
                )

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def inject(
    process: FaultProcess,
    step: int,
    jobs: Sequence["Job"],
    topology: "SystemTopology",
    rng: np.random.Generator | None = None,
) -> list[FaultHit]:
    """Choose which of the jobs released in window ``step`` are hit by a fault.

    Scripted entries hit the first job of the named task instance released in
    that window (no job released, no hit).  Random mode draws one uniform per
    job for the hit decision and one for the progress point, in job order.
    """
    if process.mode == "none" or not jobs:
        return []
    if process.mode == "scripted":
        hits = []
        for f in process.script:
            if f.step != step:
                continue
            try:
                j = topology.task_index(f.task)
            except KeyError:
                raise FaultConfigError(f"scripted fault on unknown task {f.task!r}") from None
            if f.proc not in topology.tasks[j].procs:
                raise FaultConfigError(f"task {f.task!r} has no instance on processor {f.proc}")
            candidates = [job for job in jobs if job.task == j and job.proc == f.proc]
            if not candidates:
                continue
            first = min(candidates, key=lambda job: job.release)
            if first.hit:
                continue
            first.hit = True
            hits.append(FaultHit(first, f.progress))
        return hits
    if rng is None:
        raise ValueError("random fault injection needs a generator")
    draws = rng.random(len(jobs))
    where = rng.random(len(jobs))
    hits = []
    for job, u, p in zip(jobs, draws, where):
        if u < process.p_f and not job.hit:
            job.hit = True
            hits.append(FaultHit(job, float(p)))
    return hits


def recover(job: "Job", twins: Sequence["Job"], step: int) -> FaultEvent:
    """Apply the recovery policy at the instant a fault manifests in ``job``.

    If another instance of the same logical job is fault-free, the faulty copy
    is abandoned and its twin supplies the result.  Otherwise the job restarts
    from the beginning with its full demand.
    """
    if any(t is not job and t.proc != job.proc and not (t.hit or t.missed) for t in twins):
        job.masked = True
        job.remaining = 0.0
        event = FaultEvent(step, job.task, job.proc, Recovery.MASKED)
    else:
        job.reexecuted = True
        job.executed = 0.0
        job.remaining = job.demand
        event = FaultEvent(step, job.task, job.proc, Recovery.REEXECUTED)
    job.fault_at = None
    job.fault_event = event
    return event
