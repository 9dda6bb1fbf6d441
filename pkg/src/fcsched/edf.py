"""Job-level preemptive EDF simulation used to measure the deadline-miss ratio.

Every task instance (home or replica) releases jobs periodically at the task's
current rate with an implicit deadline equal to the period.  Deadlines are
firm: a job still unfinished at its deadline is aborted and counted as a miss,
which keeps queues bounded under overload.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .faults import FaultEvent, FaultProcess, Recovery, inject, recover
from .model import Criticality, SystemTopology

EPS = 1e-9


@dataclass(eq=False)
class Job:
    task: int
    proc: int
    seq: int
    release: float
    deadline: float
    demand: float
    remaining: float = math.nan
    executed: float = 0.0
    busy: float = 0.0
    fault_at: float | None = None
    hit: bool = False
    masked: bool = False
    reexecuted: bool = False
    missed: bool = False
    finish: float | None = None
    fault_event: FaultEvent | None = None

    def __post_init__(self):
        if math.isnan(self.remaining):
            self.remaining = self.demand

    @property
    def resolved(self) -> bool:
        return self.finish is not None or self.missed or self.masked


@dataclass
class _Instance:
    task: int
    next_release: float
    seq: int = 0


@dataclass
class EdfState:
    """Per-processor ready queues plus release bookkeeping carried across windows."""

    queues: list[list[Job]]
    instances: list[list[_Instance]]
    twins: dict[tuple[int, int], list[Job]] = field(default_factory=dict)

    @classmethod
    def initial(cls, topology: SystemTopology, K: np.ndarray, start: float = 0.0) -> "EdfState":
        n, m = K.shape
        instances = [
            [_Instance(j, start) for j in range(m) for _ in range(int(K[p, j]))] for p in range(n)
        ]
        return cls(queues=[[] for _ in range(n)], instances=instances)


@dataclass
class MissReport:
    """Deadline statistics for one sampling window.

    ``released`` counts job releases inside the window.  ``resolved`` counts
    jobs whose fate was decided inside the window (completed, aborted at the
    deadline, or abandoned because a replica masked a fault); the miss ratio is
    taken over resolved jobs so it always lies in [0, 1].
    """

    released: int = 0
    resolved: int = 0
    missed: int = 0
    sc_missed: int = 0
    faults_injected: int = 0
    events: list[FaultEvent] = field(default_factory=list)
    outcomes: list[Job] = field(default_factory=list)

    @property
    def miss_ratio(self) -> float:
        return self.missed / self.resolved if self.resolved else 0.0

    @property
    def faults_masked(self) -> int:
        return sum(e.recovery is Recovery.MASKED for e in self.events)

    @property
    def faults_reexecuted(self) -> int:
        return sum(e.recovery is not Recovery.MASKED for e in self.events)


def _release_jobs(
    state: EdfState, topology: SystemTopology, rates: np.ndarray, t0: float, t1: float
) -> list[Job]:
    jobs = []
    for p, insts in enumerate(state.instances):
        for inst in insts:
            task = topology.tasks[inst.task]
            rate = float(rates[inst.task])
            if rate <= 0:
                continue
            period = 1.0 / rate
            if inst.next_release < t0 - EPS:
                # rate was zero or the window was skipped: resynchronise
                inst.next_release = t0
            while inst.next_release < t1 - EPS:
                r = inst.next_release
                jobs.append(Job(inst.task, p, inst.seq, r, r + period, task.demand))
                inst.seq += 1
                inst.next_release = r + period
    jobs.sort(key=lambda j: (j.release, j.proc, j.task, j.seq))
    return jobs


def simulate_jobs_edf(
    state: EdfState,
    t0: float,
    window: float,
    topology: SystemTopology,
    rates,
    *,
    step: int = 0,
    faults: FaultProcess | None = None,
    fault_rng: np.random.Generator | None = None,
) -> MissReport:
    """Run every processor under preemptive EDF over ``[t0, t0 + window)``.

    Unfinished jobs stay in ``state.queues`` for the next window.  Faults from
    ``faults`` are drawn for the jobs released in this window before any of
    them runs.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    t1 = t0 + window
    rates = np.asarray(rates, dtype=float)
    report = MissReport()

    released = _release_jobs(state, topology, rates, t0, t1)
    report.released = len(released)
    for job in released:
        state.twins.setdefault((job.task, job.seq), []).append(job)
    if faults is not None:
        for hit in inject(faults, step, released, topology, fault_rng):
            hit.job.fault_at = hit.progress * hit.job.demand
            report.faults_injected += 1

    per_proc: list[list[Job]] = [[] for _ in state.queues]
    for job in released:
        per_proc[job.proc].append(job)
    for p, queue in enumerate(state.queues):
        _run_processor(state, queue, per_proc[p], t0, t1, step, report)

    # drop replica bookkeeping for logical jobs whose every copy is settled
    for key in [k for k, js in state.twins.items() if all(j.resolved for j in js)]:
        del state.twins[key]

    sc = {j for j, t in enumerate(topology.tasks) if t.criticality is Criticality.SC}
    report.sc_missed = sum(1 for j in report.outcomes if j.missed and j.task in sc)
    return report


def _settle(job: Job, report: MissReport) -> None:
    report.resolved += 1
    report.outcomes.append(job)
    if job.missed:
        report.missed += 1
        if job.fault_event is not None and job.fault_event.recovery is Recovery.REEXECUTED:
            job.fault_event.recovery = Recovery.UNRECOVERED


def _priority(job: Job):
    # deadlines and releases are sums of floating-point periods; rounding to
    # the event resolution keeps exact ties (e.g. 0.2 + 0.1 vs 0.25 + 0.05)
    # tied so they fall through to the deterministic tie-breakers
    return (round(job.deadline, 9), round(job.release, 9), job.task, job.seq)


def _run_processor(
    state: EdfState,
    ready: list[Job],
    arrivals: list[Job],
    t0: float,
    t1: float,
    step: int,
    report: MissReport,
) -> None:
    t = t0
    nxt = 0
    while True:
        while nxt < len(arrivals) and arrivals[nxt].release <= t + EPS:
            ready.append(arrivals[nxt])
            nxt += 1
        for job in [j for j in ready if j.deadline <= t + EPS]:
            ready.remove(job)
            job.missed = True
            _settle(job, report)
        if t >= t1 - EPS:
            break
        horizon = min(t1, arrivals[nxt].release if nxt < len(arrivals) else math.inf)
        if not ready:
            t = horizon
            continue
        job = min(ready, key=_priority)
        horizon = min(horizon, job.deadline)
        run = job.remaining if job.fault_at is None else job.fault_at - job.executed
        dt = max(0.0, min(run, horizon - t))
        job.executed += dt
        job.busy += dt
        job.remaining -= dt
        t += dt
        if job.fault_at is not None and job.executed >= job.fault_at - EPS:
            event = recover(job, state.twins.get((job.task, job.seq), ()), step)
            report.events.append(event)
            if job.masked:
                ready.remove(job)
                _settle(job, report)
                continue
        if job.remaining <= EPS:
            ready.remove(job)
            job.remaining = 0.0
            job.finish = t
            _settle(job, report)
