"""Per-processor utilization plant.

Rates are the plant state; utilization follows from them through the
allocation matrix and the true per-job demand, so a rate change ``delta_r``
moves utilization by ``K diag(g * wcet_est) delta_r`` and utilization is
otherwise held (identity state matrix).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, replace
from numbers import Real
from typing import Mapping, Sequence

import numpy as np

from .edf import EdfState
from .model import SystemTopology, actual_utilization


@dataclass
class PlantState:
    y: np.ndarray
    y_raw: np.ndarray
    rates: np.ndarray
    clock: float
    job_queues: EdfState
    rng_seed: int = 0


def measure(topology: SystemTopology, rates, K: np.ndarray, disturbance=None):
    """Return ``(y_raw, y)``: unsaturated utilization and the clipped measurement."""
    y_raw = actual_utilization(topology, rates, K)
    y = np.minimum(y_raw, 1.0)
    if disturbance is not None:
        y = np.clip(y + np.asarray(disturbance, dtype=float), 0.0, 1.0)
    return y_raw, y


def initial_plant_state(
    topology: SystemTopology, K: np.ndarray, disturbance=None, rng_seed: int = 0
) -> PlantState:
    rates = topology.rate_init.astype(float)
    y_raw, y = measure(topology, rates, K, disturbance)
    return PlantState(
        y=y,
        y_raw=y_raw,
        rates=rates,
        clock=0.0,
        job_queues=EdfState.initial(topology, K),
        rng_seed=rng_seed,
    )


def step_plant(
    state: PlantState,
    delta_r,
    topology: SystemTopology,
    K: np.ndarray,
    disturbance=None,
) -> tuple[PlantState, np.ndarray]:
    """Apply a rate change and advance the clock by one sampling period.

    ``topology`` should be the one in force for the *next* window, so a
    scripted load change shows up in the measurement of the step it is
    scheduled for.  The EDF queues are carried over by reference.
    """
    delta_r = np.asarray(delta_r, dtype=float)
    if delta_r.shape != state.rates.shape:
        raise ValueError(f"delta_r has shape {delta_r.shape}, expected {state.rates.shape}")
    if not np.all(np.isfinite(delta_r)):
        raise ValueError("delta_r contains non-finite entries")
    lo, hi = topology.rate_bounds
    rates = np.clip(state.rates + delta_r, lo, hi)
    y_raw, y = measure(topology, rates, K, disturbance)
    new = replace(
        state, y=y, y_raw=y_raw, rates=rates, clock=state.clock + topology.sample_period
    )
    return new, y


@dataclass(frozen=True)
class LoadChange:
    step: int
    exec_factors: tuple[float, ...]


@dataclass(frozen=True)
class TopologySchedule:
    """A topology whose execution factors switch at scripted sampling steps."""

    base: SystemTopology
    changes: tuple[LoadChange, ...] = ()

    def __post_init__(self):
        steps = [c.step for c in self.changes]
        object.__setattr__(self, "_steps", steps)
        object.__setattr__(
            self, "_topos", [self.base.with_exec_factors(c.exec_factors) for c in self.changes]
        )

    def at(self, step: int) -> SystemTopology:
        k = bisect.bisect_right(self._steps, step)
        return self.base if k == 0 else self._topos[k - 1]


def apply_load_fluctuation(topology: SystemTopology, schedule: Sequence) -> TopologySchedule:
    """Script execution-factor changes.

    Each entry is ``(step, factors)`` where ``factors`` is a single number
    (applied to every task), a per-task sequence, or a mapping from task id to
    factor (unlisted tasks keep their current factor).
    """
    changes = []
    current = list(topology.exec_factors)
    last = None
    for k, (step, factors) in enumerate(schedule):
        step = int(step)
        if last is not None and step <= last:
            raise ValueError(f"load_schedule[{k}].step: steps must be strictly increasing")
        last = step
        if isinstance(factors, Real):
            new = [float(factors)] * topology.m
        elif isinstance(factors, Mapping):
            new = list(current)
            for tid, g in factors.items():
                new[topology.task_index(tid)] = float(g)
        else:
            new = [float(g) for g in factors]
            if len(new) != topology.m:
                raise ValueError(
                    f"load_schedule[{k}]: expected {topology.m} factors, got {len(new)}"
                )
        if any(not g > 0 for g in new):
            raise ValueError(f"load_schedule[{k}]: execution factors must be positive")
        changes.append(LoadChange(step, tuple(new)))
        current = new
    return TopologySchedule(topology, tuple(changes))
