"""Adaptive feedback-control scheduling simulator.

An RLS-identified ARX model of per-processor utilization drives a one-step
LQ controller that adjusts periodic task rates toward a utilization set
point, while a job-level EDF simulation reports deadline misses under
execution-time misestimation, load changes and transient faults.
"""

from .edf import EdfState, Job, MissReport, simulate_jobs_edf
from .faults import FaultEvent, FaultProcess, Recovery, ScriptedFault, inject, recover
from .loop import (
    ControlConfig,
    EstimatorConfig,
    LoopConfig,
    LoopDivergence,
    LoopError,
    Metrics,
    PlantConfig,
    TraceRecord,
    run_loop,
    summarize,
)
from .lq import ControllerConfig, clamp_rates, free_response, lq_control, lq_cost, lq_solve
from .model import (
    Criticality,
    SystemTopology,
    TaskSpec,
    TopologyError,
    actual_utilization,
    build_allocation_matrix,
    estimated_utilization,
    uniform_topology,
)
from .plant import PlantState, TopologySchedule, apply_load_fluctuation, initial_plant_state, step_plant
from .rls import ArxModel, EstimatorState, make_regressor, predict, rls_update
from .scenario import BUILTINS, Scenario, ScenarioError, load_scenario
from .traceio import format_trace, parse_trace, read_trace, write_trace

__version__ = "0.1.0"
