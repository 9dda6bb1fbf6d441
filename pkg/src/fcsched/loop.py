"""Closed adaptive scheduling loop: measure, identify, control, actuate, record."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .edf import simulate_jobs_edf
from .faults import FaultProcess
from .lq import ControllerConfig, clamp_rates, free_response, lq_cost, lq_solve
from .model import SystemTopology, build_allocation_matrix
from .plant import TopologySchedule, apply_load_fluctuation, initial_plant_state, step_plant
from .rls import EstimatorState, make_regressor, nominal_model, predict, project_input_gain, rls_update

log = logging.getLogger(__name__)


class LoopError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class LoopDivergence(LoopError):
    """The closed loop produced non-finite values."""


@dataclass(frozen=True)
class EstimatorConfig:
    order: int = 1
    lam: float = 0.98
    p0: float = 100.0
    # "nominal": start from y(t+1) = y(t) + K diag(wcet_est) u(t); "zero": X = 0
    prior: str = "nominal"
    # False: hold the output blocks at the prior (integrating plant, L_1 = I)
    # and identify only the input gains; True: identify the full ARX model
    identify_outputs: bool = False
    # skip updates where the previous or the new reading is pinned at or above
    # this level (clipped data misstate the input gain); None: never skip
    saturation_guard: float | None = 0.99
    # skip updates whose prediction error stays within this band (max-norm);
    # None: twice the measurement-noise amplitude, 0: update on every sample
    dead_zone: float | None = None
    # floor on identified input gains, as a fraction of the WCET-estimate
    # gain K diag(wcet_est); None disables the projection
    gain_floor: float | None = 0.1


@dataclass(frozen=True)
class ControlConfig:
    set_point: float = 0.8123
    v_weight: float = 1.0
    q_weight: float = 0.5
    miss_set_point: float | None = None
    # "command": penalise changes of the rate-change command (u_prev = last
    # command); "rate": penalise the rate change itself (u_prev held at 0)
    move_penalty: str = "rate"


@dataclass(frozen=True)
class PlantConfig:
    noise: float = 0.005


@dataclass(frozen=True)
class LoopConfig:
    n_steps: int = 1000
    warmup_steps: int = 10
    dither: float = 0.02
    seed: int = 0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    controller: ControlConfig = field(default_factory=ControlConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    faults: FaultProcess = field(default_factory=FaultProcess)
    load_schedule: tuple = ()

    def validate(self) -> None:
        if self.n_steps < 0:
            raise ValueError("loop.n_steps: must be >= 0")
        if self.warmup_steps < 0 or (self.n_steps > 0 and self.warmup_steps >= self.n_steps):
            raise ValueError("loop.warmup_steps: must be >= 0 and < n_steps")
        if not 0 <= self.dither < 1:
            raise ValueError("loop.dither: must be in [0, 1)")
        if self.estimator.order < 1:
            raise ValueError("estimator.order: must be >= 1")
        if not 0 < self.estimator.lam <= 1:
            raise ValueError("estimator.lambda: must be in (0, 1]")
        if not self.estimator.p0 > 0:
            raise ValueError("estimator.p0: must be > 0")
        if self.estimator.dead_zone is not None and self.estimator.dead_zone < 0:
            raise ValueError("estimator.dead_zone: must be >= 0")
        guard = self.estimator.saturation_guard
        if guard is not None and not 0 < guard <= 1:
            raise ValueError("estimator.saturation_guard: must be in (0, 1]")
        if self.estimator.prior not in ("nominal", "zero"):
            raise ValueError(f"estimator.prior: unknown prior {self.estimator.prior!r}")
        if not self.estimator.identify_outputs and self.estimator.prior != "nominal":
            raise ValueError("estimator.identify_outputs: fixed output blocks need the nominal prior")
        if not 0 < self.controller.set_point < 1:
            raise ValueError("controller.set_point: must be in (0, 1)")
        if self.controller.v_weight < 0:
            raise ValueError("controller.v_weight: must be >= 0")
        if not self.controller.q_weight > 0:
            raise ValueError("controller.q_weight: must be > 0")
        if self.controller.move_penalty not in ("command", "rate"):
            raise ValueError(f"controller.move_penalty: unknown {self.controller.move_penalty!r}")
        if self.plant.noise < 0:
            raise ValueError("plant.noise: must be >= 0")


@dataclass
class TraceRecord:
    step: int
    y_meas: np.ndarray
    y_raw: np.ndarray
    rates: np.ndarray
    u_cmd: np.ndarray
    miss_ratio: float
    pred_err_norm: float
    cost: float
    faults_injected: int
    faults_masked: int
    faults_reexecuted: int
    clamped: np.ndarray
    jobs_resolved: int = 0
    jobs_missed: int = 0

    def __eq__(self, other):
        if not isinstance(other, TraceRecord):
            return NotImplemented
        for name in self.__dataclass_fields__:
            a, b = getattr(self, name), getattr(other, name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True


def _initial_estimator(cfg: EstimatorConfig, topology: SystemTopology, K: np.ndarray):
    n, m = K.shape
    prior = None
    if cfg.prior == "nominal":
        prior = nominal_model(K * topology.wcet_est, cfg.order)
    fixed = None
    if not cfg.identify_outputs:
        fixed = np.arange(cfg.order * (m + n)) >= cfg.order * m
    return EstimatorState.create(n, m, cfg.order, cfg.lam, cfg.p0, prior=prior, fixed=fixed)


def _saturated(y, guard) -> bool:
    return guard is not None and y is not None and bool(np.any(y >= guard))


def _check_finite(step: int, **arrays) -> None:
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise LoopDivergence(step, f"{name} is not finite")


def run_loop(config: LoopConfig, topology: SystemTopology | TopologySchedule) -> list[TraceRecord]:
    """Simulate the adaptive loop for ``config.n_steps`` sampling periods.

    Per step: simulate the EDF window (with faults), read the utilization
    measurement, update the RLS estimate with the previous regressor, compute
    the LQ command (a probing dither during warm-up), actuate, record.
    """
    config.validate()
    if isinstance(topology, TopologySchedule):
        schedule = topology
    else:
        topology.validate()
        schedule = apply_load_fluctuation(topology, config.load_schedule)
    base = schedule.base
    K = build_allocation_matrix(base)
    config.faults.check(base, K)
    n, m = K.shape
    T = base.sample_period

    noise_rng, dither_rng = [
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2)
    ]
    fault_rng = np.random.default_rng((config.seed, config.faults.seed))

    def disturbance():
        sigma = config.plant.noise
        return noise_rng.uniform(-sigma, sigma, n) if sigma > 0 else None

    plant = initial_plant_state(schedule.at(0), K, disturbance(), rng_seed=config.seed)
    est = _initial_estimator(config.estimator, base, K)
    l = est.model.order
    ctl = ControllerConfig(
        config.controller.v_weight * np.eye(n),
        config.controller.q_weight * np.eye(m),
        np.full(n, config.controller.set_point),
        miss_set_point=config.controller.miss_set_point,
    )
    lo, hi = base.rate_bounds
    rate_init = base.rate_init

    guard = config.estimator.saturation_guard
    dead_zone = config.estimator.dead_zone
    if dead_zone is None:
        dead_zone = 2.0 * config.plant.noise
    gain_floor = None
    if config.estimator.gain_floor is not None:
        gain_floor = config.estimator.gain_floor * (K * base.wcet_est)
    trace: list[TraceRecord] = []
    z_prev = y_prev = None
    for k in range(config.n_steps):
        topo = schedule.at(k)
        try:
            report = simulate_jobs_edf(
                plant.job_queues, plant.clock, T, topo, plant.rates,
                step=k, faults=config.faults, fault_rng=fault_rng,
            )
            y = plant.y
            if z_prev is not None:
                err = y - predict(est.model, z_prev)
                if _saturated(y, guard) or _saturated(y_prev, guard) or np.max(np.abs(err)) <= dead_zone:
                    est = replace(est, last_error=err)
                else:
                    est = rls_update(est, y, z_prev)
                    if gain_floor is not None:
                        est = project_input_gain(est, gain_floor)
            hist_u = est.hist_u + [np.zeros(m)] * (l - len(est.hist_u))
            hist_y = [y] + est.hist_y[: l - 1]
            hist_y += [y] * (l - len(hist_y))

            M0 = est.model.input_block(0)
            y_free = free_response(est.model, hist_u, hist_y)
            if guard is not None:
                # a saturated reading only bounds utilization from below, and
                # utilization does not fall without a rate decrease
                y_free = np.where(y >= guard, np.maximum(y_free, y), y_free)
            if k < config.warmup_steps:
                signs = dither_rng.choice((-1.0, 1.0), size=m)
                u_star = rate_init * (1.0 + config.dither * signs) - plant.rates
            else:
                u_star = lq_solve(M0, y_free, ctl)
            u = clamp_rates(plant.rates + u_star, base) - plant.rates
            clamped = ~np.isclose(u, u_star, rtol=0.0, atol=1e-12)
            cost = lq_cost(u, M0, y_free, ctl)
            if k >= config.warmup_steps and config.controller.move_penalty == "command":
                ctl = ctl.with_u_prev(u)

            rates_k, y_raw_k = plant.rates, plant.y_raw
            plant, _ = step_plant(plant, u, schedule.at(k + 1), K, disturbance())
            u_applied = plant.rates - rates_k
            _check_finite(k, y=y, u=u_applied, X=est.model.X, P=est.P)
        except LoopError:
            raise
        except ValueError as exc:
            raise LoopError(k, str(exc)) from exc

        z_prev = make_regressor([u_applied] + hist_u, hist_y, l)
        y_prev = y
        est.push(u_applied, y)
        trace.append(
            TraceRecord(
                step=k,
                y_meas=y.copy(),
                y_raw=y_raw_k.copy(),
                rates=rates_k.copy(),
                u_cmd=u_applied,
                miss_ratio=report.miss_ratio,
                pred_err_norm=float(np.linalg.norm(est.last_error)),
                cost=cost,
                faults_injected=report.faults_injected,
                faults_masked=report.faults_masked,
                faults_reexecuted=report.faults_reexecuted,
                clamped=clamped,
                jobs_resolved=report.resolved,
                jobs_missed=report.missed,
            )
        )
    if est.resets:
        log.info("estimator covariance reset %d time(s)", est.resets)
    return trace


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    settling_step: int | None
    overshoot: float
    steady_state_err: float
    total_misses: int
    mean_cost: float
    max_swing: float = 0.0

    @property
    def settled(self) -> bool:
        return self.settling_step is not None


def deviation(trace: Sequence[TraceRecord], set_point: float) -> np.ndarray:
    """max_i |y_i - set_point| per step."""
    y = np.array([r.y_meas for r in trace])
    return np.max(np.abs(y - set_point), axis=1)


def settling_index(dev: np.ndarray, tol: float) -> int | None:
    """First index after which ``dev`` never exceeds ``tol``; None if it never settles."""
    outside = np.nonzero(dev > tol)[0]
    if len(outside) == 0:
        return 0
    last = int(outside[-1])
    return last + 1 if last + 1 < len(dev) else None


def turning_points(y: np.ndarray, threshold: float) -> list[tuple[int, float, str]]:
    """Zig-zag extrema: alternate peaks and troughs separated by moves > ``threshold``.

    Smaller wiggles (measurement noise) are ignored.  The first sample is never
    reported as an extremum.
    """
    points = []
    trend = 0
    ext_i, ext_v = 0, float(y[0])
    lo_i, lo_v, hi_i, hi_v = 0, float(y[0]), 0, float(y[0])
    for i in range(1, len(y)):
        v = float(y[i])
        if trend == 0:
            if v > hi_v:
                hi_i, hi_v = i, v
            if v < lo_v:
                lo_i, lo_v = i, v
            if hi_v - lo_v > threshold:
                trend = 1 if hi_i > lo_i else -1
                ext_i, ext_v = (hi_i, hi_v) if trend == 1 else (lo_i, lo_v)
                if (lo_i if trend == 1 else hi_i) > 0:
                    points.append((lo_i, lo_v, "min") if trend == 1 else (hi_i, hi_v, "max"))
        elif trend == 1:
            if v > ext_v:
                ext_i, ext_v = i, v
            elif ext_v - v > threshold:
                points.append((ext_i, ext_v, "max"))
                trend, ext_i, ext_v = -1, i, v
        else:
            if v < ext_v:
                ext_i, ext_v = i, v
            elif v - ext_v > threshold:
                points.append((ext_i, ext_v, "min"))
                trend, ext_i, ext_v = 1, i, v
    return points


def max_swing(y: np.ndarray, threshold: float = 0.01) -> float:
    """Largest drop from a local maximum to the following local minimum."""
    pts = turning_points(np.asarray(y, dtype=float), threshold)
    swings = [a[1] - b[1] for a, b in zip(pts, pts[1:]) if a[2] == "max" and b[2] == "min"]
    return max(swings, default=0.0)


def summarize(trace: Sequence[TraceRecord], set_point: float, tol: float = 0.02) -> Metrics:
    if not trace:
        raise ValueError("cannot summarize an empty trace")
    dev = deviation(trace, set_point)
    y = np.array([r.y_meas for r in trace])
    idx = settling_index(dev, tol)
    tail = max(1, int(round(0.2 * len(trace))))
    return Metrics(
        settling_step=None if idx is None else trace[idx].step,
        overshoot=float(max(0.0, np.max(y - set_point))),
        steady_state_err=float(np.mean(dev[-tail:])),
        total_misses=int(sum(r.jobs_missed for r in trace)),
        mean_cost=float(np.mean([r.cost for r in trace])),
        max_swing=max(max_swing(y[:, i]) for i in range(y.shape[1])),
    )
