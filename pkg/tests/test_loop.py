from dataclasses import replace

import numpy as np
import pytest

from fcsched import loop as loop_mod
from fcsched.faults import FaultProcess
from fcsched.loop import (
    ControlConfig,
    EstimatorConfig,
    LoopConfig,
    LoopError,
    PlantConfig,
    TraceRecord,
    max_swing,
    run_loop,
    settling_index,
    summarize,
    turning_points,
)
from fcsched.model import uniform_topology
from fcsched.scenario import load_scenario

SP = 0.8123


def record(step, y):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return TraceRecord(step, y, y, np.ones(1), np.zeros(1), 0.0, 0.0, 0.0, 0, 0, 0,
                       np.zeros(1, dtype=bool))


def test_zero_steps_gives_empty_trace():
    assert run_loop(LoopConfig(n_steps=0), uniform_topology()) == []


def test_zero_tracking_weight_freezes_rates_after_warmup():
    cfg = LoopConfig(n_steps=60, controller=ControlConfig(v_weight=0.0),
                     plant=PlantConfig(noise=0.0))
    trace = run_loop(cfg, uniform_topology(exec_factor=0.6))
    after = trace[cfg.warmup_steps + 1:]
    for r in after:
        assert np.array_equal(r.rates, after[0].rates)
        assert np.array_equal(r.y_meas, after[0].y_meas)
        assert np.all(r.u_cmd == 0)


def test_exp1_configuration_converges_from_below():
    s = load_scenario("exp1")
    trace = run_loop(replace(s.loop, n_steps=400), s.topology)
    assert np.allclose(trace[0].y_raw, 0.3 * SP, atol=1e-12)
    assert np.all(np.abs(trace[0].y_meas - 0.2437) < 0.01)
    assert np.all(np.abs(trace[-1].y_meas - SP) < 0.02)


def test_trace_shape_and_steps():
    topo = uniform_topology(exec_factor=1.2)
    trace = run_loop(LoopConfig(n_steps=30), topo)
    assert [r.step for r in trace] == list(range(30))
    for r in trace:
        assert r.y_meas.shape == r.y_raw.shape == (2,)
        assert r.rates.shape == r.u_cmd.shape == r.clamped.shape == (8,)
        assert 0 <= r.miss_ratio <= 1


def test_reproducible():
    cfg = LoopConfig(n_steps=80, seed=5, faults=FaultProcess.random(0.01, seed=2))
    topo = uniform_topology(exec_factor=2.0)
    assert run_loop(cfg, topo) == run_loop(cfg, topo)


def test_seed_changes_the_run():
    topo = uniform_topology()
    a = run_loop(LoopConfig(n_steps=20, seed=1), topo)
    b = run_loop(LoopConfig(n_steps=20, seed=2), topo)
    assert a != b


def test_causality_prefix_of_longer_run():
    topo = uniform_topology(exec_factor=3.0)
    faults = FaultProcess.random(0.02, seed=4)
    long = run_loop(LoopConfig(n_steps=120, faults=faults), topo)
    short = run_loop(LoopConfig(n_steps=45, faults=faults), topo)
    assert long[:45] == short


def test_warmup_holds_initial_rates_without_dither():
    topo = uniform_topology(exec_factor=0.5)
    trace = run_loop(LoopConfig(n_steps=20, warmup_steps=10, dither=0.0), topo)
    for r in trace[:11]:
        assert np.array_equal(r.rates, topo.rate_init)


def test_warmup_dither_stays_within_band():
    topo = uniform_topology(exec_factor=0.5)
    trace = run_loop(LoopConfig(n_steps=20, warmup_steps=10, dither=0.02), topo)
    for r in trace[:11]:
        assert np.all(np.abs(r.rates / topo.rate_init - 1) <= 0.02 + 1e-12)


def test_equilibrium_is_held():
    cfg = LoopConfig(n_steps=300, dither=0.0, plant=PlantConfig(noise=0.0))
    trace = run_loop(cfg, uniform_topology(exec_factor=1.0))
    for r in trace:
        assert np.all(np.abs(r.y_meas - SP) < 1e-9)


def test_errors_carry_step_index(monkeypatch):
    real = loop_mod.step_plant
    calls = {"n": 0}

    def failing(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 6:
            raise ValueError("actuator fault")
        return real(*args, **kwargs)

    monkeypatch.setattr(loop_mod, "step_plant", failing)
    with pytest.raises(LoopError) as info:
        run_loop(LoopConfig(n_steps=20), uniform_topology())
    assert info.value.step == 5
    assert "step 5" in str(info.value)


@pytest.mark.parametrize(
    "cfg, field",
    [
        (LoopConfig(n_steps=5, warmup_steps=5), "loop.warmup_steps"),
        (LoopConfig(n_steps=-1), "loop.n_steps"),
        (LoopConfig(dither=1.5), "loop.dither"),
        (LoopConfig(estimator=EstimatorConfig(lam=0.0)), "estimator.lambda"),
        (LoopConfig(estimator=EstimatorConfig(prior="zero")), "estimator.identify_outputs"),
        (LoopConfig(controller=ControlConfig(q_weight=0.0)), "controller.q_weight"),
        (LoopConfig(controller=ControlConfig(set_point=1.2)), "controller.set_point"),
        (LoopConfig(controller=ControlConfig(move_penalty="x")), "controller.move_penalty"),
        (LoopConfig(plant=PlantConfig(noise=-1)), "plant.noise"),
    ],
)
def test_config_validation_names_field(cfg, field):
    with pytest.raises(ValueError, match=field):
        cfg.validate()


def test_full_arx_identification_runs():
    est = EstimatorConfig(prior="zero", identify_outputs=True)
    trace = run_loop(LoopConfig(n_steps=50, estimator=est), uniform_topology(exec_factor=0.8))
    assert len(trace) == 50 and all(np.all(np.isfinite(r.rates)) for r in trace)


def test_command_penalty_reading_runs():
    ctl = ControlConfig(move_penalty="command", q_weight=0.3)
    trace = run_loop(LoopConfig(n_steps=200, controller=ctl), uniform_topology(exec_factor=3.0))
    assert summarize(trace, SP).settled


# ---------------------------------------------------------------------------
# metrics


def test_summary_of_constant_trace():
    m = summarize([record(k, [SP, SP]) for k in range(10)], SP)
    assert (m.settling_step, m.overshoot, m.steady_state_err) == (0, 0.0, 0.0)


def test_single_crossing_overshoot():
    ys = [0.5, 0.7, SP + 0.05, SP + 0.01] + [SP] * 10
    m = summarize([record(k, y) for k, y in enumerate(ys)], SP)
    assert m.overshoot == pytest.approx(0.05, abs=1e-12)
    assert m.settling_step == 3


def test_summary_rejects_empty_trace():
    with pytest.raises(ValueError):
        summarize([], SP)


def test_never_settling():
    m = summarize([record(k, [0.5 if k % 2 else SP]) for k in range(10)], SP)
    assert m.settling_step is None and not m.settled


def test_settling_index():
    assert settling_index(np.array([0.0, 0.0]), 0.02) == 0
    assert settling_index(np.array([0.5, 0.03, 0.01, 0.0]), 0.02) == 2
    assert settling_index(np.array([0.0, 0.5]), 0.02) is None


def test_turning_points_ignore_noise():
    y = np.array([1.0, 1.0, 0.6, 0.605, 0.9, 0.895, 0.8, 0.81, 0.8])
    pts = turning_points(y, 0.05)
    assert [(i, kind) for i, _, kind in pts] == [(2, "min"), (4, "max")]
    assert max_swing(np.array([0.2, 0.9, 0.5, 0.8])) == pytest.approx(0.4)
    assert max_swing(np.full(5, 0.8)) == 0.0


def test_steady_state_error_uses_final_fifth():
    ys = [0.0] * 80 + [SP + 0.01] * 20
    m = summarize([record(k, y) for k, y in enumerate(ys)], SP)
    assert m.steady_state_err == pytest.approx(0.01)
