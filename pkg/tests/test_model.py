import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcsched.model import (
    Criticality,
    SystemTopology,
    TaskSpec,
    TopologyError,
    actual_utilization,
    build_allocation_matrix,
    estimated_utilization,
    uniform_topology,
)
from oracles import count_instances


def task(tid, home=0, replicas=(), sc=None, wcet=0.1, rate=5.0, g=1.0, **kw):
    crit = Criticality.SC if (sc if sc is not None else bool(replicas)) else Criticality.NON_SC
    return TaskSpec(tid, wcet, rate, g, criticality=crit, home_proc=home,
                    replica_procs=tuple(replicas), **kw)


def test_single_placement():
    topo = SystemTopology(1, (task("a"),))
    assert build_allocation_matrix(topo).tolist() == [[1]]


def test_replica_placement():
    topo = SystemTopology(2, (task("A", home=0), task("B", home=1, replicas=(0,))))
    assert build_allocation_matrix(topo).tolist() == [[1, 1], [0, 1]]


@st.composite
def placements(draw):
    n = draw(st.integers(1, 3))
    m = draw(st.integers(1, 5))
    tasks = []
    for j in range(m):
        home = draw(st.integers(0, n - 1))
        others = [p for p in range(n) if p != home]
        reps = draw(st.lists(st.sampled_from(others), unique=True)) if others else []
        tasks.append(task(f"t{j}", home=home, replicas=reps))
    return SystemTopology(n, tuple(tasks))


@given(placements())
@settings(max_examples=200, deadline=None)
def test_allocation_matches_bruteforce_count(topo):
    K = build_allocation_matrix(topo)
    assert np.array_equal(K, count_instances(topo.n_procs, [t.procs for t in topo.tasks]))
    assert np.all(K.sum(axis=0) >= 1)
    # deterministic and idempotent
    assert np.array_equal(K, build_allocation_matrix(topo))


def test_random_three_proc_five_task_placement():
    rng = np.random.default_rng(3)
    for _ in range(50):
        tasks = []
        for j in range(5):
            home = int(rng.integers(3))
            reps = [p for p in range(3) if p != home and rng.random() < 0.5]
            tasks.append(task(f"t{j}", home=home, replicas=reps))
        topo = SystemTopology(3, tuple(tasks))
        K = build_allocation_matrix(topo)
        for p in range(3):
            for j, t in enumerate(tasks):
                assert K[p, j] == (p == t.home_proc) + (p in t.replica_procs)


def test_rejects_processor_out_of_range():
    topo = SystemTopology(2, (task("a", home=0), task("b", home=1, replicas=(2,))))
    with pytest.raises(TopologyError, match="processor 2"):
        build_allocation_matrix(topo)


def test_task_invariants():
    with pytest.raises(TopologyError, match="rate_min"):
        task("a", rate_min=6.0, rate_max=5.5).validate(1)
    with pytest.raises(TopologyError, match="wcet_est"):
        task("a", wcet=0.0).validate(1)
    with pytest.raises(TopologyError, match="exec_factor"):
        task("a", g=-1.0).validate(1)
    with pytest.raises(TopologyError, match="home processor"):
        task("a", home=1, replicas=(1,)).validate(2)
    with pytest.raises(TopologyError, match="only SC"):
        task("a", replicas=(1,), sc=False).validate(2)
    with pytest.raises(TopologyError, match="rate_init"):
        task("a", rate=5.0, rate_min=6.0, rate_max=7.0).validate(1)


def test_default_rate_bounds():
    t = task("a", rate=4.0)
    assert t.rate_min == pytest.approx(0.4) and t.rate_max == pytest.approx(40.0)


def test_topology_invariants():
    with pytest.raises(TopologyError, match="processor 1 hosts no task"):
        SystemTopology(2, (task("a"),)).validate()
    with pytest.raises(TopologyError, match="duplicate"):
        SystemTopology(1, (task("a"), task("a"))).validate()
    with pytest.raises(TopologyError, match="sample_period"):
        SystemTopology(1, (task("a"),), sample_period=0).validate()
    with pytest.raises(TopologyError, match="at least one task"):
        SystemTopology(1, ()).validate()


def test_estimated_utilization_examples():
    topo = SystemTopology(1, (task("a", wcet=0.1),))
    assert estimated_utilization(topo, np.zeros(1)).tolist() == [0.0]
    assert estimated_utilization(topo, np.array([5.0]))[0] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        estimated_utilization(topo, np.ones(2))


def test_uniform_topology_hits_set_point():
    topo = uniform_topology(set_point=0.8123)
    topo.validate()
    assert np.allclose(estimated_utilization(topo, topo.rate_init), 0.8123, atol=1e-12)
    K = build_allocation_matrix(topo)
    assert K.sum(axis=1).tolist() == [5, 5]
    assert sum(t.criticality is Criticality.SC for t in topo.tasks) == 2


@given(
    placements(),
    st.lists(st.floats(0.0, 100.0), min_size=5, max_size=5),
    st.floats(0.0, 10.0),
)
@settings(max_examples=100, deadline=None)
def test_estimated_utilization_is_linear(topo, raw_rates, alpha):
    rates = np.array(raw_rates[: topo.m])
    f = estimated_utilization(topo, rates)
    assert np.allclose(estimated_utilization(topo, alpha * rates), alpha * f, rtol=1e-12, atol=1e-12)


@given(placements(), st.floats(0.05, 20.0))
@settings(max_examples=100, deadline=None)
def test_uniform_exec_factor_scales_utilization(topo, g):
    topo = topo.with_exec_factors([g] * topo.m)
    rates = topo.rate_init
    assert np.allclose(actual_utilization(topo, rates), g * estimated_utilization(topo, rates),
                       rtol=1e-9, atol=1e-9)
