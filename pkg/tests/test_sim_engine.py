import random
from collections import Counter

import pytest

from ftrt.oracle import fault_sweep, rerun_sweep
from ftrt.scheduler import POLICIES
from ftrt.sim_engine import (
    ConfigError,
    EventKind,
    FaultState,
    Metrics,
    SimConfig,
    Simulation,
    TraceEvent,
    compute_metrics,
    fault_machine_step,
    run,
)
from ftrt.task_model import ClassificationError, CopyKind, FaultClass, FaultClassRates, FaultEvent, TaskSpec

from conftest import random_tasks, small_tasks

E = EventKind


def lines(report):
    return report.trace_text().splitlines()


def of_kind(report, kind):
    return [e for e in report.trace if e.kind is kind]


def test_empty_run():
    report = run(SimConfig(2))
    assert report.trace == []
    assert report.metrics == Metrics()


def test_three_task_run(three_tasks):
    report = run(SimConfig(3, three_tasks))
    completes = of_kind(report, E.COMPLETE)
    assert [(e.t, e.task, e.copy) for e in completes] == [(2, 1, CopyKind.PRIMARY), (2, 2, CopyKind.PRIMARY),
                                                          (2, 3, CopyKind.PRIMARY)]
    assert [(e.t, e.task, e.proc) for e in of_kind(report, E.DEALLOC)] == [(2, 1, 2), (2, 2, 1), (2, 3, 2)]
    m = report.metrics
    assert m.utilization == pytest.approx(6 / (3 * 8)) == 0.25
    assert m.guarantee_ratio == 1.0
    assert m.reclaimed_backup_time == 6
    assert m.overload_savings == 2
    assert "t=2 DEALLOC task=1 proc=2 kind=B" in lines(report)


def test_three_task_run_with_fault(three_tasks):
    report = run(SimConfig(3, three_tasks, faults=[FaultEvent(1, 1)]))
    text = lines(report)
    assert "t=1 CRASH task=- proc=1 kind=-" in text
    assert "t=1 PROMOTE task=1 proc=2 kind=B" in text
    assert "t=4 START task=1 proc=2 kind=B" in text
    assert "t=6 COMPLETE task=1 proc=2 kind=B" in text
    assert report.metrics.misses == 0
    done = {e.task for e in of_kind(report, E.COMPLETE)}
    assert done == {1, 2, 3}
    killed = [r for r in report.reservations if r["fate"] == "killed"]
    assert [(r["task"], r["kind"], r["stopped"]) for r in killed] == [(1, "P", 1)]


def test_quiet_tick_has_no_events():
    sim = Simulation(SimConfig(2, [TaskSpec(1, 5, 5, 9, 1)]))
    assert sim.tick(0) == []


def test_freed_backup_slot_visible_to_same_tick_arrival():
    # Bk1 sits on P2 [2,4); task 2 can only get a backup there once Bk1 is gone
    tasks = [TaskSpec(1, 0, 0, 4, 2), TaskSpec(2, 2, 2, 4, 1)]
    report = run(SimConfig(2, tasks))
    t2 = [e for e in report.trace if e.t == 2]
    kinds = [e.kind for e in t2]
    assert kinds.index(E.DEALLOC) < kinds.index(E.ARRIVE)
    commit = of_kind(report, E.COMMIT)[-1]
    assert commit.task == 2 and commit.detail["backup"] == [2, 3, 4]


def test_crash_promotes_running_primary():
    tasks = [TaskSpec(1, 0, 0, 8, 3)]
    report = run(SimConfig(2, tasks, faults=[FaultEvent(1, 2)]))
    kinds = [(e.t, e.kind) for e in report.trace]
    assert (2, E.PROMOTE) in kinds
    start = [e for e in of_kind(report, E.START) if e.copy is CopyKind.BACKUP]
    assert [(e.t, e.proc) for e in start] == [(5, 2)]


def test_transient_fault_recovers():
    tasks = [TaskSpec(1, 0, 0, 10, 2), TaskSpec(2, 6, 6, 10, 2)]
    fault = FaultEvent(1, 1, FaultClass.TRANSIENT, 3)
    report = run(SimConfig(2, tasks, faults=[fault]))
    assert "t=4 RECOVER task=- proc=1 kind=-" in lines(report)
    commit = of_kind(report, E.COMMIT)[-1]
    assert commit.detail["primary"][0] == 1
    assert report.metrics.misses == 0


def test_lost_backup_is_replaced():
    # Bk1 is hosted on P2; P2 dies before Pri1 finishes
    tasks = [TaskSpec(1, 0, 0, 12, 3)]
    report = run(SimConfig(3, tasks, faults=[FaultEvent(2, 1)]))
    replaced = of_kind(report, E.REPLACE)
    assert [(e.task, e.proc) for e in replaced] == [(1, 3)]
    assert report.metrics.misses == 0


def test_lost_backup_warns_when_no_room():
    tasks = [TaskSpec(1, 0, 0, 6, 3)]
    report = run(SimConfig(2, tasks, faults=[FaultEvent(2, 1)]))
    assert [e.task for e in of_kind(report, E.WARN)] == [1]
    assert report.metrics.misses == 0


def test_permanent_fault_stays_active():
    rng = random.Random(0)
    rates = FaultClassRates(0.3)
    state = FaultState.ACTIVE
    for _ in range(50):
        state = fault_machine_step(state, rates, rng)
        assert state is FaultState.ACTIVE


def test_transient_dies_after_one_tick():
    rng = random.Random(0)
    rates = FaultClassRates(1.0, c=1.0)
    state = fault_machine_step(FaultState.HEALTHY, rates, rng)
    assert state is FaultState.ACTIVE
    assert fault_machine_step(state, rates, rng) is FaultState.GONE


def test_intermittent_alternates():
    rng = random.Random(0)
    rates = FaultClassRates(0.5, b=1.0, d=1.0)
    state = FaultState.ACTIVE
    seen = []
    for _ in range(6):
        state = fault_machine_step(state, rates, rng)
        seen.append(state)
    assert seen == [FaultState.BENIGN, FaultState.ACTIVE] * 3


def test_unclassifiable_rates():
    with pytest.raises(ClassificationError):
        fault_machine_step(FaultState.HEALTHY, FaultClassRates(0.1, b=0.1), random.Random(0))


@pytest.mark.parametrize("kwargs", [
    dict(processors=1, tasks=[TaskSpec(1, 0, 0, 4, 1)]),
    dict(processors=2, tasks=[TaskSpec(1, 0, 0, 4, 1)], horizon=3),
    dict(processors=2, faults=[FaultEvent(3, 0)]),
    dict(processors=2, fault_rates={1: FaultClassRates(2.0)}),
    dict(processors=2, fault_rates={1: FaultClassRates(0.0)}),
    dict(processors=2, tasks=[TaskSpec(1, 0, 0, 4, 1), TaskSpec(1, 0, 0, 5, 1)]),
])
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        SimConfig(**kwargs)


def test_edf_policy_allows_one_processor():
    report = run(SimConfig(1, [TaskSpec(1, 0, 0, 4, 2)], policy=POLICIES["edf"]))
    assert report.metrics.committed == 1


def test_trace_line_format_and_roundtrip():
    e = TraceEvent(2, E.DEALLOC, 1, 2, CopyKind.BACKUP, {"start": 4, "end": 6})
    assert e.to_line() == "t=2 DEALLOC task=1 proc=2 kind=B"
    assert TraceEvent.from_dict(e.to_dict()) == e
    assert TraceEvent(0, E.FAULT, None, 3, None).to_line() == "t=0 FAULT task=- proc=3 kind=-"


def test_empty_trace_metrics():
    assert compute_metrics([], 3, 10) == Metrics()


def test_metrics_reject_malformed_trace():
    bad = [TraceEvent(3, E.ARRIVE, 1), TraceEvent(2, E.ARRIVE, 2)]
    with pytest.raises(ValueError):
        compute_metrics(bad, 2, 5)


def _scenario(seed):
    rng = random.Random(seed)
    P, tasks = random_tasks(seed, n_range=(5, 20), p_range=(2, 5), arrival=(0, 20))
    faults = []
    if rng.random() < 0.5:
        faults.append(FaultEvent(rng.randint(1, P), rng.randint(0, 20)))
    rates = {}
    if rng.random() < 0.3:
        rates = {rng.randint(1, P): FaultClassRates(0.05, c=0.3)}
    policy = rng.choice(list(POLICIES.values()))
    return SimConfig(P, tasks, faults=faults, fault_rates=rates, policy=policy, seed=seed)


@pytest.mark.parametrize("seed", range(60))
def test_run_properties(seed):
    config = _scenario(seed)
    report = run(config)
    m = report.metrics

    assert compute_metrics(report.trace, config.processors, config.horizon) == m
    assert run(config).to_json() == report.to_json()
    assert m.committed == len(of_kind(report, E.COMMIT))
    assert m.misses == len(of_kind(report, E.MISS))
    assert 0 <= m.guarantee_ratio <= 1 and 0 <= m.utilization <= 1
    assert [e.t for e in report.trace] == sorted(e.t for e in report.trace)

    # at most one execution per processor per slot
    busy = Counter()
    for r in report.reservations:
        if r["fate"] in ("running", "completed", "killed"):
            stop = r.get("stopped", r["end"]) if r["fate"] == "killed" else r["end"]
            for t in range(r["start"], stop):
                busy[(r["proc"], t)] += 1
    assert all(n == 1 for n in busy.values())

    committed = {e.task for e in of_kind(report, E.COMMIT)}
    completes = Counter(e.task for e in of_kind(report, E.COMPLETE))
    missed = {e.task for e in of_kind(report, E.MISS)}
    for tid in committed:
        assert completes[tid] == (0 if tid in missed else 1)
    assert set(completes) <= committed


@pytest.mark.parametrize("seed", range(30))
def test_no_fault_deallocation_completeness(seed):
    P, tasks = random_tasks(seed, n_range=(5, 25), p_range=(2, 5), arrival=(0, 20))
    report = run(SimConfig(P, tasks))
    pri_done = {e.task: e.t for e in of_kind(report, E.COMPLETE) if e.copy is CopyKind.PRIMARY}
    deallocs = Counter(e.task for e in of_kind(report, E.DEALLOC))
    committed = {e.task for e in of_kind(report, E.COMMIT)}
    assert set(pri_done) == committed
    assert all(deallocs[t] == 1 for t in committed)
    for e in of_kind(report, E.DEALLOC):
        assert e.t == pri_done[e.task] and e.copy is CopyKind.BACKUP


@pytest.mark.parametrize("seed", range(12))
def test_fork_sweep_matches_rerun(seed):
    rng = random.Random(seed)
    P = rng.randint(2, 3)
    tasks = small_tasks(rng, rng.randint(2, 8), 14)
    overload = rng.random() < 0.7
    config = SimConfig(P, tasks, policy=POLICIES["pb-overload" if overload else "pb"])
    assert fault_sweep(config) == rerun_sweep(config)


def test_fork_sweep_matches_rerun_without_backups():
    tasks = [TaskSpec(1, 0, 0, 4, 2), TaskSpec(2, 1, 1, 6, 2)]
    config = SimConfig(2, tasks, policy=POLICIES["edf"])
    result = fault_sweep(config)
    assert result == rerun_sweep(config)
    assert result.worst_misses >= 1


def test_stochastic_faults_are_seeded():
    P, tasks = random_tasks(3, n_range=(10, 10), p_range=(3, 3))
    rates = {p: FaultClassRates(0.05, b=0.5, d=0.5) for p in range(1, 4)}
    a = run(SimConfig(P, tasks, fault_rates=rates, seed=11))
    b = run(SimConfig(P, tasks, fault_rates=rates, seed=11))
    assert a.to_json() == b.to_json()
    assert of_kind(a, E.FAULT)
