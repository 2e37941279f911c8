"""Deterministic discrete-time runtime for the primary/backup scheduler.

Within one tick ``t`` the order is fixed:

1. reservations ending at ``t`` complete; a successful primary deallocates its backup
2. fault transitions (FAULT, CRASH, RECOVER)
3. crash handling: evict work on the dead processor, promote backups of its
   primaries, re-place backups it was hosting
4. arrivals are admitted (ARRIVE, COMMIT/REJECT)
5. reservations beginning at ``t`` start on live processors
6. committed tasks whose deadline is ``t`` and that have not completed MISS

Completions run before arrivals so that a slot freed by deallocation is
visible to tasks arriving in the same tick.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .scheduler import AdmissionDecision, SchedulerPolicy, admit, edf_order, place_backup
from .task_model import (
    ClassificationError,
    CopyKind,
    FaultClass,
    FaultClassRates,
    FaultEvent,
    TaskSpec,
    ValidationError,
    classify_fault,
    validate_task_set,
)
from .timeline import (
    Interval,
    Reservation,
    SystemTimeline,
    check_invariants,
    fail_processor,
    promote,
    recover_processor,
    release,
)

log = logging.getLogger(__name__)

PRIMARY = CopyKind.PRIMARY
BACKUP = CopyKind.BACKUP


class ConfigError(ValueError):
    pass


class InvariantBreach(RuntimeError):
    pass


class EventKind(str, enum.Enum):
    ARRIVE = "ARRIVE"
    COMMIT = "COMMIT"
    REJECT = "REJECT"
    START = "START"
    COMPLETE = "COMPLETE"
    DEALLOC = "DEALLOC"
    FAULT = "FAULT"
    CRASH = "CRASH"
    RECOVER = "RECOVER"
    PROMOTE = "PROMOTE"
    REPLACE = "REPLACE"
    WARN = "WARN"
    MISS = "MISS"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class TraceEvent:
    t: int
    kind: EventKind
    task: int | None = None
    proc: int | None = None
    copy: CopyKind | None = None
    detail: dict = field(default_factory=dict)

    def to_line(self) -> str:
        def dash(x):
            return "-" if x is None else str(x)
        return f"t={self.t} {self.kind} task={dash(self.task)} proc={dash(self.proc)} kind={dash(self.copy)}"

    def to_dict(self) -> dict:
        out = {
            "t": self.t,
            "kind": self.kind.value,
            "task": self.task,
            "proc": self.proc,
            "copy": None if self.copy is None else self.copy.value,
        }
        out.update(self.detail)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "TraceEvent":
        data = dict(data)
        copy = data.pop("copy")
        return cls(
            t=data.pop("t"),
            kind=EventKind(data.pop("kind")),
            task=data.pop("task"),
            proc=data.pop("proc"),
            copy=None if copy is None else CopyKind(copy),
            detail=data,
        )


@dataclass(frozen=True)
class SimConfig:
    processors: int
    tasks: tuple[TaskSpec, ...] = ()
    horizon: int | None = None
    faults: tuple[FaultEvent, ...] = ()
    fault_rates: Mapping[int, FaultClassRates] = field(default_factory=dict)
    policy: SchedulerPolicy = SchedulerPolicy()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "faults", tuple(self.faults))
        object.__setattr__(self, "fault_rates", dict(sorted(self.fault_rates.items())))
        if self.horizon is None:
            object.__setattr__(self, "horizon", max((t.d for t in self.tasks), default=0))
        self.validate()

    def validate(self) -> None:
        P = self.processors
        if P < 1:
            raise ConfigError("processors must be >= 1")
        if self.policy.fault_tolerance and P < 2:
            raise ConfigError("fault tolerance needs at least 2 processors")
        try:
            validate_task_set(self.tasks)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        latest = max((t.d for t in self.tasks), default=0)
        if self.horizon < latest:
            raise ConfigError(f"horizon {self.horizon} is before the latest deadline {latest}")
        for f in self.faults:
            if not 1 <= f.processor <= P:
                raise ConfigError(f"fault targets unknown processor P{f.processor}")
        for p, rates in self.fault_rates.items():
            if not 1 <= p <= P:
                raise ConfigError(f"fault rates given for unknown processor P{p}")
            if any(x > 1 for x in (rates.a, rates.b, rates.c, rates.d)):
                raise ConfigError(f"P{p}: per-tick fault rates must be <= 1")
            try:
                classify_fault(rates)
            except ClassificationError as exc:
                raise ConfigError(f"P{p}: {exc}") from exc

    def with_policy(self, policy: SchedulerPolicy) -> "SimConfig":
        return replace(self, policy=policy)

    def with_faults(self, faults: Iterable[FaultEvent]) -> "SimConfig":
        return replace(self, faults=tuple(faults))

    def inputs_dict(self) -> dict:
        return {
            "tasks": [t.to_dict() for t in self.tasks],
            "faults": [f.to_dict() for f in self.faults],
            "fault_rates": {str(p): vars(r) for p, r in self.fault_rates.items()},
            "seed": self.seed,
        }

    def input_hash(self) -> str:
        blob = json.dumps(self.inputs_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self) -> dict:
        out = {"processors": self.processors, "horizon": self.horizon, "policy": self.policy.to_dict()}
        out.update(self.inputs_dict())
        return out


@dataclass(frozen=True)
class Metrics:
    arrived: int = 0
    committed: int = 0
    rejected: int = 0
    guarantee_ratio: float = 0.0
    busy_slots: int = 0
    utilization: float = 0.0
    overload_savings: int = 0
    reserved_backup_time: int = 0
    reclaimed_backup_time: int = 0
    promotions: int = 0
    misses: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class SimReport:
    config: SimConfig
    trace: list[TraceEvent]
    metrics: Metrics
    decisions: list[AdmissionDecision]
    reservations: list[dict]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "input_hash": self.config.input_hash(),
            "metrics": self.metrics.to_dict(),
            "decisions": [d.to_dict() for d in self.decisions],
            "reservations": self.reservations,
            "trace": [e.to_dict() for e in self.trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def trace_text(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.trace)


class FaultState(enum.Enum):
    HEALTHY = "healthy"
    ACTIVE = "active"
    BENIGN = "benign"
    GONE = "gone"


def fault_machine_step(state: FaultState, rates: FaultClassRates, rng: random.Random) -> FaultState:
    """Advance one processor's fault by one tick; rates act as per-tick probabilities."""
    kind = classify_fault(rates)
    if state in (FaultState.HEALTHY, FaultState.GONE):
        return FaultState.ACTIVE if rng.random() < rates.a else state
    if state is FaultState.ACTIVE:
        if kind is FaultClass.PERMANENT:
            return state
        if kind is FaultClass.TRANSIENT:
            return FaultState.GONE if rng.random() < rates.c else state
        return FaultState.BENIGN if rng.random() < rates.b else state
    # benign: only intermittent faults get here
    return FaultState.ACTIVE if rng.random() < rates.d else state


def compute_metrics(trace: Sequence[TraceEvent], processors: int, horizon: int) -> Metrics:
    counts: dict[EventKind, int] = defaultdict(int)
    running: dict[int, int] = {}
    busy = savings = reserved = reclaimed = 0
    last_t = -1
    for e in trace:
        if e.t < last_t:
            raise ValueError(f"trace goes back in time at {e.to_line()}")
        last_t = e.t
        counts[e.kind] += 1
        if e.kind is EventKind.START:
            if e.proc in running:
                raise ValueError(f"two executions overlap on P{e.proc} at t={e.t}")
            running[e.proc] = e.t
        elif e.kind is EventKind.COMPLETE:
            busy += e.t - running.pop(e.proc)
        elif e.kind is EventKind.CRASH and e.proc in running:
            busy += e.t - running.pop(e.proc)
        elif e.kind is EventKind.COMMIT and e.detail.get("backup"):
            _, start, end = e.detail["backup"]
            savings += e.detail["shared"]
            reserved += end - start - e.detail["shared"]
        elif e.kind is EventKind.REPLACE:
            savings += e.detail["shared"]
            reserved += e.detail["end"] - e.detail["start"] - e.detail["shared"]
        elif e.kind is EventKind.DEALLOC:
            reclaimed += e.detail["end"] - e.detail["start"]
    busy += sum(horizon - s for s in running.values())
    arrived = counts[EventKind.ARRIVE]
    committed = counts[EventKind.COMMIT]
    return Metrics(
        arrived=arrived,
        committed=committed,
        rejected=counts[EventKind.REJECT],
        guarantee_ratio=committed / arrived if arrived else 0.0,
        busy_slots=busy,
        utilization=busy / (processors * horizon) if horizon else 0.0,
        overload_savings=savings,
        reserved_backup_time=reserved,
        reclaimed_backup_time=reclaimed,
        promotions=counts[EventKind.PROMOTE],
        misses=counts[EventKind.MISS],
    )


def _span(res: Reservation) -> list[int]:
    return [res.processor, res.interval.start, res.interval.end]


class Simulation:
    """Mutable run state; call :meth:`tick` for t = 0..horizon in order."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.policy = config.policy
        self.system = SystemTimeline.empty(config.processors)
        self.tasks = {t.id: t for t in config.tasks}
        self.arrivals: dict[int, list[TaskSpec]] = defaultdict(list)
        for task in sorted(config.tasks, key=lambda x: x.id):
            self.arrivals[task.a].append(task)
        self.starts: dict[int, list[tuple[int, CopyKind]]] = defaultdict(list)
        self.deadlines: dict[int, list[int]] = defaultdict(list)
        self.script: dict[int, list[FaultEvent]] = defaultdict(list)
        for f in config.faults:
            self.script[f.t].append(f)
        self.scripted_until: dict[int, int | None] = {}
        self.machines = {p: FaultState.HEALTHY for p in config.fault_rates}
        self.rng = random.Random(f"{config.seed}:faults")
        self.running: dict[int, Reservation] = {}
        self.done: dict[int, CopyKind] = {}
        self.decisions: dict[int, AdmissionDecision] = {}
        self.ledger: list[dict] = []
        self.current: dict[tuple[int, CopyKind], dict] = {}

    # -- bookkeeping ---------------------------------------------------
    def _track(self, res: Reservation, **extra) -> None:
        entry = {"task": res.task, "kind": res.kind.value, "proc": res.processor,
                 "start": res.interval.start, "end": res.interval.end, "fate": "reserved"}
        entry.update(extra)
        self.ledger.append(entry)
        self.current[res.key] = entry
        self.starts[res.interval.start].append(res.key)

    def _fate(self, key: tuple[int, CopyKind], fate: str, **extra) -> None:
        entry = self.current.get(key)
        if entry is not None:
            entry["fate"] = fate
            entry.update(extra)

    # -- tick phases ---------------------------------------------------
    def _complete(self, t: int, out: list[TraceEvent]) -> None:
        for p in sorted(self.running):
            res = self.running[p]
            if res.interval.end != t:
                continue
            del self.running[p]
            self.done[res.task] = res.kind
            self._fate(res.key, "completed")
            out.append(TraceEvent(t, EventKind.COMPLETE, res.task, p, res.kind,
                                  {"start": res.interval.start, "end": res.interval.end}))
            if res.kind is PRIMARY:
                bk = self.system.get(res.task, BACKUP)
                if bk is not None and not bk.promoted:
                    self.system = release(self.system, res.task, BACKUP)
                    self._fate(bk.key, "deallocated", stopped=t)
                    out.append(TraceEvent(t, EventKind.DEALLOC, res.task, bk.processor, BACKUP,
                                          {"start": bk.interval.start, "end": bk.interval.end}))

    def _faults(self, t: int, out: list[TraceEvent]) -> list[int]:
        touched = set(self.machines)
        for p, until in list(self.scripted_until.items()):
            if until is not None and until <= t:
                del self.scripted_until[p]
                touched.add(p)
        for f in self.script.get(t, ()):
            touched.add(f.processor)
            out.append(TraceEvent(t, EventKind.FAULT, None, f.processor, None,
                                  {"class": f.fault_class.value}))
            until = None if f.duration is None else t + f.duration
            if f.processor in self.scripted_until:
                prev = self.scripted_until[f.processor]
                until = None if prev is None or until is None else max(prev, until)
            self.scripted_until[f.processor] = until
        for p, rates in self.config.fault_rates.items():
            old = self.machines[p]
            new = self.machines[p] = fault_machine_step(old, rates, self.rng)
            if new is FaultState.ACTIVE and old in (FaultState.HEALTHY, FaultState.GONE):
                out.append(TraceEvent(t, EventKind.FAULT, None, p, None,
                                      {"class": classify_fault(rates).value}))
        crashed = []
        for p in sorted(touched):
            pt = self.system.proc(p)
            down = p in self.scripted_until or self.machines.get(p) is FaultState.ACTIVE
            if down and not pt.failed:
                crashed.append(p)
                out.append(TraceEvent(t, EventKind.CRASH, None, p))
            elif not down and pt.failed:
                self.system = recover_processor(self.system, p)
                out.append(TraceEvent(t, EventKind.RECOVER, None, p))
        return crashed

    def _crash(self, t: int, p: int, out: list[TraceEvent]) -> None:
        victim = self.running.pop(p, None)
        self.system, evicted = fail_processor(self.system, p, t)
        for res in evicted:
            killed = victim is not None and res.key == victim.key
            self._fate(res.key, "killed" if killed else "evicted", stopped=t)
        lost_backups = []
        for res in evicted:
            if res.task in self.done:
                continue
            if res.kind is PRIMARY:
                bk = self.system.get(res.task, BACKUP)
                if bk is not None:
                    self.system = promote(self.system, res.task)
                    self._fate(bk.key, "reserved", promoted=True)
                    out.append(TraceEvent(t, EventKind.PROMOTE, res.task, bk.processor, BACKUP,
                                          {"start": bk.interval.start, "end": bk.interval.end}))
            elif not res.promoted:
                lost_backups.append(res)
        for res in lost_backups:
            pri = self.system.get(res.task, PRIMARY)
            if pri is None:
                continue
            d = self.tasks[res.task].d
            placed = None
            if d > pri.interval.end:
                placed = place_backup(self.system, res.task, pri.processor, Interval(pri.interval.end, d),
                                      res.interval.length, self.policy.overloading, overload_first=False)
            if placed is None:
                log.info("t=%d: backup of task %d lost with P%d and could not be re-placed", t, res.task, p)
                out.append(TraceEvent(t, EventKind.WARN, res.task, p, BACKUP, {"reason": "backup not re-placed"}))
                continue
            self.system, new, shared = placed
            self._track(new, replaced=True, overloaded=shared > 0)
            out.append(TraceEvent(t, EventKind.REPLACE, res.task, new.processor, BACKUP,
                                  {"start": new.interval.start, "end": new.interval.end, "shared": shared}))

    def _arrive(self, t: int, out: list[TraceEvent]) -> None:
        batch = self.arrivals.get(t)
        if not batch:
            return
        for task in batch:
            out.append(TraceEvent(t, EventKind.ARRIVE, task.id))
        for task in edf_order(batch):
            self.system, dec = admit(self.system, task, self.policy)
            self.decisions[task.id] = dec
            if not dec.committed:
                out.append(TraceEvent(t, EventKind.REJECT, task.id, detail={"reason": dec.reason}))
                continue
            detail = {"primary": _span(dec.primary), "backup": _span(dec.backup) if dec.backup else None,
                      "shared": dec.shared}
            out.append(TraceEvent(t, EventKind.COMMIT, task.id, detail=detail))
            self._track(dec.primary)
            if dec.backup is not None:
                self._track(dec.backup, overloaded=dec.overloaded)
            self.deadlines[task.d].append(task.id)

    def _start(self, t: int, out: list[TraceEvent]) -> None:
        keys = self.starts.pop(t, ())
        candidates = []
        for key in keys:
            res = self.system.get(*key)
            if res is None or res.interval.start != t:
                continue
            if res.kind is BACKUP and not res.promoted:
                continue
            candidates.append(res)
        for res in sorted(candidates, key=lambda r: (r.processor, r.kind.value != "P", r.task)):
            if res.processor in self.running:
                log.info("t=%d: P%d busy, %s cannot start", t, res.processor, res)
                self._fate(res.key, "blocked")
                continue
            self.running[res.processor] = res
            self._fate(res.key, "running")
            out.append(TraceEvent(t, EventKind.START, res.task, res.processor, res.kind,
                                  {"start": res.interval.start, "end": res.interval.end}))

    def _misses(self, t: int, out: list[TraceEvent]) -> None:
        for tid in sorted(self.deadlines.pop(t, ())):
            if tid not in self.done:
                out.append(TraceEvent(t, EventKind.MISS, tid))

    def tick(self, t: int) -> list[TraceEvent]:
        out: list[TraceEvent] = []
        self._complete(t, out)
        for p in self._faults(t, out):
            self._crash(t, p, out)
        self._arrive(t, out)
        self._start(t, out)
        self._misses(t, out)
        return out

    def fork(self) -> "Simulation":
        """Independent copy of the run state, for branching a fault sweep off a shared prefix."""
        twin = object.__new__(Simulation)
        twin.__dict__.update(self.__dict__)
        twin.starts = defaultdict(list, {k: list(v) for k, v in self.starts.items()})
        twin.deadlines = defaultdict(list, {k: list(v) for k, v in self.deadlines.items()})
        twin.script = defaultdict(list, {k: list(v) for k, v in self.script.items()})
        twin.scripted_until = dict(self.scripted_until)
        twin.machines = dict(self.machines)
        twin.rng = random.Random()
        twin.rng.setstate(self.rng.getstate())
        twin.running = dict(self.running)
        twin.done = dict(self.done)
        twin.decisions = dict(self.decisions)
        copies = {id(e): dict(e) for e in self.ledger}
        twin.ledger = [copies[id(e)] for e in self.ledger]
        twin.current = {k: copies[id(e)] for k, e in self.current.items()}
        return twin

    def inject(self, fault: FaultEvent) -> None:
        """Add a scripted fault that has not struck yet."""
        self.config = replace(self.config, faults=self.config.faults + (fault,))
        self.script[fault.t].append(fault)

    def report(self, trace: list[TraceEvent]) -> SimReport:
        cfg = self.config
        decisions = [self.decisions[t.id] for t in cfg.tasks if t.id in self.decisions]
        return SimReport(cfg, trace, compute_metrics(trace, cfg.processors, cfg.horizon),
                         decisions, self.ledger)


def run(config: SimConfig) -> SimReport:
    sim = Simulation(config)
    trace: list[TraceEvent] = []
    for t in range(config.horizon + 1):
        trace.extend(sim.tick(t))
    problems = check_invariants(sim.system)
    if problems:
        raise InvariantBreach("; ".join(problems))
    return sim.report(trace)
