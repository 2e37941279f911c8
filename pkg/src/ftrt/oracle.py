"""Independent checks for committed primary/backup schedules.

Nothing here calls into :mod:`ftrt.timeline`; the placement rules are
re-implemented from scratch on plain tuples so that a bug in the timeline
cannot hide itself from its own checker.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Sequence

from .task_model import TaskSpec


class UnknownTask(KeyError):
    pass


class CapExceeded(ValueError):
    pass


class ViolationKind(enum.Enum):
    PRIMARY_OVERLAP = "PrimaryOverlap"
    FORBIDDEN_OVERLOAD = "ForbiddenOverload"
    SPACE_EXCLUSION = "SpaceExclusion"
    TIME_EXCLUSION = "TimeExclusion"
    WINDOW_VIOLATION = "WindowViolation"
    FAULT_VULNERABLE = "FaultVulnerable"


class Slot(NamedTuple):
    task: int
    kind: str  # "P" or "B"
    proc: int
    start: int
    end: int

    def __str__(self) -> str:
        return f"{'Pri' if self.kind == 'P' else 'Bk'}{self.task}@P{self.proc}[{self.start},{self.end})"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    slots: tuple[Slot, ...]
    details: str = ""
    processor: int | None = None
    time: int | None = None
    task: int | None = None

    def __str__(self) -> str:
        return f"{self.kind.value}: {self.details}"


@dataclass(frozen=True)
class Schedule:
    tasks: tuple[TaskSpec, ...]
    reservations: tuple
    processors: int
    backup_scale: Fraction = Fraction(1)


@dataclass(frozen=True)
class SweepResult:
    worst_misses: int = 0
    worst_point: tuple[int, int] | None = None
    points: int = 0
    missed: tuple[int, ...] = field(default=())


def as_slot(res) -> Slot:
    """Accept timeline reservations, report dicts or 5-tuples."""
    if isinstance(res, Slot):
        return res
    if isinstance(res, Mapping):
        return Slot(res["task"], res["kind"], res["proc"], res["start"], res["end"])
    if isinstance(res, tuple):
        return Slot(*res)
    kind = getattr(res.kind, "value", res.kind)
    return Slot(res.task, kind, res.processor, res.interval.start, res.interval.end)


def _overlap(x: Slot, y: Slot) -> bool:
    return x.start < y.end and y.start < x.end


def _copies(tasks: Mapping[int, TaskSpec], slots: Iterable[Slot], P: int) -> dict[int, dict[str, Slot]]:
    copies: dict[int, dict[str, Slot]] = {}
    for s in slots:
        if s.task not in tasks:
            raise UnknownTask(s.task)
        if s.kind not in ("P", "B"):
            raise ValueError(f"bad copy kind {s.kind!r} in {s}")
        if not 1 <= s.proc <= P:
            raise ValueError(f"{s} names a processor outside P1..P{P}")
        if s.kind in copies.setdefault(s.task, {}):
            raise ValueError(f"task {s.task} has two {s.kind} copies")
        copies[s.task][s.kind] = s
    return copies


def static_fault_misses(tasks: Mapping[int, TaskSpec], copies: Mapping[int, Mapping[str, Slot]],
                        P: int, proc: int, t: int) -> list[int]:
    """Tasks that miss when ``proc`` dies for good at ``t`` and nothing is re-planned.

    Primaries finished by ``t`` are safe. Other primaries on ``proc`` are lost
    and their backups must run where reserved; every other backup is
    deallocated when its primary completes and never runs.
    """
    lost = set()
    runs: dict[int, list[Slot]] = {q: [] for q in range(1, P + 1)}
    for tid, cp in copies.items():
        pri, bk = cp.get("P"), cp.get("B")
        if pri is None:
            lost.add(tid)
            continue
        if pri.proc != proc or pri.end <= t:
            runs[pri.proc].append(pri)
            continue
        if bk is None or bk.proc == proc or bk.start < t:
            lost.add(tid)
        else:
            runs[bk.proc].append(bk)
    for q, items in runs.items():
        busy_until = -1
        for s in sorted(items, key=lambda x: (x.start, x.kind, x.task)):
            if s.start < busy_until or s.end > tasks[s.task].d:
                lost.add(s.task)
            else:
                busy_until = s.end
    return sorted(lost)


def verify_schedule(tasks: Sequence[TaskSpec], reservations: Iterable, P: int,
                    backup_scale: Fraction | int = 1, now: int = 0) -> list[Violation]:
    """All rule breaches of a primary/backup schedule; empty means sound.

    Besides the pairwise placement rules, every single permanent processor
    failure at every strike time from ``now`` to the last deadline is played
    out against the static schedule.
    """
    by_id = {t.id: t for t in tasks}
    slots = [as_slot(r) for r in reservations]
    copies = _copies(by_id, slots, P)
    out: list[Violation] = []
    scale = Fraction(backup_scale)

    for s in slots:
        task = by_id[s.task]
        want = task.c if s.kind == "P" else max(1, math.ceil(task.c * scale))
        if s.start < task.r or s.end > task.d or s.end - s.start != want:
            out.append(Violation(ViolationKind.WINDOW_VIOLATION, (s,),
                                 f"{s} outside [{task.r},{task.d}) or length != {want}", task=s.task))

    for tid, cp in copies.items():
        pri, bk = cp.get("P"), cp.get("B")
        if pri is None or bk is None:
            continue
        if pri.proc == bk.proc:
            out.append(Violation(ViolationKind.SPACE_EXCLUSION, (pri, bk),
                                 f"{bk} on the same processor as {pri}", task=tid))
        if bk.start < pri.end:
            out.append(Violation(ViolationKind.TIME_EXCLUSION, (pri, bk),
                                 f"{bk} starts before {pri} ends", task=tid))

    def primary_proc(s: Slot) -> int | None:
        pri = copies[s.task].get("P")
        return None if pri is None else pri.proc

    ordered = sorted(slots, key=lambda s: (s.proc, s.start, s.task, s.kind))
    for i, x in enumerate(ordered):
        for y in ordered[i + 1:]:
            if y.proc != x.proc or y.start >= x.end:
                break
            if not _overlap(x, y):
                continue
            if "P" in (x.kind, y.kind):
                out.append(Violation(ViolationKind.PRIMARY_OVERLAP, (x, y), f"{x} overlaps {y}",
                                     processor=x.proc))
            elif primary_proc(x) is None or primary_proc(x) == primary_proc(y):
                out.append(Violation(ViolationKind.FORBIDDEN_OVERLOAD, (x, y),
                                     f"{x} and {y} overlap with primaries on one processor",
                                     processor=x.proc))

    horizon = max((t.d for t in tasks), default=0)
    live = {tid: cp for tid, cp in copies.items() if "P" not in cp or cp["P"].end > now}
    reported = set()
    for p in range(1, P + 1):
        for t in range(now, horizon):
            for victim in static_fault_misses(by_id, live, P, p, t):
                if (p, victim) in reported:
                    continue
                reported.add((p, victim))
                out.append(Violation(ViolationKind.FAULT_VULNERABLE, tuple(live[victim].values()),
                                     f"task {victim} misses if P{p} fails at t={t}",
                                     processor=p, time=t, task=victim))
    return out


def brute_force_feasible(tasks: Sequence[TaskSpec], P: int, horizon: int,
                         backup_scale: Fraction | int = 1) -> list[Slot] | None:
    """First fault-tolerant schedule in enumeration order, or None.

    Tasks are taken in id order, primary before backup, each copy trying
    processors ascending and then start times ascending. Partial assignments
    that already break a pairwise rule are pruned; every complete assignment
    is confirmed with :func:`verify_schedule` before it is returned.
    """
    if len(tasks) > 6 or P > 3 or horizon > 14:
        raise CapExceeded(f"brute force capped at 6 tasks, 3 processors, horizon 14 "
                          f"(got {len(tasks)}, {P}, {horizon})")
    order = sorted(tasks, key=lambda t: t.id)
    scale = Fraction(backup_scale)
    placed: list[Slot] = []
    home: dict[int, int] = {}

    def clashes(s: Slot) -> bool:
        for o in placed:
            if o.proc != s.proc or not _overlap(o, s):
                continue
            if "P" in (o.kind, s.kind) or home[o.task] == home[s.task]:
                return True
        return False

    def search(i: int) -> list[Slot] | None:
        if i == len(order):
            return list(placed) if not verify_schedule(order, placed, P, scale) else None
        task = order[i]
        end = min(task.d, horizon)
        cb = max(1, math.ceil(task.c * scale))
        for pp in range(1, P + 1):
            for ps in range(task.r, end - task.c + 1):
                pri = Slot(task.id, "P", pp, ps, ps + task.c)
                home[task.id] = pp
                if clashes(pri):
                    continue
                placed.append(pri)
                for bp in range(1, P + 1):
                    if bp == pp:
                        continue
                    for bs in range(pri.end, end - cb + 1):
                        bk = Slot(task.id, "B", bp, bs, bs + cb)
                        if clashes(bk):
                            continue
                        placed.append(bk)
                        found = search(i + 1)
                        if found is not None:
                            return found
                        placed.pop()
                placed.pop()
        home.pop(task.id, None)
        return None

    return search(0)


def fault_sweep(target) -> SweepResult:
    """Worst single permanent fault over every (processor, strike time).

    ``target`` is a :class:`~ftrt.sim_engine.SimConfig` or ``SimReport``
    (the whole run is replayed with the fault injected, so admissions after
    the crash are included) or a :class:`Schedule` (played out statically).
    """
    from .sim_engine import EventKind, SimConfig, SimReport, Simulation
    from .task_model import FaultEvent

    if isinstance(target, Schedule):
        by_id = {t.id: t for t in target.tasks}
        copies = _copies(by_id, (as_slot(r) for r in target.reservations), target.processors)
        horizon = max((t.d for t in target.tasks), default=0)
        best = SweepResult()
        points = 0
        for p in range(1, target.processors + 1):
            for t in range(horizon):
                points += 1
                lost = static_fault_misses(by_id, copies, target.processors, p, t)
                if len(lost) > best.worst_misses:
                    best = SweepResult(len(lost), (p, t), 0, tuple(lost))
        return SweepResult(best.worst_misses, best.worst_point, points, best.missed)

    config = target.config if isinstance(target, SimReport) else target
    if not isinstance(config, SimConfig):
        raise TypeError(f"cannot sweep {type(target).__name__}")
    # Ticks before the strike do not depend on it, so each faulty run is
    # branched off the fault-free run at the strike time.
    base = Simulation(config)
    H = config.horizon
    found: dict[tuple[int, int], tuple[int, ...]] = {}
    for t in range(H):
        for p in range(1, config.processors + 1):
            sim = base.fork()
            sim.inject(FaultEvent(p, t))
            missed = []
            for u in range(t, H + 1):
                missed.extend(e.task for e in sim.tick(u) if e.kind is EventKind.MISS)
            found[(p, t)] = tuple(missed)
        base.tick(t)
    best = SweepResult()
    for point in sorted(found):
        if len(found[point]) > best.worst_misses:
            best = SweepResult(len(found[point]), point, 0, found[point])
    return SweepResult(best.worst_misses, best.worst_point, len(found), best.missed)


def rerun_sweep(config) -> SweepResult:
    """Same as :func:`fault_sweep` on a config, but every point is a full rerun from t=0."""
    from .sim_engine import run
    from .task_model import FaultEvent

    best = SweepResult()
    points = 0
    for p in range(1, config.processors + 1):
        for t in range(config.horizon):
            points += 1
            report = run(config.with_faults(config.faults + (FaultEvent(p, t),)))
            if report.metrics.misses > best.worst_misses:
                missed = tuple(e.task for e in report.trace if e.kind.value == "MISS")
                best = SweepResult(report.metrics.misses, (p, t), 0, missed)
    return SweepResult(best.worst_misses, best.worst_point, points, best.missed)
