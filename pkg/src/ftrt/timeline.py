"""Per-processor reservation timelines.

A :class:`SystemTimeline` is an immutable value. ``reserve``/``release`` and
friends return a new timeline and never touch the one they were given, so a
rejected admission leaves the caller's timeline exactly as it was.

Placement rules enforced here:

* a primary overlaps nothing on its processor;
* a backup never shares a processor with its own primary and never starts
  before that primary's reserved end;
* backups may overlap each other (overloading) only when their primaries sit
  on different processors;
* a promoted backup must run, so nothing new may overlap it.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple

from .task_model import CopyKind

PRIMARY = CopyKind.PRIMARY
BACKUP = CopyKind.BACKUP


class ReservationError(Exception):
    def __init__(self, message: str, reservation: "Reservation | None" = None,
                 others: tuple["Reservation", ...] = ()):
        super().__init__(message)
        self.reservation = reservation
        self.others = others


class PrimaryOverlap(ReservationError):
    pass


class ForbiddenOverload(ReservationError):
    pass


class SpaceExclusion(ReservationError):
    pass


class TimeExclusion(ReservationError):
    pass


class FailedProcessor(ReservationError):
    pass


class MissingPrimary(ReservationError):
    pass


class DuplicateReservation(ReservationError):
    pass


class NotFound(ReservationError):
    pass


@dataclass(frozen=True, order=True)
class Interval:
    """Half-open slot range ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"empty interval [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    @property
    def length(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "Interval") -> bool:
        return self.start < other.end and other.start < self.end

    def overlap(self, other: "Interval") -> int:
        return max(0, min(self.end, other.end) - max(self.start, other.start))

    def __str__(self) -> str:
        return f"[{self.start},{self.end})"


@dataclass(frozen=True)
class Reservation:
    task: int
    kind: CopyKind
    processor: int
    interval: Interval
    promoted: bool = False

    @property
    def start(self) -> int:
        return self.interval.start

    @property
    def end(self) -> int:
        return self.interval.end

    @property
    def key(self) -> tuple[int, CopyKind]:
        return (self.task, self.kind)

    def sort_key(self):
        return (self.interval.start, self.interval.end, self.task, self.kind.value)

    def __str__(self) -> str:
        tag = "Pri" if self.kind is PRIMARY else "Bk"
        return f"{tag}{self.task}@P{self.processor}{self.interval}"


class Placement(NamedTuple):
    processor: int
    interval: Interval


@dataclass(frozen=True)
class ProcessorTimeline:
    processor: int
    reservations: tuple[Reservation, ...] = ()
    failed_at: int | None = None
    recover_at: int | None = None

    @property
    def failed(self) -> bool:
        return self.failed_at is not None

    def overlapping(self, interval: Interval) -> Iterator[Reservation]:
        for res in self.reservations:
            if res.interval.start >= interval.end:
                break
            if res.interval.end > interval.start:
                yield res


@dataclass(frozen=True)
class SystemTimeline:
    processors: tuple[ProcessorTimeline, ...]
    index: dict = field(default_factory=dict, compare=True, repr=False)

    @classmethod
    def empty(cls, count: int) -> "SystemTimeline":
        if count < 1:
            raise ValueError("need at least one processor")
        return cls(tuple(ProcessorTimeline(p) for p in range(1, count + 1)), {})

    @property
    def count(self) -> int:
        return len(self.processors)

    def proc(self, p: int) -> ProcessorTimeline:
        if not 1 <= p <= len(self.processors):
            raise ValueError(f"no processor P{p} (have P1..P{len(self.processors)})")
        return self.processors[p - 1]

    def get(self, task: int, kind: CopyKind) -> Reservation | None:
        return self.index.get((task, kind))

    def reservations(self) -> list[Reservation]:
        return [res for pt in self.processors for res in pt.reservations]

    def live_processors(self) -> Iterator[ProcessorTimeline]:
        return (pt for pt in self.processors if not pt.failed)

    def _with_proc(self, pt: ProcessorTimeline, index: dict) -> "SystemTimeline":
        procs = list(self.processors)
        procs[pt.processor - 1] = pt
        return SystemTimeline(tuple(procs), index)


def _primary_proc_of(system: SystemTimeline, backup: Reservation) -> int | None:
    pri = system.index.get((backup.task, PRIMARY))
    return None if pri is None else pri.processor


def _conflict(system: SystemTimeline, res: Reservation) -> ReservationError | None:
    pt = system.proc(res.processor)
    if pt.failed:
        return FailedProcessor(f"P{res.processor} is failed", res)
    if res.key in system.index:
        return DuplicateReservation(f"{res.kind.name.lower()} of task {res.task} already reserved", res)
    own_primary = None
    if res.kind is BACKUP and not res.promoted:
        pri = system.index.get((res.task, PRIMARY))
        if pri is None:
            return MissingPrimary(f"backup of task {res.task} has no primary", res)
        if pri.processor == res.processor:
            return SpaceExclusion(f"{res} shares P{res.processor} with its primary", res, (pri,))
        if res.interval.start < pri.interval.end:
            return TimeExclusion(f"{res} starts before its primary ends at {pri.interval.end}", res, (pri,))
        own_primary = pri.processor
    for other in pt.overlapping(res.interval):
        if res.kind is PRIMARY or other.kind is PRIMARY or res.promoted or other.promoted:
            return PrimaryOverlap(f"{res} overlaps {other}", res, (other,))
        if _primary_proc_of(system, other) in (own_primary, None):
            return ForbiddenOverload(
                f"{res} overlaps {other}; both primaries on P{own_primary}", res, (other,))
    return None


def reserve(system: SystemTimeline, res: Reservation) -> SystemTimeline:
    err = _conflict(system, res)
    if err is not None:
        raise err
    pt = system.proc(res.processor)
    items = list(pt.reservations)
    keys = [r.sort_key() for r in items]
    items.insert(bisect.bisect(keys, res.sort_key()), res)
    index = dict(system.index)
    index[res.key] = res
    return system._with_proc(replace(pt, reservations=tuple(items)), index)


def can_reserve(system: SystemTimeline, res: Reservation) -> bool:
    return _conflict(system, res) is None


def release(system: SystemTimeline, task: int, kind: CopyKind) -> SystemTimeline:
    res = system.index.get((task, kind))
    if res is None:
        raise NotFound(f"no {kind.name.lower()} reservation for task {task}")
    pt = system.proc(res.processor)
    index = dict(system.index)
    del index[res.key]
    items = tuple(r for r in pt.reservations if r is not res)
    return system._with_proc(replace(pt, reservations=items), index)


def promote(system: SystemTimeline, task: int) -> SystemTimeline:
    """Drop the task's primary (if still reserved) and pin its backup as mandatory."""
    bk = system.index.get((task, BACKUP))
    if bk is None:
        raise NotFound(f"no backup reservation for task {task}")
    if (task, PRIMARY) in system.index:
        system = release(system, task, PRIMARY)
    system = release(system, task, BACKUP)
    pinned = replace(bk, promoted=True)
    pt = system.proc(pinned.processor)
    items = list(pt.reservations)
    keys = [r.sort_key() for r in items]
    items.insert(bisect.bisect(keys, pinned.sort_key()), pinned)
    index = dict(system.index)
    index[pinned.key] = pinned
    return system._with_proc(replace(pt, reservations=tuple(items)), index)


def fail_processor(system: SystemTimeline, p: int, t: int,
                   recover_at: int | None = None) -> tuple[SystemTimeline, list[Reservation]]:
    """Mark ``p`` failed at ``t`` and evict every reservation on it not finished by ``t``.

    Returns the new timeline and the evicted reservations in slot order.
    """
    pt = system.proc(p)
    kept = tuple(r for r in pt.reservations if r.interval.end <= t)
    evicted = [r for r in pt.reservations if r.interval.end > t]
    index = dict(system.index)
    for r in evicted:
        del index[r.key]
    return system._with_proc(replace(pt, reservations=kept, failed_at=t, recover_at=recover_at), index), evicted


def recover_processor(system: SystemTimeline, p: int) -> SystemTimeline:
    pt = system.proc(p)
    return system._with_proc(replace(pt, failed_at=None, recover_at=None), system.index)


def _earliest_gap(pt: ProcessorTimeline, lo: int, hi: int, c: int) -> int | None:
    s = lo
    for res in pt.reservations:
        if res.interval.start >= s + c:
            break
        if res.interval.end > s:
            s = res.interval.end
    return s if s + c <= hi else None


def _latest_gap(pt: ProcessorTimeline, lo: int, hi: int, c: int) -> int | None:
    e = hi
    for res in sorted(pt.reservations, key=lambda r: r.interval.end, reverse=True):
        if res.interval.end <= e - c:
            break
        if res.interval.start < e:
            e = min(e, res.interval.start)
    return e - c if e - c >= lo else None


def find_primary_slot(system: SystemTimeline, r: int, d: int, c: int) -> Placement | None:
    """Earliest start in ``[r, d)`` on any live processor; lowest index breaks ties."""
    best = None
    for pt in system.live_processors():
        s = _earliest_gap(pt, r, d, c)
        if s is not None and (best is None or s < best[0]):
            best = (s, pt.processor)
    if best is None:
        return None
    return Placement(best[1], Interval(best[0], best[0] + c))


def find_latest_backup_slot(system: SystemTimeline, window: Interval, c: int,
                            excluded_proc: int) -> Placement | None:
    """Latest fresh (non-overlapping) slot inside ``window`` off ``excluded_proc``."""
    best = None
    for pt in system.live_processors():
        if pt.processor == excluded_proc:
            continue
        s = _latest_gap(pt, window.start, window.end, c)
        if s is not None and (best is None or s > best[0]):
            best = (s, pt.processor)
    if best is None:
        return None
    return Placement(best[1], Interval(best[0], best[0] + c))


def backup_overlap(system: SystemTimeline, p: int, interval: Interval) -> int:
    """Slot-units of ``interval`` already covered by backups on ``p``."""
    covered = [0] * interval.length
    for res in system.proc(p).overlapping(interval):
        if res.kind is BACKUP:
            for t in range(max(res.interval.start, interval.start), min(res.interval.end, interval.end)):
                covered[t - interval.start] = 1
    return sum(covered)


def find_overload_slot(system: SystemTimeline, primary_proc: int, window: Interval,
                       c: int) -> Placement | None:
    """Best slot that shares time with existing backups, or None.

    Candidates overlap at least one backup, no primary and no promoted backup,
    and no backup whose primary is on ``primary_proc``. Ranking: most slot-units
    shared with existing backups, then latest start, then the lowest task id
    among the overlapped backups, then lowest processor index.
    """
    best_key = None
    best = None
    last = window.end - c
    for pt in system.live_processors():
        q = pt.processor
        if q == primary_proc:
            continue
        starts: set[int] = set()
        for res in pt.reservations:
            if res.kind is BACKUP and not res.promoted:
                lo = max(window.start, res.interval.start - c + 1)
                hi = min(last, res.interval.end - 1)
                starts.update(range(lo, hi + 1))
        for s in starts:
            iv = Interval(s, s + c)
            ok = True
            touched = []
            for other in pt.overlapping(iv):
                if other.kind is PRIMARY or other.promoted or _primary_proc_of(system, other) in (primary_proc, None):
                    ok = False
                    break
                touched.append(other)
            if not ok or not touched:
                continue
            shared = backup_overlap(system, q, iv)
            key = (-shared, -s, min(o.task for o in touched), q)
            if best_key is None or key < best_key:
                best_key, best = key, Placement(q, iv)
    return best


def check_invariants(system: SystemTimeline) -> list[str]:
    """Every broken timeline invariant, as human-readable strings."""
    problems = []
    for pt in system.processors:
        items = pt.reservations
        for i, x in enumerate(items):
            if system.index.get(x.key) is not x:
                problems.append(f"{x} missing from index")
            if x.processor != pt.processor:
                problems.append(f"{x} filed under P{pt.processor}")
            for y in items[i + 1:]:
                if not x.interval.overlaps(y.interval):
                    continue
                if PRIMARY in (x.kind, y.kind):
                    problems.append(f"primary overlap {x} / {y}")
                elif not (x.promoted or y.promoted):
                    px, py = _primary_proc_of(system, x), _primary_proc_of(system, y)
                    if px is None or px == py:
                        problems.append(f"forbidden overload {x} / {y}")
        for x in items:
            if x.kind is BACKUP and not x.promoted:
                pri = system.index.get((x.task, PRIMARY))
                if pri is None:
                    problems.append(f"{x} has no primary")
                elif pri.processor == x.processor:
                    problems.append(f"space exclusion {x}")
                elif x.interval.start < pri.interval.end:
                    problems.append(f"time exclusion {x}")
    if len(system.index) != sum(len(pt.reservations) for pt in system.processors):
        problems.append("index size mismatch")
    return problems
