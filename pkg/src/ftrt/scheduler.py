"""Primary/backup admission control with backup overloading.

Each arriving task gets its primary at the earliest feasible start. The backup
goes after the primary's reserved end, first trying to share time with an
existing backup (overloading), then falling back to the latest fresh slot
before the deadline. A task is committed only when both copies fit; otherwise
the timeline is returned untouched.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .task_model import CopyKind, TaskSpec, backup_length
from .timeline import (
    Interval,
    Reservation,
    SystemTimeline,
    backup_overlap,
    find_latest_backup_slot,
    find_overload_slot,
    find_primary_slot,
    reserve,
)

NO_PRIMARY = "no primary slot"
NO_BACKUP = "no backup slot"


@dataclass(frozen=True)
class SchedulerPolicy:
    overloading: bool = True
    backup_scale: Fraction = Fraction(1)
    fault_tolerance: bool = True

    def __post_init__(self):
        scale = Fraction(self.backup_scale)
        if not 0 < scale <= 1:
            raise ValueError(f"backup_scale must be in (0, 1], got {self.backup_scale}")
        object.__setattr__(self, "backup_scale", scale)

    @property
    def name(self) -> str:
        if not self.fault_tolerance:
            return "edf"
        return "pb-overload" if self.overloading else "pb"

    def to_dict(self) -> dict:
        return {
            "overloading": self.overloading,
            "backup_scale": str(self.backup_scale),
            "fault_tolerance": self.fault_tolerance,
        }


POLICIES = {
    "edf": SchedulerPolicy(overloading=False, fault_tolerance=False),
    "pb": SchedulerPolicy(overloading=False),
    "pb-overload": SchedulerPolicy(overloading=True),
}


@dataclass(frozen=True)
class AdmissionDecision:
    task: int
    primary: Reservation | None = None
    backup: Reservation | None = None
    overloaded: bool = False
    shared: int = 0
    reason: str | None = None

    @property
    def committed(self) -> bool:
        return self.reason is None

    def to_dict(self) -> dict:
        out: dict = {"task": self.task, "outcome": "committed" if self.committed else "rejected"}
        if self.committed:
            out["primary"] = _res_dict(self.primary)
            out["backup"] = _res_dict(self.backup) if self.backup else None
            out["overloaded"] = self.overloaded
        else:
            out["reason"] = self.reason
        return out


def _res_dict(res: Reservation) -> dict:
    return {"proc": res.processor, "start": res.interval.start, "end": res.interval.end}


def place_backup(system: SystemTimeline, task: int, primary_proc: int, window: Interval,
                 c: int, overloading: bool, overload_first: bool = True):
    """Find and reserve a backup; returns ``(system, reservation, shared)`` or None."""
    if window.length < c:
        return None
    finders = []
    if overloading:
        finders.append(lambda: find_overload_slot(system, primary_proc, window, c))
    finders.append(lambda: find_latest_backup_slot(system, window, c, primary_proc))
    if not overload_first:
        finders.reverse()
    for find in finders:
        spot = find()
        if spot is not None:
            res = Reservation(task, CopyKind.BACKUP, spot.processor, spot.interval)
            shared = backup_overlap(system, spot.processor, spot.interval)
            return reserve(system, res), res, shared
    return None


def admit(system: SystemTimeline, task: TaskSpec,
          policy: SchedulerPolicy = SchedulerPolicy()) -> tuple[SystemTimeline, AdmissionDecision]:
    spot = find_primary_slot(system, task.r, task.d, task.c)
    if spot is None:
        return system, AdmissionDecision(task.id, reason=NO_PRIMARY)
    primary = Reservation(task.id, CopyKind.PRIMARY, spot.processor, spot.interval)
    tentative = reserve(system, primary)
    if not policy.fault_tolerance:
        return tentative, AdmissionDecision(task.id, primary=primary)

    c_b = backup_length(task.c, policy.backup_scale)
    if task.d - primary.interval.end < c_b:
        return system, AdmissionDecision(task.id, reason=NO_BACKUP)
    window = Interval(primary.interval.end, task.d)
    placed = place_backup(tentative, task.id, primary.processor, window, c_b, policy.overloading)
    if placed is None:
        return system, AdmissionDecision(task.id, reason=NO_BACKUP)
    committed, backup, shared = placed
    return committed, AdmissionDecision(task.id, primary, backup, overloaded=shared > 0, shared=shared)


def edf_order(tasks: Iterable[TaskSpec]) -> list[TaskSpec]:
    return sorted(tasks, key=lambda t: (t.d, t.id))


def admit_batch(system: SystemTimeline, tasks: Sequence[TaskSpec],
                policy: SchedulerPolicy = SchedulerPolicy()) -> tuple[SystemTimeline, list[AdmissionDecision]]:
    """Admit a batch arriving together, earliest deadline first.

    Decisions come back in input order.
    """
    decisions = {}
    for task in edf_order(tasks):
        system, decisions[task.id] = admit(system, task, policy)
    return system, [decisions[t.id] for t in tasks]


def reject_reason_report(decisions: Iterable[AdmissionDecision]) -> dict[str, int]:
    return dict(Counter(d.reason for d in decisions if not d.committed))
