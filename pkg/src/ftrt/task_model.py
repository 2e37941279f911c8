"""Task and fault domain types, validation, fault classification and workload generation."""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable


class ValidationError(ValueError):
    """Raised when a task or parameter set breaks one of its invariants.

    ``problems`` lists every failed inequality, not just the first one.
    """

    def __init__(self, subject: str, problems: list[str]):
        self.subject = subject
        self.problems = problems
        super().__init__(f"{subject}: " + "; ".join(problems))


class ClassificationError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class TaskSpec:
    """An aperiodic task: arrival ``a``, ready time ``r``, absolute deadline ``d``, WCET ``c``."""

    id: int
    a: int
    r: int
    d: int
    c: int

    @property
    def laxity(self) -> int:
        return self.d - self.r - self.c

    def to_dict(self) -> dict:
        return {"id": self.id, "a": self.a, "r": self.r, "d": self.d, "c": self.c}


class CopyKind(enum.Enum):
    PRIMARY = "P"
    BACKUP = "B"

    def __str__(self) -> str:
        return self.value


class FaultClass(enum.Enum):
    PERMANENT = "permanent"
    TRANSIENT = "transient"
    INTERMITTENT = "intermittent"


@dataclass(frozen=True)
class FaultClassRates:
    """Fault state-switching rates.

    a: occurrence, b: active -> benign, c: active -> gone, d: benign -> active.
    """

    a: float
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    def __post_init__(self):
        bad = [f"{name} < 0" for name in "abcd" if getattr(self, name) < 0]
        if bad:
            raise ValidationError("FaultClassRates", bad)


@dataclass(frozen=True)
class FaultEvent:
    processor: int
    t: int
    fault_class: FaultClass = FaultClass.PERMANENT
    duration: int | None = None

    def __post_init__(self):
        problems = []
        if self.t < 0:
            problems.append("t >= 0 violated")
        if self.fault_class is FaultClass.PERMANENT:
            if self.duration is not None:
                problems.append("permanent fault takes no duration")
        elif self.duration is None or self.duration < 1:
            problems.append("duration >= 1 violated")
        if problems:
            raise ValidationError(f"fault on P{self.processor} at t={self.t}", problems)

    def to_dict(self) -> dict:
        return {
            "proc": self.processor,
            "t": self.t,
            "class": self.fault_class.value,
            "duration": self.duration,
        }


@dataclass(frozen=True)
class WorkloadParams:
    """Uniform integer ranges (inclusive) for random aperiodic task sets."""

    task_count: int
    arrival: tuple[int, int] = (0, 20)
    c: tuple[int, int] = (1, 4)
    laxity: tuple[int, int] = (2, 10)
    processors: int = 3
    seed: int = 0
    ready_delay: tuple[int, int] = (0, 0)

    def validate(self) -> "WorkloadParams":
        problems = []
        if self.task_count < 0:
            problems.append("task_count >= 0 violated")
        if self.processors < 1:
            problems.append("processors >= 1 violated")
        for name, lo_min in (("arrival", 0), ("c", 1), ("laxity", 0), ("ready_delay", 0)):
            lo, hi = getattr(self, name)
            if lo > hi:
                problems.append(f"{name} range empty ({lo} > {hi})")
            if lo < lo_min:
                problems.append(f"{name} lower bound must be >= {lo_min}")
        if problems:
            raise ValidationError("WorkloadParams", problems)
        return self


def validate_task(spec: TaskSpec) -> TaskSpec:
    problems = []
    if spec.c < 1:
        problems.append(f"c >= 1 violated (c={spec.c})")
    if spec.a < 0:
        problems.append(f"a >= 0 violated (a={spec.a})")
    if spec.r < spec.a:
        problems.append(f"r >= a violated (r={spec.r}, a={spec.a})")
    if spec.d < spec.r + spec.c:
        problems.append(f"d >= r + c violated (d={spec.d}, r+c={spec.r + spec.c})")
    if problems:
        raise ValidationError(f"task {spec.id}", problems)
    return spec


def validate_task_set(tasks: Iterable[TaskSpec]) -> list[TaskSpec]:
    seen: set[int] = set()
    out = []
    for task in tasks:
        validate_task(task)
        if task.id in seen:
            raise ValidationError(f"task {task.id}", ["id must be unique"])
        seen.add(task.id)
        out.append(task)
    return out


def classify_fault(rates: FaultClassRates) -> FaultClass:
    """Map a rate tuple onto a fault class using only its sign pattern."""
    a, b, c, d = (x > 0 for x in (rates.a, rates.b, rates.c, rates.d))
    if a and not b and not c and not d:
        return FaultClass.PERMANENT
    if a and not b and c and not d:
        return FaultClass.TRANSIENT
    if a and b and not c and d:
        return FaultClass.INTERMITTENT
    raise ClassificationError(f"unclassifiable fault rates {rates}")


def backup_length(c: int, scale: Fraction | int = 1) -> int:
    """Backup WCET for a task of WCET ``c``; rounded up, never below one slot."""
    return max(1, math.ceil(Fraction(c) * Fraction(scale)))


def generate_workload(params: WorkloadParams) -> list[TaskSpec]:
    params.validate()
    rng = random.Random(params.seed)
    drafts = []
    for _ in range(params.task_count):
        a = rng.randint(*params.arrival)
        r = a + rng.randint(*params.ready_delay)
        c = rng.randint(*params.c)
        d = r + c + rng.randint(*params.laxity)
        drafts.append((a, r, d, c))
    # stable sort keeps draw order among equal arrivals
    drafts.sort(key=lambda x: x[0])
    return [validate_task(TaskSpec(i, *x)) for i, x in enumerate(drafts, start=1)]


def parse_task_file(text: str) -> list[TaskSpec]:
    """Parse ``id a r d c`` records; ``#`` starts a comment."""
    tasks = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ValidationError(f"line {lineno}", [f"expected 5 fields 'id a r d c', got {len(fields)}"])
        try:
            values = [int(x) for x in fields]
        except ValueError:
            raise ValidationError(f"line {lineno}", [f"non-integer field in {line!r}"]) from None
        tasks.append(TaskSpec(*values))
    return validate_task_set(tasks)
