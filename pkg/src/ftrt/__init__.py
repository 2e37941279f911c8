"""Fault-tolerant EDF scheduling on multiprocessors with primary/backup overloading."""

from .scheduler import POLICIES, AdmissionDecision, SchedulerPolicy, admit, admit_batch
from .sim_engine import SimConfig, SimReport, TraceEvent, run
from .task_model import CopyKind, FaultClass, FaultClassRates, FaultEvent, TaskSpec, WorkloadParams

__version__ = "0.1.0"

__all__ = [
    "POLICIES",
    "AdmissionDecision",
    "CopyKind",
    "FaultClass",
    "FaultClassRates",
    "FaultEvent",
    "SchedulerPolicy",
    "SimConfig",
    "SimReport",
    "TaskSpec",
    "TraceEvent",
    "WorkloadParams",
    "admit",
    "admit_batch",
    "run",
]
