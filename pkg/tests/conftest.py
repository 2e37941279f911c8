import random

import pytest

from ftrt.sim_engine import EventKind, Simulation
from ftrt.task_model import TaskSpec, WorkloadParams, generate_workload

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []

THREE_TASKS = (
    TaskSpec(1, 0, 0, 6, 2),
    TaskSpec(2, 0, 0, 6, 2),
    TaskSpec(3, 0, 0, 8, 2),
)

# Tasks 1-4 arrive together; 5 and 6 arrive once tasks 1 and 2 are done.
SIX_TASKS = (
    TaskSpec(1, 0, 0, 7, 3),
    TaskSpec(2, 0, 0, 7, 3),
    TaskSpec(3, 0, 0, 11, 4),
    TaskSpec(4, 0, 1, 13, 3),
    TaskSpec(5, 3, 3, 19, 4),
    TaskSpec(6, 6, 6, 22, 5),
)


def random_tasks(seed: int, n_range=(10, 50), p_range=(2, 8), arrival=(0, 40), c=(1, 6), laxity=(0, 10)):
    rng = random.Random(seed)
    P = rng.randint(*p_range)
    n = rng.randint(*n_range)
    return P, generate_workload(WorkloadParams(n, arrival, c, laxity, P, seed))


def small_tasks(rng: random.Random, n: int, horizon: int) -> list[TaskSpec]:
    tasks = []
    for i in range(1, n + 1):
        c = rng.randint(1, 3)
        a = rng.randint(0, horizon - c)
        d = rng.randint(a + c, horizon)
        tasks.append(TaskSpec(i, a, a, d, c))
    return tasks


@pytest.fixture
def three_tasks():
    return list(THREE_TASKS)


@pytest.fixture
def six_tasks():
    return list(SIX_TASKS)


def committed_states(config):
    """Live timeline right after every tick that committed something."""
    sim = Simulation(config)
    for t in range(config.horizon + 1):
        events = sim.tick(t)
        if any(e.kind is EventKind.COMMIT for e in events):
            yield t, sim.system.reservations()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
