"""Command-line front end: ``ftrt run | compare | batch | gantt``.

Exit codes: 0 success, 2 bad scenario/config, 3 internal invariant breach.
Set ``FTRT_LOG`` (DEBUG, INFO, WARNING, ...) for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from . import gantt
from .scheduler import POLICIES, SchedulerPolicy
from .sim_engine import ConfigError, InvariantBreach, Metrics, SimConfig, SimReport, compute_metrics, run
from .task_model import (
    FaultClass,
    FaultClassRates,
    FaultEvent,
    TaskSpec,
    ValidationError,
    WorkloadParams,
    generate_workload,
    parse_task_file,
)

log = logging.getLogger("ftrt")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BREACH = 3

POLICY_ORDER = ("edf", "pb", "pb-overload")


def _range(value, name: str) -> tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(x, int) for x in value):
        return (value[0], value[1])
    raise ConfigError(f"{name}: expected an integer or a [lo, hi] pair, got {value!r}")


def _tasks(raw) -> list[TaskSpec]:
    if isinstance(raw, str):
        return parse_task_file(raw)
    if not isinstance(raw, list):
        raise ConfigError("tasks: expected a list of {id,a,r,d,c} or task-file text")
    tasks = []
    for i, item in enumerate(raw):
        try:
            tasks.append(TaskSpec(int(item["id"]), int(item["a"]), int(item["r"]), int(item["d"]), int(item["c"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"tasks[{i}]: malformed task record ({exc})") from None
    return tasks


def _faults(raw) -> list[FaultEvent]:
    out = []
    for i, item in enumerate(raw or []):
        try:
            cls = FaultClass(item.get("class", "permanent"))
            out.append(FaultEvent(int(item["proc"]), int(item["t"]), cls, item.get("duration")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"faults[{i}]: {exc}") from None
    return out


def _rates(raw, processors: int) -> dict[int, FaultClassRates]:
    if not raw:
        return {}
    try:
        if "all" in raw:
            return {p: FaultClassRates(**raw["all"]) for p in range(1, processors + 1)}
        return {int(p): FaultClassRates(**r) for p, r in raw.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"fault_rates: {exc}") from None


def _policy(raw: Mapping | None) -> SchedulerPolicy:
    raw = raw or {}
    try:
        return SchedulerPolicy(
            overloading=bool(raw.get("overloading", True)),
            backup_scale=Fraction(str(raw.get("backup_scale", 1))),
            fault_tolerance=bool(raw.get("fault_tolerance", True)),
        )
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"policy: {exc}") from None


def config_from_dict(data: Mapping, seed: int | None = None, base: Path | None = None) -> SimConfig:
    """Build a :class:`SimConfig` from a scenario document.

    ``seed`` overrides both the scenario seed and the workload seed.
    """
    try:
        if not isinstance(data, Mapping):
            raise ConfigError("scenario must be a JSON object")
        if "processors" not in data:
            raise ConfigError("processors: missing")
        P = int(data["processors"])
        run_seed = int(data.get("seed", 0)) if seed is None else seed
        if "tasks" in data:
            tasks = _tasks(data["tasks"])
        elif "task_file" in data:
            path = Path(data["task_file"])
            if base is not None and not path.is_absolute():
                path = base / path
            tasks = parse_task_file(path.read_text())
        elif "workload" in data:
            w = dict(data["workload"])
            params = WorkloadParams(
                task_count=int(w.get("count", 0)),
                arrival=_range(w.get("arrival", [0, 20]), "workload.arrival"),
                c=_range(w.get("c", [1, 4]), "workload.c"),
                laxity=_range(w.get("laxity", [2, 10]), "workload.laxity"),
                processors=P,
                seed=int(w.get("seed", run_seed)) if seed is None else seed,
                ready_delay=_range(w.get("ready_delay", [0, 0]), "workload.ready_delay"),
            )
            tasks = generate_workload(params)
        else:
            tasks = []
        return SimConfig(
            processors=P,
            tasks=tasks,
            horizon=data.get("horizon"),
            faults=_faults(data.get("faults")),
            fault_rates=_rates(data.get("fault_rates"), P),
            policy=_policy(data.get("policy")),
            seed=run_seed,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    except OSError as exc:
        raise ConfigError(f"task_file: {exc}") from exc


def load_scenario(path: str | Path, seed: int | None = None) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return config_from_dict(data, seed=seed, base=path.parent)


def with_named_policy(config: SimConfig, name: str) -> SimConfig:
    base = POLICIES[name]
    return config.with_policy(replace(base, backup_scale=config.policy.backup_scale))


def checked_run(config: SimConfig) -> SimReport:
    report = run(config)
    again = compute_metrics(report.trace, config.processors, config.horizon)
    if again != report.metrics:
        raise InvariantBreach(f"metrics not reproducible from trace: {again} != {report.metrics}")
    return report


def write_report(report: SimReport, out: Path) -> Path:
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    trace_path = out.with_suffix(".trace")
    trace_path.write_text(report.trace_text())
    return trace_path


def cmd_run(scenario: str | Path, out: str | Path, policy: str | None = None) -> int:
    try:
        config = load_scenario(scenario)
        if policy:
            config = with_named_policy(config, policy)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = checked_run(config)
    except InvariantBreach as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_BREACH
    trace_path = write_report(report, Path(out))
    m = report.metrics
    print(f"{config.policy.name}: committed {m.committed}/{m.arrived} "
          f"(guarantee ratio {m.guarantee_ratio:.3f}), utilization {m.utilization:.3f}, misses {m.misses}")
    print(f"report: {out}\ntrace:  {trace_path}")
    return EXIT_OK


@dataclass
class ComparisonReport:
    input_hashes: dict[str, str]
    metrics: dict[str, Metrics]

    @property
    def deltas(self) -> dict[str, dict[str, float]]:
        def diff(a: str, b: str) -> dict[str, float]:
            ma, mb = self.metrics[a].to_dict(), self.metrics[b].to_dict()
            return {k: ma[k] - mb[k] for k in ma}
        return {"pb-overload - pb": diff("pb-overload", "pb"), "pb - edf": diff("pb", "edf")}

    def to_dict(self) -> dict:
        return {
            "input_hashes": self.input_hashes,
            "metrics": {k: m.to_dict() for k, m in self.metrics.items()},
            "deltas": self.deltas,
        }

    def table(self) -> str:
        lines = [f"{'policy':<12} {'guarantee':>9} {'util':>7} {'reserved_bk':>11} {'misses':>6}"]
        for name in POLICY_ORDER:
            m = self.metrics[name]
            lines.append(f"{name:<12} {m.guarantee_ratio:>9.3f} {m.utilization:>7.3f} "
                         f"{m.reserved_backup_time:>11} {m.misses:>6}")
        return "\n".join(lines)


def compare(config: SimConfig) -> ComparisonReport:
    hashes, metrics = {}, {}
    for name in POLICY_ORDER:
        cfg = with_named_policy(config, name)
        report = checked_run(cfg)
        hashes[name] = cfg.input_hash()
        metrics[name] = report.metrics
    if len(set(hashes.values())) != 1:
        raise InvariantBreach(f"policy runs saw different inputs: {hashes}")
    return ComparisonReport(hashes, metrics)


def cmd_compare(scenario: str | Path, out: str | Path | None = None, seed: int | None = None) -> ComparisonReport:
    result = compare(load_scenario(scenario, seed=seed))
    if out is not None:
        Path(out).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    return result


def batch(template: Mapping, runs: int, seed: int) -> dict:
    """Per-policy mean/min/max over ``runs`` scenarios seeded ``seed, seed+1, ...``."""
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    per_policy: dict[str, dict[str, list[float]]] = {
        name: {"guarantee_ratio": [], "utilization": [], "reserved_backup_time": [], "misses": []}
        for name in POLICY_ORDER
    }
    for i in range(runs):
        result = compare(config_from_dict(template, seed=seed + i))
        for name, m in result.metrics.items():
            for key, values in per_policy[name].items():
                values.append(getattr(m, key))
    summary: dict = {"runs": runs, "seed": seed, "policies": {}}
    for name, stats in per_policy.items():
        summary["policies"][name] = {
            key: {"mean": statistics.fmean(v), "min": min(v), "max": max(v)} for key, v in stats.items()
        }
    return summary


def cmd_batch(scenario: str | Path, runs: int, seed: int, out: str | Path | None = None) -> dict:
    path = Path(scenario)
    try:
        template = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    summary = batch(template, runs, seed)
    if out is not None:
        Path(out).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_gantt(report: str | Path, svg: str | Path | None = None) -> str:
    data = gantt.load_report(report)
    if svg is not None:
        Path(svg).write_text(gantt.render_svg(data))
    return gantt.render_text(data)


def _batch_table(summary: dict) -> str:
    lines = [f"{'policy':<12} {'guarantee mean/min/max':>26} {'util mean/min/max':>23}"]
    for name in POLICY_ORDER:
        g = summary["policies"][name]["guarantee_ratio"]
        u = summary["policies"][name]["utilization"]
        lines.append(f"{name:<12} {g['mean']:>8.3f}/{g['min']:.3f}/{g['max']:.3f}"
                     f" {u['mean']:>9.3f}/{u['min']:.3f}/{u['max']:.3f}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ftrt", description="Fault-tolerant EDF primary/backup simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="report JSON path; the trace goes next to it as .trace")
    p.add_argument("--policy", choices=POLICY_ORDER)

    p = sub.add_parser("compare", help="run edf, pb and pb-overload on identical inputs")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("batch", help="seeded sweep of compare runs")
    p.add_argument("--scenario", required=True, help="scenario template, normally with a workload block")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("gantt", help="render a report as a Gantt chart")
    p.add_argument("report")
    p.add_argument("--svg", nargs="?", const="", default=None, help="also write SVG (default: next to the report)")
    p.add_argument("--out", help="write the text chart here instead of stdout")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("FTRT_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.scenario, args.out, args.policy)
        if args.command == "compare":
            result = cmd_compare(args.scenario, args.out, args.seed)
            print(result.table())
        elif args.command == "batch":
            print(_batch_table(cmd_batch(args.scenario, args.runs, args.seed, args.out)))
        elif args.command == "gantt":
            svg = args.svg
            if svg == "":
                svg = str(Path(args.report).with_suffix(".svg"))
            text = cmd_gantt(args.report, svg)
            if args.out:
                Path(args.out).write_text(text)
            else:
                print(text, end="")
    except (ConfigError, gantt.ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantBreach as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_BREACH
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
