"""Text and SVG Gantt views of a run report."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

LEGEND = (
    "P<n> primary   B<n> reserved backup   E<n> executed (promoted) backup\n"
    "~<n> deallocated backup   x<n> lost to a crash   !<n> could not start\n"
    "*    overloaded slot (two or more backups share it)"
)


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class GanttData:
    processors: int
    horizon: int
    reservations: list


def load_report(path: str | Path) -> GanttData:
    try:
        data = json.loads(Path(path).read_text())
        return GanttData(data["config"]["processors"], data["config"]["horizon"], data["reservations"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ReportError(f"{path}: not a run report ({exc})") from exc


def _label(res: Mapping, t: int) -> str:
    tid = res["task"]
    fate = res["fate"]
    stopped = res.get("stopped")
    if res["kind"] == "P":
        if fate in ("killed", "evicted") and t >= stopped:
            return f"x{tid}"
        return f"!{tid}" if fate == "blocked" else f"P{tid}"
    if fate == "deallocated":
        return f"~{tid}"
    if fate == "blocked":
        return f"!{tid}"
    if fate in ("killed", "evicted"):
        return f"E{tid}" if fate == "killed" and t < stopped else f"x{tid}"
    if res.get("promoted") and fate in ("running", "completed"):
        return f"E{tid}"
    return f"B{tid}"


def grid(data: GanttData) -> list[list[str]]:
    cells: list[list[list[str]]] = [[[] for _ in range(data.horizon)] for _ in range(data.processors)]
    for res in sorted(data.reservations, key=lambda r: (r["start"], r["task"], r["kind"])):
        for t in range(res["start"], min(res["end"], data.horizon)):
            cells[res["proc"] - 1][t].append(_label(res, t))
    rows = []
    for row in cells:
        out = []
        for labels in row:
            backups = [x for x in labels if x[0] in "B~E"]
            text = "/".join(labels)
            out.append("*" + text if len(backups) >= 2 else text)
        rows.append(out)
    return rows


def render_text(data: GanttData) -> str:
    rows = grid(data)
    width = max([len(str(max(data.horizon - 1, 0)))] + [len(c) for r in rows for c in r])
    head = "    " + " ".join(str(t).rjust(width) for t in range(data.horizon))
    lines = [head.rstrip()]
    for p, row in enumerate(rows, start=1):
        lines.append(f"P{p}".ljust(4) + " ".join(c.ljust(width) for c in row).rstrip())
    return "\n".join(lines) + "\n\n" + LEGEND + "\n"


_FILL = {"P": "#4c78a8", "B": "#f58518"}


def render_svg(data: GanttData, cell: int = 28, row: int = 34) -> str:
    width = 40 + cell * max(data.horizon, 1)
    height = 24 + row * data.processors
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="monospace" font-size="11">']
    for t in range(data.horizon + 1):
        x = 40 + t * cell
        parts.append(f'<line x1="{x}" y1="16" x2="{x}" y2="{height}" stroke="#ddd"/>')
        if t < data.horizon:
            parts.append(f'<text x="{x + 2}" y="12">{t}</text>')
    for p in range(1, data.processors + 1):
        parts.append(f'<text x="4" y="{24 + (p - 1) * row + row // 2}">P{p}</text>')
    for res in data.reservations:
        x = 40 + res["start"] * cell
        y = 20 + (res["proc"] - 1) * row
        w = (res["end"] - res["start"]) * cell
        fate = res["fate"]
        opacity = 0.35 if fate in ("deallocated", "evicted") or (res["kind"] == "B" and not res.get("promoted")) else 0.9
        fill = "#999" if fate in ("killed", "evicted", "blocked") else _FILL[res["kind"]]
        parts.append(f'<rect x="{x}" y="{y}" width="{w}" height="{row - 8}" fill="{fill}" '
                     f'fill-opacity="{opacity}" stroke="#333"/>')
        tag = ("Pri" if res["kind"] == "P" else "Bk") + str(res["task"])
        parts.append(f'<text x="{x + 3}" y="{y + row // 2}">{tag}</text>')
        if fate == "deallocated":
            parts.append(f'<line x1="{x}" y1="{y + (row - 8) // 2}" x2="{x + w}" y2="{y + (row - 8) // 2}" '
                         f'stroke="#c00" stroke-width="2"/>')
    for p, cells in enumerate(grid(data), start=1):
        for t, text in enumerate(cells):
            if text.startswith("*"):
                parts.append(f'<rect x="{40 + t * cell}" y="{20 + (p - 1) * row}" width="{cell}" '
                             f'height="{row - 8}" fill="none" stroke="#d62728" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
