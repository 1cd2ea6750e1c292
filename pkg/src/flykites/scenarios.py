"""Scenario files: a ground-truth map plus operator start and assistance tasks."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources

from .config import parse_kv_file
from .errors import ScenarioError
from .grid import FREE, OccupancyGrid
from .worldmap import load_ground_truth


@dataclass
class TaskSpec:
    id: str
    pos: tuple[float, float]
    priority: int = 1
    duration: float = 30.0


@dataclass
class Scenario:
    name: str
    truth: OccupancyGrid
    operator_start: tuple[float, float]
    tasks: list = field(default_factory=list)
    robots_hint: int = 0
    time_cap_hint: float = 0.0
    path: str = ""


def bundled_dir() -> str:
    return str(resources.files("flykites").joinpath("scenarios"))


def list_bundled() -> list:
    d = bundled_dir()
    return sorted(f[:-4] for f in os.listdir(d) if f.endswith(".scn"))


def load_scenario(name_or_path: str) -> Scenario:
    """Load a scenario by bundled name or by .scn file path."""
    if os.path.isfile(name_or_path):
        path = name_or_path
    else:
        path = os.path.join(bundled_dir(), name_or_path + ".scn")
        if not os.path.isfile(path):
            raise ScenarioError(
                f"no scenario {name_or_path!r}; bundled: {', '.join(list_bundled())}"
            )
    pairs = parse_kv_file(path)
    base = os.path.dirname(path)
    if "map" not in pairs or "operator" not in pairs:
        raise ScenarioError(f"{path}: scenario needs 'map' and 'operator' keys")
    truth = load_ground_truth(os.path.join(base, pairs["map"]))
    op = _parse_point(pairs["operator"], path)
    if not truth.is_free_at(op):
        raise ScenarioError(f"{path}: operator start {op} is not in free space")
    tasks = []
    for key, value in pairs.items():
        if not key.startswith("task."):
            continue
        tid = key[len("task."):]
        parts = [v.strip() for v in value.split(",")]
        if len(parts) != 4:
            raise ScenarioError(f"{path}: task {tid}: expected 'x, y, priority, duration'")
        try:
            pos = (float(parts[0]), float(parts[1]))
            prio, dur = int(parts[2]), float(parts[3])
        except ValueError as e:
            raise ScenarioError(f"{path}: task {tid}: {e}") from None
        if not truth.is_free_at(pos):
            raise ScenarioError(f"{path}: task {tid} at {pos} is not in free space")
        tasks.append(TaskSpec(tid, pos, prio, dur))
    tasks.sort(key=lambda t: t.id)
    name = pairs.get("name", os.path.splitext(os.path.basename(path))[0])
    return Scenario(
        name=name,
        truth=truth,
        operator_start=op,
        tasks=tasks,
        robots_hint=int(pairs.get("robots", 0)),
        time_cap_hint=float(pairs.get("time_cap", 0.0)),
        path=path,
    )


def spawn_cells(scn: Scenario, n: int) -> list:
    """Free cells near the operator start, in breadth-first order."""
    grid = scn.truth
    start = grid.world_to_cell(scn.operator_start)
    seen = {start}
    queue = [start]
    out = []
    qi = 0
    while qi < len(queue) and len(out) < n:
        cx, cy = queue[qi]
        qi += 1
        if (cx, cy) != start and grid.at(cx, cy) == FREE:
            out.append((cx, cy))
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = cx + dx, cy + dy
            if grid.in_bounds(nx, ny) and grid.at(nx, ny) == FREE and (nx, ny) not in seen:
                seen.add((nx, ny))
                queue.append((nx, ny))
    if len(out) < n:
        raise ScenarioError(f"map too small to place {n} robots near the operator")
    return out


def _parse_point(text: str, path: str):
    parts = [v.strip() for v in text.split(",")]
    if len(parts) != 2:
        raise ScenarioError(f"{path}: expected 'x, y', got {text!r}")
    try:
        return (float(parts[0]), float(parts[1]))
    except ValueError as e:
        raise ScenarioError(f"{path}: bad point: {e}") from None
