"""Map-level operations: sensing, frontier extraction, path and LOS queries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import ContractViolation, ScenarioError, UnreachableError
from .grid import FREE, OCCUPIED, UNKNOWN, OccupancyGrid

_EIGHT = np.ones((3, 3), dtype=np.uint8)


@dataclass
class FrontierCluster:
    cells: list[tuple[int, int]]  # (cx, cy) grid indices
    centroid: tuple[float, float]  # world point
    size: int


@dataclass
class GridPath:
    waypoints: list[tuple[float, float]]
    length: float

    @property
    def end(self):
        return self.waypoints[-1]


def load_ground_truth(source, resolution: float = 0.1) -> OccupancyGrid:
    """Load a scenario map; ground truth must be fully known and have free space."""
    grid = OccupancyGrid.load(source, resolution)
    if not grid.fully_known():
        raise ScenarioError(f"{source}: ground-truth map contains Unknown cells")
    if grid.free_count() == 0:
        raise ScenarioError(f"{source}: map has zero free cells")
    return grid


def reveal(local: OccupancyGrid, truth: OccupancyGrid, pose, sensor_range: float) -> int:
    """Ray-cast sensing: copy visible truth cells within sensor_range into local.

    Mutates `local` in place; returns the number of newly known cells.
    """
    if not local.same_frame(truth):
        raise ContractViolation("local and truth grids use different frames")
    if not truth.is_free_at(pose):
        raise ContractViolation(f"sensing pose {pose} is not in a free truth cell")
    return kernels.reveal(
        local.cells, truth.cells, pose[0], pose[1],
        sensor_range, truth.resolution, truth.origin[0], truth.origin[1],
    )


def frontier_mask(grid: OccupancyGrid) -> np.ndarray:
    """Boolean mask of frontier cells: Free and 4-adjacent to Unknown."""
    c = grid.cells
    unknown = c == UNKNOWN
    near_unknown = np.zeros_like(unknown)
    near_unknown[1:, :] |= unknown[:-1, :]
    near_unknown[:-1, :] |= unknown[1:, :]
    near_unknown[:, 1:] |= unknown[:, :-1]
    near_unknown[:, :-1] |= unknown[:, 1:]
    return (c == FREE) & near_unknown


def find_frontiers(grid: OccupancyGrid, min_frontier_size: int = 3) -> list[FrontierCluster]:
    """Maximal 8-connected clusters of frontier cells with size >= min_frontier_size.

    Clusters are ordered by their smallest cell index so output is reproducible.
    """
    mask = frontier_mask(grid)
    labels, count = ndimage.label(mask, structure=_EIGHT)
    clusters = []
    for lbl in range(1, count + 1):
        ys, xs = np.nonzero(labels == lbl)
        if ys.size < min_frontier_size:
            continue
        cells = sorted(zip(xs.tolist(), ys.tolist()), key=lambda c: (c[1], c[0]))
        cx = grid.origin[0] + (float(xs.mean()) + 0.5) * grid.resolution
        cy = grid.origin[1] + (float(ys.mean()) + 0.5) * grid.resolution
        clusters.append(FrontierCluster(cells, (cx, cy), len(cells)))
    clusters.sort(key=lambda f: (f.cells[0][1], f.cells[0][0]))
    return clusters


def shortest_path(grid: OccupancyGrid, src, dst) -> GridPath:
    """Minimum-cost 8-connected path over Free cells between two world points."""
    sx, sy = grid.world_to_cell(src)
    gx, gy = grid.world_to_cell(dst)
    if not grid.in_bounds(sx, sy) or grid.at(sx, sy) != FREE:
        raise ContractViolation(f"path start {src} not in a free cell")
    if not grid.in_bounds(gx, gy) or grid.at(gx, gy) != FREE:
        raise ContractViolation(f"path goal {dst} not in a free cell")
    cells = kernels.astar(grid.cells, sx, sy, gx, gy)
    if cells is None:
        raise UnreachableError(f"no free-cell path from {src} to {dst}")
    waypoints = [grid.cell_center(cx, cy) for cx, cy in cells]
    return GridPath(waypoints, _polyline_length(waypoints))


def path_length(grid: OccupancyGrid, src, dst) -> float:
    """Length of the shortest path in metres (see shortest_path)."""
    return shortest_path(grid, src, dst).length


def distance_field(grid: OccupancyGrid, src) -> np.ndarray:
    """Geodesic distance in metres from `src` to every cell; inf where unreachable."""
    sx, sy = grid.world_to_cell(src)
    return kernels.distance_field(grid.cells, sx, sy) * grid.resolution


def field_at(field: np.ndarray, grid: OccupancyGrid, p) -> float:
    cx, cy = grid.world_to_cell(p)
    if not grid.in_bounds(cx, cy):
        return math.inf
    return float(field[cy, cx])


def nav_time(path_or_length, v_max: float) -> float:
    """Traversal time of a path at constant speed; rotation is ignored."""
    if v_max <= 0:
        raise ContractViolation(f"v_max must be positive, got {v_max}")
    length = path_or_length.length if isinstance(path_or_length, GridPath) else float(path_or_length)
    return length / v_max


def line_of_sight(grid: OccupancyGrid, a, b) -> bool:
    """True iff the Bresenham traversal a->b crosses no blocking cell.

    Unknown cells block conservatively: never plan communication through
    unseen space.  The pair is rasterized in one canonical order so the
    answer cannot depend on which endpoint asks.
    """
    ax, ay = grid.world_to_cell(a)
    bx, by = grid.world_to_cell(b)
    if (bx, by) < (ax, ay):
        ax, ay, bx, by = bx, by, ax, ay
    return bool(kernels.los(grid.cells, ax, ay, bx, by, True))


def _polyline_length(points) -> float:
    total = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        total += math.hypot(x1 - x0, y1 - y0)
    return total
