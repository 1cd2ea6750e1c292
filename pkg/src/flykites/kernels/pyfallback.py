"""Pure-Python grid kernels; same contracts as the compiled _gridcore module.

All functions take the raw (height, width) uint8 cell array, cell indices
(cx, cy), and work in cell units. Callers convert to metres.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

SQRT2 = math.sqrt(2.0)

# 8-connected moves: (dx, dy, cost)
_MOVES = [
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, SQRT2),
    (1, -1, SQRT2),
    (-1, 1, SQRT2),
    (-1, -1, SQRT2),
]


def line_cells(ax: int, ay: int, bx: int, by: int) -> list[tuple[int, int]]:
    """Cells on the Bresenham traversal from (ax, ay) to (bx, by), endpoints included."""
    cells = []
    dx = abs(bx - ax)
    dy = abs(by - ay)
    sx = 1 if ax < bx else -1
    sy = 1 if ay < by else -1
    err = dx - dy
    x, y = ax, ay
    while True:
        cells.append((x, y))
        if x == bx and y == by:
            return cells
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy


def los(cells: np.ndarray, ax: int, ay: int, bx: int, by: int, unknown_blocks: bool = True) -> bool:
    """True iff no cell on the Bresenham traversal (endpoints included) blocks the segment."""
    h, w = cells.shape
    for x, y in line_cells(ax, ay, bx, by):
        if not (0 <= x < w and 0 <= y < h):
            return False
        v = cells[y, x]
        if v == OCCUPIED or (unknown_blocks and v == UNKNOWN):
            return False
    return True


def reveal(local: np.ndarray, truth: np.ndarray, px: float, py: float,
           range_m: float, resolution: float, ox: float, oy: float) -> int:
    """Copy every truth cell visible by ray casting within range_m of (px, py) into local.

    A target cell is visible when no Occupied truth cell lies strictly between
    the pose cell and it; an Occupied target ends its own ray but is revealed.
    Returns the number of newly known cells.
    """
    h, w = truth.shape
    cx0 = int((px - ox) // resolution)
    cy0 = int((py - oy) // resolution)
    r_cells = int(range_m / resolution) + 1
    changed = 0
    for cy in range(max(0, cy0 - r_cells), min(h, cy0 + r_cells + 1)):
        for cx in range(max(0, cx0 - r_cells), min(w, cx0 + r_cells + 1)):
            ccx = ox + (cx + 0.5) * resolution
            ccy = oy + (cy + 0.5) * resolution
            if (ccx - px) ** 2 + (ccy - py) ** 2 > range_m * range_m:
                continue
            if local[cy, cx] != UNKNOWN:
                continue
            visible = True
            for x, y in line_cells(cx0, cy0, cx, cy)[:-1]:
                if truth[y, x] == OCCUPIED:
                    visible = False
                    break
            if visible:
                local[cy, cx] = truth[cy, cx]
                changed += 1
    return changed


def visible_mask(truth: np.ndarray, px: float, py: float, range_m: float,
                 resolution: float, ox: float, oy: float) -> np.ndarray:
    """Boolean mask of cells a reveal() call from this pose would make known."""
    local = np.zeros_like(truth)
    reveal(local, truth, px, py, range_m, resolution, ox, oy)
    return local != UNKNOWN


def _diag_ok(cells: np.ndarray, x: int, y: int, nx: int, ny: int) -> bool:
    # forbid cutting a corner between two diagonal Occupied/unknown cells
    if nx == x or ny == y:
        return True
    return cells[y, nx] == FREE and cells[ny, x] == FREE


def astar(cells: np.ndarray, sx: int, sy: int, gx: int, gy: int):
    """Min-cost 8-connected path over Free cells, or None.

    Diagonal cost sqrt(2); corner cutting forbidden; ties broken on
    (f, h, cell index) so equal-cost searches are reproducible.
    """
    h, w = cells.shape
    if cells[sy, sx] != FREE or cells[gy, gx] != FREE:
        return None
    if (sx, sy) == (gx, gy):
        return [(sx, sy)]

    def heur(x, y):
        dx, dy = abs(x - gx), abs(y - gy)
        return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)

    g = {(sx, sy): 0.0}
    parent = {}
    h0 = heur(sx, sy)
    heap = [(h0, h0, sy * w + sx, sx, sy)]
    closed = set()
    while heap:
        f, _, _, x, y = heapq.heappop(heap)
        if (x, y) in closed:
            continue
        if (x, y) == (gx, gy):
            path = [(x, y)]
            while (x, y) in parent:
                x, y = parent[(x, y)]
                path.append((x, y))
            path.reverse()
            return path
        closed.add((x, y))
        gxy = g[(x, y)]
        for dx, dy, cost in _MOVES:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h):
                continue
            if cells[ny, nx] != FREE or not _diag_ok(cells, x, y, nx, ny):
                continue
            ng = gxy + cost
            if ng < g.get((nx, ny), math.inf) - 1e-12:
                g[(nx, ny)] = ng
                parent[(nx, ny)] = (x, y)
                hn = heur(nx, ny)
                heapq.heappush(heap, (ng + hn, hn, ny * w + nx, nx, ny))
    return None


def distance_field(cells: np.ndarray, sx: int, sy: int) -> np.ndarray:
    """Dijkstra cost-to-reach (in cell units) from (sx, sy) over Free cells; inf elsewhere."""
    h, w = cells.shape
    dist = np.full((h, w), np.inf)
    if not (0 <= sx < w and 0 <= sy < h) or cells[sy, sx] != FREE:
        return dist
    dist[sy, sx] = 0.0
    heap = [(0.0, sy * w + sx, sx, sy)]
    while heap:
        d, _, x, y = heapq.heappop(heap)
        if d > dist[y, x] + 1e-12:
            continue
        for dx, dy, cost in _MOVES:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h):
                continue
            if cells[ny, nx] != FREE or not _diag_ok(cells, x, y, nx, ny):
                continue
            nd = d + cost
            if nd < dist[ny, nx] - 1e-12:
                dist[ny, nx] = nd
                heapq.heappush(heap, (nd, ny * w + nx, nx, ny))
    return dist
