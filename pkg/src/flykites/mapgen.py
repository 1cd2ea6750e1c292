"""Random room and tunnel map generators for desk-scale scenarios."""

from __future__ import annotations

import random

import numpy as np
from scipy import ndimage

from .grid import FREE, OCCUPIED, OccupancyGrid


def generate_rooms(width_m: float, height_m: float, resolution: float, seed: int,
                   rooms: int = 8) -> OccupancyGrid:
    """Rectangular rooms chained by L-shaped corridors; border stays solid."""
    rng = random.Random(seed)
    w = int(round(width_m / resolution))
    h = int(round(height_m / resolution))
    cells = np.full((h, w), OCCUPIED, dtype=np.uint8)
    centers = []
    for _ in range(rooms):
        rw = rng.randrange(max(3, w // 10), max(4, w // 4))
        rh = rng.randrange(max(3, h // 10), max(4, h // 4))
        x0 = rng.randrange(1, max(2, w - rw - 1))
        y0 = rng.randrange(1, max(2, h - rh - 1))
        cells[y0:y0 + rh, x0:x0 + rw] = FREE
        centers.append((x0 + rw // 2, y0 + rh // 2))
    for (ax, ay), (bx, by) in zip(centers, centers[1:]):
        _carve_l_corridor(cells, ax, ay, bx, by, half=1)
    cells[0, :] = cells[-1, :] = OCCUPIED
    cells[:, 0] = cells[:, -1] = OCCUPIED
    grid = OccupancyGrid(w, h, resolution, (0.0, 0.0), cells)
    keep_largest_free_region(grid)
    return grid


def generate_tunnels(width_m: float, height_m: float, resolution: float, seed: int,
                     walkers: int = 4, steps: int = 600) -> OccupancyGrid:
    """Cave-like map carved by biased random walkers with a variable brush."""
    rng = random.Random(seed)
    w = int(round(width_m / resolution))
    h = int(round(height_m / resolution))
    cells = np.full((h, w), OCCUPIED, dtype=np.uint8)
    for _ in range(walkers):
        x = rng.randrange(w // 6, w - w // 6)
        y = rng.randrange(h // 6, h - h // 6)
        for _ in range(steps):
            r = rng.choice((1, 1, 2, 2, 3))
            cells[max(1, y - r):min(h - 1, y + r + 1),
                  max(1, x - r):min(w - 1, x + r + 1)] = FREE
            dx, dy = rng.choice(((1, 0), (-1, 0), (0, 1), (0, -1)))
            x = min(max(x + dx * rng.randrange(1, 3), 2), w - 3)
            y = min(max(y + dy * rng.randrange(1, 3), 2), h - 3)
    cells[0, :] = cells[-1, :] = OCCUPIED
    cells[:, 0] = cells[:, -1] = OCCUPIED
    grid = OccupancyGrid(w, h, resolution, (0.0, 0.0), cells)
    keep_largest_free_region(grid)
    return grid


def keep_largest_free_region(grid: OccupancyGrid) -> None:
    """Fill every free region except the largest; guarantees one connected map."""
    free = grid.cells == FREE
    labels, count = ndimage.label(free, structure=np.ones((3, 3), dtype=np.uint8))
    if count <= 1:
        return
    sizes = ndimage.sum_labels(free, labels, index=range(1, count + 1))
    keep = int(np.argmax(sizes)) + 1
    grid.cells[(labels != 0) & (labels != keep)] = OCCUPIED


def _carve_l_corridor(cells, ax, ay, bx, by, half=1):
    h, w = cells.shape

    def carve(x, y):
        cells[max(1, y - half):min(h - 1, y + half + 1),
              max(1, x - half):min(w - 1, x + half + 1)] = FREE

    step = 1 if bx >= ax else -1
    for x in range(ax, bx + step, step):
        carve(x, ay)
    step = 1 if by >= ay else -1
    for y in range(ay, by + step, step):
        carve(bx, y)
