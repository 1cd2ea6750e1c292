import random

import numpy as np
import pytest

from flykites.grid import FREE, OCCUPIED, UNKNOWN, OccupancyGrid


def random_map(rng: random.Random, w=40, h=40, p_occ=0.2, p_unknown=0.25, resolution=0.5):
    """Random ternary map for property tests (not necessarily connected)."""
    cells = np.empty((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            u = rng.random()
            if u < p_unknown:
                cells[y, x] = UNKNOWN
            elif u < p_unknown + p_occ:
                cells[y, x] = OCCUPIED
            else:
                cells[y, x] = FREE
    return OccupancyGrid(w, h, resolution, (0.0, 0.0), cells)


def open_map(w, h, resolution=0.5, border=True):
    """Fully known map, free interior, occupied one-cell border."""
    cells = np.full((h, w), FREE, dtype=np.uint8)
    if border:
        cells[0, :] = OCCUPIED
        cells[-1, :] = OCCUPIED
        cells[:, 0] = OCCUPIED
        cells[:, -1] = OCCUPIED
    return OccupancyGrid(w, h, resolution, (0.0, 0.0), cells)


@pytest.fixture
def rng():
    return random.Random(12345)
