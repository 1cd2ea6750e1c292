import heapq
import math
import random

import numpy as np
import pytest

from flykites import worldmap as wm
from flykites.errors import ContractViolation, ScenarioError, UnreachableError
from flykites.grid import FREE, OCCUPIED, UNKNOWN, OccupancyGrid

from conftest import open_map, random_map

SQRT2 = math.sqrt(2.0)


# -- independent oracles -----------------------------------------------------


def frontier_oracle(grid):
    """Per-cell classification + union-find clustering, independent of the
    ndimage-based implementation."""
    w, h = grid.width, grid.height
    cells = grid.cells

    def is_frontier(x, y):
        if cells[y, x] != FREE:
            return False
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and cells[ny, nx] == UNKNOWN:
                return True
        return False

    members = [(x, y) for y in range(h) for x in range(w) if is_frontier(x, y)]
    parent = {c: c for c in members}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    for x, y in members:
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                n = (x + dx, y + dy)
                if n != (x, y) and n in parent:
                    ra, rb = find((x, y)), find(n)
                    if ra != rb:
                        parent[ra] = rb
    clusters = {}
    for c in members:
        clusters.setdefault(find(c), set()).add(c)
    return sorted(frozenset(v) for v in clusters.values())


def dijkstra_oracle(grid, src, dst):
    """Plain dict-based Dijkstra; same movement rules, different search code."""
    sx, sy = grid.world_to_cell(src)
    gx, gy = grid.world_to_cell(dst)
    cells = grid.cells
    w, h = grid.width, grid.height
    dist = {(sx, sy): 0.0}
    heap = [(0.0, sx, sy)]
    moves = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
             (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2)]
    while heap:
        d, x, y = heapq.heappop(heap)
        if (x, y) == (gx, gy):
            return d * grid.resolution
        if d > dist[(x, y)] + 1e-12:
            continue
        for dx, dy, c in moves:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h) or cells[ny, nx] != FREE:
                continue
            if dx != 0 and dy != 0 and (cells[y, nx] != FREE or cells[ny, x] != FREE):
                continue
            nd = d + c
            if nd < dist.get((nx, ny), math.inf) - 1e-12:
                dist[(nx, ny)] = nd
                heapq.heappush(heap, (nd, nx, ny))
    return None


# -- sensing -----------------------------------------------------------------


def test_reveal_open_disc_boundary():
    truth = open_map(61, 61, resolution=0.5, border=False)
    local = OccupancyGrid.blank(61, 61, 0.5)
    pose = truth.cell_center(30, 30)
    wm.reveal(local, truth, pose, 10.0)
    for cx in range(61):
        for cy in range(61):
            c = truth.cell_center(cx, cy)
            d = math.hypot(c[0] - pose[0], c[1] - pose[1])
            if d <= 10.0:
                assert local.at(cx, cy) == FREE
            elif d > 10.05:
                assert local.at(cx, cy) == UNKNOWN


def test_reveal_idempotent():
    truth = open_map(30, 30)
    local = OccupancyGrid.blank(30, 30, 0.5)
    pose = truth.cell_center(10, 10)
    wm.reveal(local, truth, pose, 5.0)
    snapshot = local.cells.copy()
    changed = wm.reveal(local, truth, pose, 5.0)
    assert changed == 0
    assert np.array_equal(local.cells, snapshot)


def test_reveal_occlusion_behind_wall():
    truth = open_map(40, 20, resolution=0.5)
    truth.cells[2:18, 20] = OCCUPIED  # vertical wall at cx=20
    local = OccupancyGrid.blank(40, 20, 0.5)
    pose = truth.cell_center(18, 10)  # 1 m west of the wall
    wm.reveal(local, truth, pose, 8.0)
    assert local.at(20, 10) == OCCUPIED  # the wall itself is revealed
    assert all(local.at(cx, 10) == UNKNOWN for cx in range(22, 35))


def test_reveal_matches_truth_values(rng):
    truth = random_map(rng, 30, 30, p_unknown=0.0)
    # pick a free pose
    free = np.argwhere(truth.cells == FREE)
    cy, cx = free[0]
    local = OccupancyGrid.blank(30, 30, truth.resolution)
    wm.reveal(local, truth, truth.cell_center(int(cx), int(cy)), 6.0)
    known = local.cells != UNKNOWN
    assert np.array_equal(local.cells[known], truth.cells[known])


def test_reveal_pose_must_be_free():
    truth = open_map(10, 10)
    local = OccupancyGrid.blank(10, 10, 0.5)
    with pytest.raises(ContractViolation):
        wm.reveal(local, truth, truth.cell_center(0, 0), 5.0)


# -- frontiers ---------------------------------------------------------------


def test_frontiers_fully_known_map_empty():
    assert wm.find_frontiers(open_map(20, 20), 1) == []


def test_single_free_cell_is_one_cluster():
    g = OccupancyGrid.blank(5, 5, 1.0)
    g.cells[2, 2] = FREE
    clusters = wm.find_frontiers(g, 1)
    assert len(clusters) == 1
    assert clusters[0].cells == [(2, 2)]
    assert clusters[0].size == 1


def test_frontier_cluster_invariants(rng):
    g = random_map(rng, 40, 40)
    for cl in wm.find_frontiers(g, 3):
        assert cl.size >= 3
        for cx, cy in cl.cells:
            assert g.at(cx, cy) == FREE


def test_frontiers_match_bruteforce_oracle():
    rng = random.Random(99)
    for _ in range(25):
        g = random_map(rng, 40, 40)
        got = sorted(frozenset(c.cells) for c in wm.find_frontiers(g, 1))
        assert got == frontier_oracle(g)


# -- paths -------------------------------------------------------------------


def test_path_identity():
    g = open_map(10, 10)
    p = g.cell_center(4, 4)
    path = wm.shortest_path(g, p, p)
    assert path.waypoints == [p]
    assert path.length == 0.0


def test_path_open_diagonal():
    g = open_map(12, 12, resolution=1.0, border=False)
    path = wm.shortest_path(g, g.cell_center(0, 0), g.cell_center(9, 9))
    assert path.length == pytest.approx(9 * SQRT2 * 1.0)


def test_path_u_shaped_wall_matches_dijkstra():
    g = open_map(20, 20, resolution=0.5)
    g.cells[4:15, 10] = OCCUPIED  # wall with a gap at the top
    a, b = g.cell_center(5, 8), g.cell_center(15, 8)
    path = wm.shortest_path(g, a, b)
    assert path.length == pytest.approx(dijkstra_oracle(g, a, b), abs=1e-9)


def test_path_unreachable_raises():
    g = open_map(10, 10, resolution=0.5)
    g.cells[:, 5] = OCCUPIED
    with pytest.raises(UnreachableError):
        wm.shortest_path(g, g.cell_center(2, 2), g.cell_center(8, 2))


def test_path_random_maps_match_dijkstra(rng):
    for _ in range(20):
        g = random_map(rng, 25, 25, p_unknown=0.0, p_occ=0.3)
        free = np.argwhere(g.cells == FREE)
        (ay, ax), (by, bx) = free[0], free[-1]
        a = g.cell_center(int(ax), int(ay))
        b = g.cell_center(int(bx), int(by))
        expected = dijkstra_oracle(g, a, b)
        if expected is None:
            with pytest.raises(UnreachableError):
                wm.shortest_path(g, a, b)
        else:
            assert wm.shortest_path(g, a, b).length == pytest.approx(expected, abs=1e-9)


# -- nav time and LOS --------------------------------------------------------


def test_nav_time_paper_speeds():
    assert wm.nav_time(6.0, 0.6) == pytest.approx(10.0)
    assert wm.nav_time(3.0, 0.3) == pytest.approx(10.0)
    assert wm.nav_time(0.0, 0.6) == 0.0
    with pytest.raises(ContractViolation):
        wm.nav_time(1.0, 0.0)


def test_los_basic():
    g = open_map(30, 10, resolution=0.5)
    a = g.cell_center(2, 5)
    b = g.cell_center(27, 5)
    assert wm.line_of_sight(g, a, a)
    assert wm.line_of_sight(g, a, b)
    g.cells[5, 14] = OCCUPIED
    assert not wm.line_of_sight(g, a, b)


def test_los_unknown_blocks():
    g = open_map(20, 10, resolution=0.5)
    g.cells[5, 10] = UNKNOWN
    assert not wm.line_of_sight(g, g.cell_center(2, 5), g.cell_center(18, 5))


def test_load_ground_truth_rejects_unknown(tmp_path):
    p = tmp_path / "bad.map"
    p.write_text("3 1 1.0\n.?.\n")
    with pytest.raises(ScenarioError):
        wm.load_ground_truth(p)
