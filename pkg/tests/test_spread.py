import math
import random

import pytest

from flykites import spread
from flykites.errors import ContractViolation
from flykites.grid import OCCUPIED, OccupancyGrid
from flykites.spread import (
    Commitment,
    LatencyTracker,
    PairPlanInstance,
    RingTopology,
    solve_pair_exact,
    solve_pair_greedy,
)

from conftest import open_map


# -- ring topology -----------------------------------------------------------


def test_ring_single_cycle():
    ring = RingTopology.from_order([1, 2, 3, 4])
    assert ring.is_single_cycle()
    assert ring.succ[4] == 1 and ring.pred[1] == 4


def test_ring_remove_insert_preserve_cycle():
    ring = RingTopology.from_order([1, 2, 3, 4, 5])
    ring.remove(3)
    assert ring.is_single_cycle()
    assert ring.succ[2] == 4
    ring.insert_after(2, 3)
    assert ring.is_single_cycle()
    assert ring.succ[2] == 3 and ring.succ[3] == 4


def test_two_disjoint_cycles_rejected():
    ring = RingTopology()
    ring.succ = {1: 2, 2: 1, 3: 4, 4: 3}
    ring.pred = {2: 1, 1: 2, 4: 3, 3: 4}
    assert not ring.is_single_cycle()


# -- latency window ----------------------------------------------------------


def test_latency_window_formula():
    tr = LatencyTracker(60.0, {1: 70.0, 2: 40.0})
    assert tr.window(100.0) == pytest.approx(30.0)


def test_latency_window_fresh_return():
    tr = LatencyTracker(60.0, {1: 100.0})
    assert tr.window(100.0) == pytest.approx(60.0)


def test_latency_window_can_go_negative():
    tr = LatencyTracker(60.0, {1: 0.0})
    assert tr.window(100.0) == pytest.approx(-40.0)


def test_latency_requires_returns():
    with pytest.raises(ContractViolation):
        LatencyTracker(60.0).window(0.0)
    with pytest.raises(ContractViolation):
        LatencyTracker(0.0)


def test_merged_stamps_pointwise_max():
    tr = LatencyTracker(60.0, {1: 10.0, 2: 50.0})
    assert tr.merged_with({1: 30.0, 3: 5.0}) == {1: 30.0, 2: 50.0, 3: 5.0}


# -- pair planning -----------------------------------------------------------


def _instance(grid, frontiers, window=200.0, commitments_i=(), commitments_j=(),
              start=None, now=0.0, v=0.6):
    start = start or grid.cell_center(grid.width // 2, grid.height // 2)
    return PairPlanInstance(
        grid=grid,
        start=start,
        now=now,
        deadline=now + window,
        v_max=v,
        frontiers=list(frontiers),
        commitments_i=list(commitments_i),
        commitments_j=list(commitments_j),
    )


def test_no_frontiers_routes_to_fallback_point():
    grid = open_map(30, 30, resolution=0.5)
    inst = _instance(grid, [])
    res = solve_pair_greedy(inst)
    assert res.covered == frozenset()
    assert res.meeting_time <= inst.deadline + 1e-9
    # with no frontiers and no commitments the meeting lands at the midpoint
    # of the route endpoints, i.e. the start
    assert grid.world_to_cell(res.meeting_point) == grid.world_to_cell(inst.start)


def test_two_opposite_frontiers_split_between_robots():
    grid = open_map(40, 40, resolution=0.5)
    start = grid.cell_center(20, 20)
    f1 = grid.cell_center(5, 20)
    f2 = grid.cell_center(35, 20)
    inst = _instance(grid, [f1, f2], window=300.0, start=start)
    res = solve_pair_greedy(inst)
    assert res.covered == frozenset({0, 1})
    exact = solve_pair_exact(inst)
    assert len(exact.covered) == 2
    vis_i = {s.frontier for s in res.route_i if s.kind == "frontier"}
    vis_j = {s.frontier for s in res.route_j if s.kind == "frontier"}
    assert vis_i and vis_j and vis_i.isdisjoint(vis_j)


def test_window_compliance_and_commitments():
    grid = open_map(40, 40, resolution=0.5)
    start = grid.cell_center(20, 20)
    commit = Commitment(40.0, grid.cell_center(10, 10))
    frontiers = [grid.cell_center(x, y) for x, y in [(6, 6), (34, 34), (6, 34), (34, 6)]]
    inst = _instance(grid, frontiers, window=120.0, commitments_i=[commit], start=start)
    res = solve_pair_greedy(inst)
    assert res.meeting_time <= inst.deadline + 1e-9
    # the commitment survives, in order, in robot i's route
    ci = [s for s in res.route_i if s.kind == "commitment"]
    assert len(ci) == 1 and ci[0].time == 40.0


def test_infeasible_window_falls_back():
    grid = open_map(40, 40, resolution=0.5)
    start = grid.cell_center(20, 20)
    # commitment impossible to honor from here
    commit = Commitment(0.5, grid.cell_center(38, 38))
    inst = _instance(grid, [grid.cell_center(5, 5)], window=1.0,
                     commitments_i=[commit], commitments_j=[commit])
    res = solve_pair_greedy(inst)
    assert res.fallback
    assert res.meeting_time == pytest.approx(inst.now + inst.hold_time)


def _coverage_cases(seed_count=20):
    rng = random.Random(2024)
    cases = []
    for _ in range(seed_count):
        grid = open_map(40, 40, resolution=0.5)
        n_f = rng.randrange(2, 7)
        frontiers = []
        while len(frontiers) < n_f:
            p = grid.cell_center(rng.randrange(2, 38), rng.randrange(2, 38))
            if p not in frontiers:
                frontiers.append(p)
        window = rng.uniform(40.0, 120.0)
        cases.append((grid, frontiers, window))
    return cases


def test_greedy_vs_exact_coverage_floor():
    total_g = total_e = 0
    for grid, frontiers, window in _coverage_cases():
        inst = _instance(grid, frontiers, window=window)
        g = solve_pair_greedy(inst)
        e = solve_pair_exact(inst)
        assert len(g.covered) <= len(e.covered)
        assert g.meeting_time <= inst.deadline + 1e-9
        total_g += len(g.covered)
        total_e += len(e.covered)
    assert total_e > 0
    assert total_g >= 0.8 * total_e


def test_exact_matches_simple_bruteforce_case():
    # 2 frontiers, ample window: both must be covered
    grid = open_map(30, 30, resolution=0.5)
    inst = _instance(grid, [grid.cell_center(4, 4), grid.cell_center(25, 25)], window=500.0)
    e = solve_pair_exact(inst)
    assert len(e.covered) == 2


def test_needs_return():
    assert spread.needs_return(60.0, 70.0, 50.0)
    assert not spread.needs_return(5.0, 70.0, 50.0)
    assert not spread.needs_return(60.0, 5.0, 50.0)
