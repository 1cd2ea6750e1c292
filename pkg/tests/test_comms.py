import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flykites import comms
from flykites.errors import ConfigError, ContractViolation
from flykites.grid import OCCUPIED

from conftest import open_map


@pytest.fixture
def grid():
    return open_map(60, 60, resolution=0.5)


@pytest.fixture
def model():
    return comms.CommModel(max_range=5.0, threshold=0.5)


def test_binary_quality_range(grid, model):
    a = grid.cell_center(10, 10)
    b3 = (a[0] + 3.0, a[1])
    b6 = (a[0] + 6.0, a[1])
    assert comms.com_quality(model, a, b3, grid) == 1.0
    assert comms.com_quality(model, a, b6, grid) == 0.0
    assert comms.com_quality(model, a, a, grid) == 1.0


def test_smooth_decay(grid):
    m = comms.CommModel(5.0, 0.5, comms.SMOOTH_DECAY)
    a = grid.cell_center(10, 10)
    b = (a[0] + 2.5, a[1])
    assert comms.com_quality(m, a, b, grid) == pytest.approx(math.exp(-0.5))


def test_quality_zero_without_los(grid, model):
    grid.cells[20, 20] = OCCUPIED
    a = grid.cell_center(18, 20)
    b = grid.cell_center(22, 20)
    assert comms.com_quality(model, a, b, grid) == 0.0


def test_neighbors_line_of_three(grid, model):
    y = grid.cell_center(10, 10)[1]
    poses = {1: (3.0, y), 2: (7.0, y), 3: (11.0, y)}
    adj = comms.neighbors(model, poses, grid)
    assert adj.connected(1, 2) and adj.connected(2, 3)
    assert not adj.connected(1, 3)


def test_neighbors_match_pairwise_bruteforce(grid, model):
    rng = random.Random(5)
    poses = {
        i: grid.cell_center(rng.randrange(1, 59), rng.randrange(1, 59))
        for i in range(8)
    }
    adj = comms.neighbors(model, poses, grid)
    for i in poses:
        for j in poses:
            if i == j:
                assert not adj.connected(i, j)
            else:
                expect = comms.com_quality(model, poses[i], poses[j], grid) > model.threshold
                assert adj.connected(i, j) == expect


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 99999))
def test_adjacency_symmetric_no_self_loops(seed):
    grid = open_map(40, 40, resolution=0.5)
    model = comms.CommModel()
    rng = random.Random(seed)
    poses = {
        i: grid.cell_center(rng.randrange(1, 39), rng.randrange(1, 39))
        for i in range(6)
    }
    adj = comms.neighbors(model, poses, grid)
    for i in poses:
        assert i not in adj.of(i)
        for j in adj.of(i):
            assert i in adj.of(j)


def test_chain_connected(grid, model):
    y = grid.cell_center(0, 30)[1]
    poses = {"k": (3.0, y), 1: (7.0, y), 2: (11.0, y), "h": (15.0, y)}
    assert comms.chain_connected(["k", 1, 2, "h"], poses, grid, model)
    assert not comms.chain_connected(["k", 2, "h"], poses, grid, model)  # 8 m gap
    poses[2] = (11.0, y + 20.0)
    assert not comms.chain_connected(["k", 1, 2, "h"], poses, grid, model)
    with pytest.raises(ContractViolation):
        comms.chain_connected(["k", "nope"], poses, grid, model)


def test_single_link_chain(grid, model):
    y = grid.cell_center(0, 30)[1]
    poses = {"k": (3.0, y), "h": (6.0, y)}
    assert comms.chain_connected(["k", "h"], poses, grid, model)


def test_model_validation():
    with pytest.raises(ConfigError):
        comms.CommModel(max_range=-1.0)
    with pytest.raises(ConfigError):
        comms.CommModel(threshold=1.5)
    with pytest.raises(ConfigError):
        comms.CommModel(quality_fn="psychic")
