"""Communication model, neighbor graphs, and relay-chain connectivity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError, ContractViolation
from .grid import OccupancyGrid
from .worldmap import line_of_sight

BINARY_LOS_RANGE = "binary"
SMOOTH_DECAY = "smooth"


@dataclass(frozen=True)
class CommModel:
    max_range: float = 5.0
    threshold: float = 0.5
    quality_fn: str = BINARY_LOS_RANGE

    def __post_init__(self):
        if self.max_range <= 0:
            raise ConfigError(f"comm range must be positive, got {self.max_range}")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"comm threshold must be in (0, 1), got {self.threshold}")
        if self.quality_fn not in (BINARY_LOS_RANGE, SMOOTH_DECAY):
            raise ConfigError(f"unknown comm model {self.quality_fn!r}")


@dataclass
class Adjacency:
    neighbors: dict[object, set] = field(default_factory=dict)

    def connected(self, i, j) -> bool:
        return j in self.neighbors.get(i, ())

    def of(self, i) -> set:
        return self.neighbors.get(i, set())


def com_quality(model: CommModel, a, b, grid: OccupancyGrid) -> float:
    """Deterministic link quality between two world points on the given map."""
    dist = math.hypot(b[0] - a[0], b[1] - a[1])
    if dist == 0.0:
        return 1.0
    if not line_of_sight(grid, a, b):
        return 0.0
    if model.quality_fn == BINARY_LOS_RANGE:
        return 1.0 if dist <= model.max_range else 0.0
    return math.exp(-dist / model.max_range)


def is_link(model: CommModel, a, b, grid: OccupancyGrid) -> bool:
    return com_quality(model, a, b, grid) > model.threshold


def neighbors(model: CommModel, poses: dict, grid: OccupancyGrid) -> Adjacency:
    """Symmetric neighbor sets; quality evaluated once per unordered pair."""
    ids = list(poses)
    adj = Adjacency({i: set() for i in ids})
    for a_pos in range(len(ids)):
        for b_pos in range(a_pos + 1, len(ids)):
            i, j = ids[a_pos], ids[b_pos]
            if is_link(model, poses[i], poses[j], grid):
                adj.neighbors[i].add(j)
                adj.neighbors[j].add(i)
    return adj


def chain_connected(chain, poses: dict, grid: OccupancyGrid, model: CommModel) -> bool:
    """True iff every consecutive pair of agents in the chain is a neighbor now."""
    for agent in chain:
        if agent not in poses:
            raise ContractViolation(f"chain references unknown agent {agent!r}")
    for i, j in zip(chain, chain[1:]):
        if not is_link(model, poses[i], poses[j], grid):
            return False
    return True
