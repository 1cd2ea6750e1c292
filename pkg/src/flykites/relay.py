"""Relay-mode computations: anchor placement along the task-operator path,
bottleneck assignment of robots to anchors, operator relocation, and the
release condition for returning relays to spread mode.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .comms import CommModel, com_quality
from .errors import ContractViolation, InfeasibleTaskError, UnreachableError
from .grid import OccupancyGrid
from .worldmap import distance_field, field_at, shortest_path

EPS = 1e-9

REDUCE_RELAYS = "reduce"
FOLLOW_EXPLORATION = "follow"
STAY = "stay"


@dataclass
class RelayChain:
    task_id: object
    anchors: list  # relay positions, ordered task side -> operator side
    task_pos: tuple[float, float]
    operator_pos: tuple[float, float]

    @property
    def relay_count(self) -> int:
        return len(self.anchors)


@dataclass
class Assignment:
    task_id: object
    mapping: list  # (anchor_index, robot_id, release_time) per anchor
    objective: float  # minimized max arrival time at any anchor


def compute_relay_topology(grid: OccupancyGrid, task_pos, operator_pos,
                           model: CommModel, task_id=None) -> RelayChain:
    """Greedy farthest-reachable anchor placement along the shortest path.

    From each anchor index, the next anchor is the largest later path index
    whose link quality clears the threshold; intermediate indices become the
    relay positions.
    """
    try:
        path = shortest_path(grid, task_pos, operator_pos)
    except UnreachableError:
        raise InfeasibleTaskError(
            f"operator at {operator_pos} unreachable from task at {task_pos}"
        ) from None
    pts = path.waypoints
    idx = 0
    indices = [0]
    last = len(pts) - 1
    while idx < last:
        nxt = None
        for j in range(last, idx, -1):
            if com_quality(model, pts[idx], pts[j], grid) > model.threshold:
                nxt = j
                break
        if nxt is None:
            # contiguous grid path + range >= resolution makes this unreachable
            raise ContractViolation(f"no reachable next anchor from path index {idx}")
        indices.append(nxt)
        idx = nxt
    anchors = [pts[i] for i in indices[1:-1]]
    return RelayChain(task_id, anchors, pts[0], pts[-1])


def assign_relays(anchors, candidates, grid: OccupancyGrid, v_max: float,
                  method: str = "threshold", task_id=None) -> Assignment:
    """Bottleneck-optimal bijection of candidate robots to anchors.

    candidates: list of (robot_id, release_time, release_location); the cost of
    robot r at anchor l is release_time + travel time from the release location.
    Ties are broken toward the lexicographically smallest (robot id -> anchor)
    mapping in robot-id order.
    """
    n = len(anchors)
    if len(candidates) != n:
        raise ContractViolation(f"{len(candidates)} candidates for {n} anchors")
    if n == 0:
        return Assignment(task_id, [], 0.0)
    cand = sorted(candidates, key=lambda c: c[0])
    cost = []
    for rid, t_rel, loc in cand:
        fld = distance_field(grid, loc)
        row = []
        for a in anchors:
            d = field_at(fld, grid, a)
            row.append(t_rel + d / v_max if math.isfinite(d) else math.inf)
        cost.append(row)
    if method == "exhaustive" or n <= 3:
        perm, objective = _lbap_exhaustive(cost)
    elif method == "threshold":
        perm, objective = _lbap_threshold(cost)
    else:
        raise ContractViolation(f"unknown LBAP method {method!r}")
    if perm is None:
        raise InfeasibleTaskError("no finite-bottleneck assignment exists")
    mapping = sorted((perm[r], cand[r][0], cand[r][1]) for r in range(n))
    return Assignment(task_id, mapping, objective)


def _lbap_exhaustive(cost):
    """Brute force over permutations; rows in robot-id order so the first
    optimal permutation found is the lexicographic tie-break winner."""
    n = len(cost)
    best_perm, best_obj = None, math.inf
    for perm in itertools.permutations(range(n)):
        obj = max(cost[r][perm[r]] for r in range(n))
        if obj < best_obj - EPS:
            best_obj = obj
            best_perm = perm
    if best_perm is None or not math.isfinite(best_obj):
        return None, math.inf
    return list(best_perm), best_obj


def _matching_exists(adj, n, banned_pairs=(), forced=None):
    """Perfect matching feasibility via augmenting paths on allowed edges."""
    forced = forced or {}
    match_of_anchor = [-1] * n
    for r, a in forced.items():
        match_of_anchor[a] = r

    def try_assign(r, seen):
        for a in adj[r]:
            if (r, a) in banned_pairs or a in seen:
                continue
            seen.add(a)
            owner = match_of_anchor[a]
            if owner == -1 or (owner not in forced and try_assign(owner, seen)):
                match_of_anchor[a] = r
                return True
        return False

    for r in range(n):
        if r in forced:
            continue
        if not try_assign(r, set()):
            return False
    return True


def _lbap_threshold(cost):
    """Threshold algorithm: binary-search the bottleneck value over the sorted
    distinct costs, then rebuild the lexicographically smallest assignment."""
    n = len(cost)
    values = sorted({c for row in cost for c in row if math.isfinite(c)})
    if not values:
        return None, math.inf

    def adj_for(limit):
        return [
            [a for a in range(n) if cost[r][a] <= limit + EPS]
            for r in range(n)
        ]

    lo, hi = 0, len(values) - 1
    if not _matching_exists(adj_for(values[hi]), n):
        return None, math.inf
    while lo < hi:
        mid = (lo + hi) // 2
        if _matching_exists(adj_for(values[mid]), n):
            hi = mid
        else:
            lo = mid + 1
    objective = values[lo]
    adj = adj_for(objective)
    forced = {}
    for r in range(n):
        placed = False
        for a in adj[r]:
            if a in forced.values():
                continue
            trial = dict(forced)
            trial[r] = a
            if _matching_exists(adj, n, forced=trial):
                forced[r] = a
                placed = True
                break
        if not placed:
            return None, math.inf
    perm = [forced[r] for r in range(n)]
    return perm, objective


def plan_operator_relocation(chain: RelayChain, fleet_size: int, mode: str,
                             m: int | None = None, frontier_centroid=None,
                             step_m: float = 0.0, grid: OccupancyGrid | None = None):
    """Operator relocation options; returns (target point, reduced chain).

    ReduceRelays walks the operator to the m-th anchor from its end, dropping
    those anchors; m defaults to the minimum making the chain serviceable with
    fleet_size - 1 relays.
    """
    if mode == STAY or (mode == REDUCE_RELAYS and m == 0):
        return chain.operator_pos, chain
    if mode == REDUCE_RELAYS:
        L = chain.relay_count
        if L == 0:
            return chain.operator_pos, chain
        if m is None:
            m = max(1, L - (fleet_size - 1))
        if m > L:
            raise ContractViolation(f"cannot drop {m} anchors from a chain of {L}")
        target = chain.anchors[L - m]
        reduced = RelayChain(chain.task_id, chain.anchors[: L - m], chain.task_pos, target)
        return target, reduced
    if mode == FOLLOW_EXPLORATION:
        if frontier_centroid is None or step_m <= 0:
            return chain.operator_pos, chain
        ox, oy = chain.operator_pos
        dx, dy = frontier_centroid[0] - ox, frontier_centroid[1] - oy
        norm = math.hypot(dx, dy)
        if norm < EPS:
            return chain.operator_pos, chain
        step = min(step_m, norm)
        target = (ox + dx / norm * step, oy + dy / norm * step)
        if grid is not None and not grid.is_free_at(target):
            return chain.operator_pos, chain
        return target, chain
    raise ContractViolation(f"unknown relocation mode {mode!r}")


def check_relay_release(t_return: float, t_work: float, anchor_positions,
                        spread_events, grid: OccupancyGrid, v_max: float):
    """Release condition: all relays must be able to reach some still-future
    planned spread meeting after the task wraps up.

    spread_events: list of (time, point) of each spread robot's last planned
    meeting. Returns (ok, index of the earliest satisfying event or None).
    """
    if not spread_events or not anchor_positions:
        return False, None
    fields = [distance_field(grid, p) for p in anchor_positions]
    best = None
    for idx, (t_star, p_star) in enumerate(spread_events):
        worst = 0.0
        for fld in fields:
            d = field_at(fld, grid, p_star)
            if not math.isfinite(d):
                worst = math.inf
                break
            worst = max(worst, d / v_max)
        if t_return + t_work + worst <= t_star + EPS:
            if best is None or t_star < spread_events[best][0]:
                best = idx
    return best is not None, best


@dataclass
class SpliceAssignment:
    order: list  # robot ids sorted by arrival at the splice path
    points: dict  # robot -> splice point on the path
    arrivals: dict  # robot -> arrival time t_hat


def plan_splice(splice_path, relay_positions: dict, t_return: float, t_work: float,
                grid: OccupancyGrid, v_max: float) -> SpliceAssignment:
    """Send each former relay to its nearest point on the splice path.

    Arrival is t_return + t_work + travel; the chain order for re-insertion is
    arrival-ascending (ties on robot id).
    """
    waypoints = splice_path.waypoints
    points, arrivals = {}, {}
    for rid, pos in relay_positions.items():
        fld = distance_field(grid, pos)
        best = None
        for wi, wp in enumerate(waypoints):
            d = field_at(fld, grid, wp)
            if math.isfinite(d) and (best is None or d < best[0] - EPS):
                best = (d, wi, wp)
        if best is None:
            raise UnreachableError(f"relay {rid!r} cannot reach the splice path")
        d, _, wp = best
        points[rid] = wp
        arrivals[rid] = t_return + t_work + d / v_max
    order = sorted(points, key=lambda r: (arrivals[r], str(r)))
    return SpliceAssignment(order, points, arrivals)
