"""Spread-mode protocol pieces: ring bookkeeping, latency-bounded returns,
and the joint next-meeting planner for a robot pair.

The planner solves the pair routing problem heuristically (sequential greedy
insertion, one robot at a time) or exactly (subset dynamic program, small
instances only). Both share a geodesic travel-time matrix but search
independently.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .errors import ContractViolation
from .grid import FREE, OccupancyGrid
from .worldmap import distance_field, field_at

EPS = 1e-9


# -- ring topology -----------------------------------------------------------


@dataclass
class RingTopology:
    succ: dict = field(default_factory=dict)
    pred: dict = field(default_factory=dict)

    @classmethod
    def from_order(cls, order) -> "RingTopology":
        ring = cls()
        n = len(order)
        for k, rid in enumerate(order):
            ring.succ[rid] = order[(k + 1) % n]
            ring.pred[rid] = order[(k - 1) % n]
        return ring

    def members(self):
        return set(self.succ)

    def remove(self, rid):
        """Splice a robot out, reconnecting its neighbors."""
        p, s = self.pred.pop(rid), self.succ.pop(rid)
        if p == rid:  # was the only member
            return
        self.succ[p] = s
        self.pred[s] = p

    def insert_after(self, anchor, rid):
        """Insert rid between anchor and its successor."""
        s = self.succ[anchor]
        self.succ[anchor] = rid
        self.pred[rid] = anchor
        self.succ[rid] = s
        self.pred[s] = rid

    def is_single_cycle(self) -> bool:
        """pred/succ must be mutually inverse and form exactly one cycle."""
        members = set(self.succ)
        if members != set(self.pred):
            return False
        if not members:
            return True
        for i in members:
            if self.pred.get(self.succ[i]) != i:
                return False
        start = next(iter(sorted(members, key=repr)))
        seen = set()
        cur = start
        while cur not in seen:
            seen.add(cur)
            cur = self.succ[cur]
        return seen == members and cur == start


# -- latency tracking --------------------------------------------------------


@dataclass
class LatencyTracker:
    period: float  # operator-specified return period
    last_return: dict = field(default_factory=dict)  # robot -> time of last arrival

    def __post_init__(self):
        if self.period <= 0:
            raise ContractViolation(f"return period must be positive, got {self.period}")

    def record(self, robot, t: float):
        self.last_return[robot] = t

    def window(self, t: float) -> float:
        """Remaining time before some robot must be back at the operator.

        May be negative, which callers treat as "return immediately".
        """
        if not self.last_return:
            raise ContractViolation("latency window undefined before any return")
        return self.period - t + max(self.last_return.values())

    def merged_with(self, other: dict) -> dict:
        """Pointwise max of return stamps, used when robots exchange knowledge."""
        out = dict(self.last_return)
        for k, v in other.items():
            if v > out.get(k, -math.inf):
                out[k] = v
        return out


# -- pair meeting planning ---------------------------------------------------


@dataclass(frozen=True)
class Commitment:
    time: float
    point: tuple[float, float]


@dataclass
class PairPlanInstance:
    grid: OccupancyGrid
    start: tuple[float, float]  # shared location of the meeting pair
    now: float
    deadline: float  # latest allowed time for the next pair meeting
    v_max: float
    frontiers: list  # candidate frontier centroids (world points)
    commitments_i: list  # Commitment, sorted by time
    commitments_j: list
    hold_time: float = 5.0  # fallback re-meet delay when nothing is feasible


@dataclass
class RouteStop:
    kind: str  # "frontier" | "commitment" | "meeting"
    point: tuple[float, float]
    time: float | None = None  # scheduled time for commitments/meeting
    frontier: int | None = None


@dataclass
class PairPlanResult:
    route_i: list
    route_j: list
    meeting_point: tuple[float, float]
    meeting_time: float
    covered: frozenset  # frontier indices visited by either robot
    fallback: bool = False


class _TravelTimes:
    """Geodesic travel times between the instance's points of interest."""

    def __init__(self, grid: OccupancyGrid, v_max: float):
        self.grid = grid
        self.v_max = v_max
        self._fields = {}

    def _field(self, p):
        key = self.grid.world_to_cell(p)
        if key not in self._fields:
            self._fields[key] = distance_field(self.grid, p)
        return self._fields[key]

    def __call__(self, a, b) -> float:
        if self.grid.world_to_cell(a) == self.grid.world_to_cell(b):
            return 0.0
        return field_at(self._field(a), self.grid, b) / self.v_max

    def reachable(self, a, b) -> bool:
        return math.isfinite(self(a, b))


def _nearest_free_point(grid: OccupancyGrid, p):
    """Project a world point to the nearest free cell center (spiral scan)."""
    cx, cy = grid.world_to_cell(p)
    if grid.in_bounds(cx, cy) and grid.at(cx, cy) == FREE:
        return grid.cell_center(cx, cy)
    for radius in range(1, max(grid.width, grid.height)):
        best = None
        for dx in range(-radius, radius + 1):
            for dy in (-radius, radius) if abs(dx) < radius else range(-radius, radius + 1):
                x, y = cx + dx, cy + dy
                if grid.in_bounds(x, y) and grid.at(x, y) == FREE:
                    c = grid.cell_center(x, y)
                    d = (c[0] - p[0]) ** 2 + (c[1] - p[1]) ** 2
                    if best is None or d < best[0]:
                        best = (d, c)
        if best is not None:
            return best[1]
    return None


def meeting_candidates(inst: PairPlanInstance) -> list:
    """Frontier centroids plus the midpoint of the pair's committed endpoints."""
    pts = [f for f in inst.frontiers]
    end_i = inst.commitments_i[-1].point if inst.commitments_i else inst.start
    end_j = inst.commitments_j[-1].point if inst.commitments_j else inst.start
    mid = ((end_i[0] + end_j[0]) / 2.0, (end_i[1] + end_j[1]) / 2.0)
    pts.append(mid)
    out = []
    seen = set()
    for p in pts:
        q = _nearest_free_point(inst.grid, p)
        if q is None:
            continue
        cell = inst.grid.world_to_cell(q)
        if cell not in seen:
            seen.add(cell)
            out.append(q)
    return out


def _route_arrival(tt, start, now, stops, commitments_left=None):
    """Walk a stop sequence; return final arrival time, or None if infeasible."""
    t = now
    prev = start
    for stop in stops:
        leg = tt(prev, stop.point)
        if not math.isfinite(leg):
            return None
        t += leg
        if stop.kind == "commitment":
            if t > stop.time + EPS:
                return None
            t = stop.time  # wait out the scheduled meeting
        prev = stop.point
    return t


def solve_pair_greedy(inst: PairPlanInstance) -> PairPlanResult:
    """Greedy-insertion routing: per meeting candidate, repeatedly give the
    cheapest feasible frontier insertion to whichever robot can do it with the
    earlier resulting arrival. Candidates are scored by frontiers covered,
    ties broken on the earlier meeting time, then candidate order.
    """
    tt = _TravelTimes(inst.grid, inst.v_max)
    best = None
    for ci, cand in enumerate(meeting_candidates(inst)):
        routes = {}
        ok = True
        for tag, commitments in (("i", inst.commitments_i), ("j", inst.commitments_j)):
            skeleton = [RouteStop("commitment", c.point, c.time) for c in commitments]
            skeleton.append(RouteStop("meeting", cand))
            t = _route_arrival(tt, inst.start, inst.now, skeleton)
            if t is None or t > inst.deadline + EPS:
                ok = False
                break
            routes[tag] = [skeleton, t, []]
        if not ok:
            continue
        remaining = [k for k in range(len(inst.frontiers))
                     if tt.reachable(inst.start, inst.frontiers[k])]
        while remaining:
            best_ins = None
            for tag in ("i", "j"):
                stops = routes[tag][0]
                for fi in remaining:
                    fp = inst.frontiers[fi]
                    for pos in range(len(stops)):  # never after the meeting stop
                        trial = stops[:pos] + [RouteStop("frontier", fp, frontier=fi)] + stops[pos:]
                        t = _route_arrival(tt, inst.start, inst.now, trial)
                        if t is None or t > inst.deadline + EPS:
                            continue
                        key = (t, tag, fi, pos)
                        if best_ins is None or key < best_ins[0]:
                            best_ins = (key, tag, trial, fi, t)
            if best_ins is None:
                break
            _, tag, trial, fi, t = best_ins
            routes[tag][0] = trial
            routes[tag][1] = t
            routes[tag][2].append(fi)
            remaining.remove(fi)
        t_meet = max(routes["i"][1], routes["j"][1])
        if t_meet > inst.deadline + EPS:
            continue
        covered = frozenset(routes["i"][2]) | frozenset(routes["j"][2])
        score = (-len(covered), t_meet, ci)
        if best is None or score < best[0]:
            best = (score, routes["i"][0], routes["j"][0], cand, t_meet, covered)
    if best is None:
        return _fallback_plan(inst)
    _, stops_i, stops_j, cand, t_meet, covered = best
    for stops in (stops_i, stops_j):
        stops[-1].time = t_meet
    return PairPlanResult(stops_i, stops_j, cand, t_meet, covered)


def _fallback_plan(inst: PairPlanInstance) -> PairPlanResult:
    """No feasible optimized meeting: re-meet at the current spot after a hold."""
    t = inst.now + inst.hold_time
    meet = _nearest_free_point(inst.grid, inst.start)
    stops_i = [RouteStop("commitment", c.point, c.time) for c in inst.commitments_i]
    stops_j = [RouteStop("commitment", c.point, c.time) for c in inst.commitments_j]
    stops_i.append(RouteStop("meeting", meet, t))
    stops_j.append(RouteStop("meeting", meet, t))
    return PairPlanResult(stops_i, stops_j, meet, t, frozenset(), fallback=True)


# -- exact oracle ------------------------------------------------------------


def _single_robot_tables(tt, inst, commitments, n_f):
    """Min arrival time per (frontier subset, commitments done, last node).

    Returns best[S] = minimal time at which the robot can have visited exactly
    frontier set S and all commitments, standing at some node (time includes
    waiting at commitments). Exact because earlier is always at least as good.
    """
    points = [inst.frontiers[k] for k in range(n_f)]
    n_c = len(commitments)
    # state: (S, k) -> {last: earliest time}; last: -1 start, 0..n_f-1 frontier,
    # n_f+ci commitment index
    states = {(0, 0): {-1: inst.now}}
    point_of = {-1: inst.start}
    for k in range(n_f):
        point_of[k] = points[k]
    for ci in range(n_c):
        point_of[n_f + ci] = commitments[ci].point

    # transitions strictly increase popcount(S) + k, so process levels in order
    for level in range(n_f + n_c):
        keys = [key for key in states if bin(key[0]).count("1") + key[1] == level]
        for key in keys:
            S, k = key
            for last, t in states[key].items():
                p_last = point_of[last]
                for fk in range(n_f):
                    if S & (1 << fk):
                        continue
                    leg = tt(p_last, points[fk])
                    if not math.isfinite(leg):
                        continue
                    nt = t + leg
                    if nt > inst.deadline + EPS:
                        continue
                    d = states.setdefault((S | (1 << fk), k), {})
                    if nt < d.get(fk, math.inf) - EPS:
                        d[fk] = nt
                if k < n_c:
                    c = commitments[k]
                    leg = tt(p_last, c.point)
                    if not math.isfinite(leg) or t + leg > c.time + EPS:
                        continue
                    d = states.setdefault((S, k + 1), {})
                    if c.time < d.get(n_f + k, math.inf) - EPS:
                        d[n_f + k] = c.time

    finals = {}
    for (S, k), cur in states.items():
        if k != n_c:
            continue
        d = finals.setdefault(S, {})
        for last, t in cur.items():
            if t < d.get(last, math.inf) - EPS:
                d[last] = t
    return finals, point_of


def solve_pair_exact(inst: PairPlanInstance) -> PairPlanResult:
    """Exhaustive pair routing for small instances (<= ~8 frontiers).

    Dynamic program over frontier subsets per robot, then the best split of
    frontiers between the two robots per meeting candidate.
    """
    n_f = len(inst.frontiers)
    if n_f > 12:
        raise ContractViolation(f"exact pair solver limited to 12 frontiers, got {n_f}")
    tt = _TravelTimes(inst.grid, inst.v_max)
    tables_i, points_i = _single_robot_tables(tt, inst, inst.commitments_i, n_f)
    tables_j, points_j = _single_robot_tables(tt, inst, inst.commitments_j, n_f)

    best = None
    for ci, cand in enumerate(meeting_candidates(inst)):
        # min arrival at cand per subset, per robot
        def arrivals(tables, point_of):
            out = {}
            for S, lasts in tables.items():
                m = math.inf
                for last, t in lasts.items():
                    leg = tt(point_of[last], cand)
                    if math.isfinite(leg):
                        m = min(m, t + leg)
                if m <= inst.deadline + EPS:
                    out[S] = m
            return out

        arr_i = arrivals(tables_i, points_i)
        arr_j = arrivals(tables_j, points_j)
        if not arr_i or not arr_j:
            continue
        full = (1 << n_f) - 1
        for Si, t_i in arr_i.items():
            comp = full & ~Si
            # enumerate subsets of the complement
            Sj = comp
            while True:
                t_j = arr_j.get(Sj)
                if t_j is not None:
                    t_meet = max(t_i, t_j)
                    count = bin(Si | Sj).count("1")
                    score = (-count, t_meet, ci)
                    if best is None or score < best[0]:
                        best = (score, Si, Sj, cand, t_meet)
                if Sj == 0:
                    break
                Sj = (Sj - 1) & comp
    if best is None:
        return _fallback_plan(inst)
    _, Si, Sj, cand, t_meet = best
    covered = frozenset(k for k in range(n_f) if (Si | Sj) & (1 << k))
    # reconstruct simple stop lists (order recovery is not needed by callers
    # of the oracle; coverage and timing are what gets compared)
    stops_i = [RouteStop("frontier", inst.frontiers[k], frontier=k) for k in range(n_f) if Si & (1 << k)]
    stops_i += [RouteStop("commitment", c.point, c.time) for c in inst.commitments_i]
    stops_i.append(RouteStop("meeting", cand, t_meet))
    stops_j = [RouteStop("frontier", inst.frontiers[k], frontier=k) for k in range(n_f) if Sj & (1 << k)]
    stops_j += [RouteStop("commitment", c.point, c.time) for c in inst.commitments_j]
    stops_j.append(RouteStop("meeting", cand, t_meet))
    return PairPlanResult(stops_i, stops_j, cand, t_meet, covered)


def solve_pair(inst: PairPlanInstance, method: str = "greedy") -> PairPlanResult:
    if method == "greedy":
        return solve_pair_greedy(inst)
    if method == "exact":
        return solve_pair_exact(inst)
    raise ContractViolation(f"unknown pair-routing method {method!r}")


# -- return scheduling -------------------------------------------------------


def needs_return(tt_home_i: float, tt_home_j: float, window_at_meeting: float) -> bool:
    """True when neither robot can reach the operator inside the window."""
    return min(tt_home_i, tt_home_j) > window_at_meeting + EPS
