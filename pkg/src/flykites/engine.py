"""Time-stepped fleet simulation: exploration with periodic operator returns,
assistance-task lifecycle, communication-chain formation and release, and
deterministic JSONL trace emission.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from . import relay as relaymod
from . import spread as spreadmod
from .comms import CommModel, chain_connected, is_link
from .config import SimConfig
from .errors import ContractViolation, InfeasibleTaskError, UnreachableError
from .grid import FREE, UNKNOWN, OccupancyGrid, merge_into
from .scenarios import Scenario, load_scenario, spawn_cells
from .spread import Commitment, PairPlanInstance, RingTopology
from .tracefmt import SCHEMA_VERSION, TraceWriter
from .worldmap import distance_field, field_at, find_frontiers, line_of_sight, reveal, shortest_path

OP = "h"  # operator agent id in adjacency sets and chains

SPREAD = "spread"
TO_RELAY = "to_relay"
RELAY = "relay"
TO_SPREAD = "to_spread"

EPS = 1e-9
ARRIVE_TOL = 0.05  # metres; paths end exactly on cell centers
STATION_TOL = 0.2  # how close a relay must hold its post

_MODE_CODE = {SPREAD: "S", TO_RELAY: "T", RELAY: "A", TO_SPREAD: "U"}


def _akey(agent):
    """Stable sort key over mixed robot ids and the operator id."""
    return (1, 0) if agent == OP else (0, agent)


def _edge(a, b):
    return tuple(sorted((a, b), key=_akey))


def _dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass
class Event:
    eid: int
    kind: str  # "meet" | "return"
    a: object
    b: object
    point: tuple
    time: float
    status: str = "planned"  # planned | done | cancelled
    note: str = ""
    born: float = 0.0

    def other(self, agent):
        return self.b if agent == self.a else self.a


@dataclass
class Stop:
    kind: str  # frontier | meet | return | goto
    point: tuple
    event: int | None = None
    task: str | None = None
    probed: float = -1e9  # when a waiting-time side trip was last considered


@dataclass
class Order:
    oid: int
    rid: int
    task: str
    role: str  # relay | end
    target: tuple
    created: float
    anchor_index: int = -1
    delivered: bool = False


@dataclass
class TaskRec:
    tid: str
    pos: tuple
    priority: int
    duration: float
    state: str = "hidden"
    discoverer: int | None = None
    end_robot: int | None = None
    messenger: int | None = None
    t_disc: float | None = None
    t_known: float | None = None
    t_accept: float | None = None
    t_decided: float | None = None
    t_formed: float | None = None
    t_done: float | None = None
    t_restored: float | None = None
    elapsed: float = 0.0

    def stage_durations(self):
        out = {}
        pairs = (("T1", self.t_disc, self.t_known), ("T2", self.t_known, self.t_decided),
                 ("T3", self.t_decided, self.t_formed), ("T4", self.t_formed, self.t_done),
                 ("T5", self.t_done, self.t_restored))
        for name, a, b in pairs:
            if a is not None and b is not None:
                out[name] = b - a
        return out


@dataclass
class ChainOp:
    task: str
    robots: list  # task side first: [end robot, relay@anchor0, ...]
    anchors: list
    op_target: tuple
    formed: bool = False
    release_requested: bool = False


class Belief:
    """What one agent knows beyond its own map."""

    def __init__(self):
        self.tasks = {}  # tid -> discovery time
        self.stamps = {}  # rid -> last return time
        self.orders = set()  # order ids known
        self.op_pos = None
        self.op_pos_t = -1.0


class RobotState:
    def __init__(self, rid, pose, local):
        self.rid = rid
        self.pose = pose
        self.mode = SPREAD
        self.local = local
        self.belief = Belief()
        self.agenda = []  # list of Stop
        self.path = None  # remaining waypoints to the current stop
        self.path_goal = None  # cell the path was planned to
        self.last_cell = None
        self.order = None  # own undeparted order id


class OperatorState:
    def __init__(self, pose, m_h):
        self.pose = pose
        self.map = m_h
        self.belief = Belief()
        self.target = None
        self.path = None
        self.path_goal = None


@dataclass
class Metrics:
    scenario: str = ""
    baseline: str = ""
    seed: int = 0
    robots: int = 0
    complete: bool = False
    finish_s: float = 0.0
    explore_s: float = 0.0
    explored_m2: float = 0.0
    coverage: float = 0.0
    tasks_discovered: int = 0
    tasks_done: int = 0
    tasks_infeasible: int = 0
    completion_pct: float = 0.0
    avg_latency_s: float = 0.0
    max_latency_s: float = 0.0
    faults: int = 0
    stage_means: dict = field(default_factory=dict)
    handoffs: list = field(default_factory=list)
    releases: list = field(default_factory=list)
    returns: list = field(default_factory=list)

    def row(self):
        out = {
            "scenario": self.scenario, "baseline": self.baseline, "seed": self.seed,
            "robots": self.robots, "complete": int(self.complete),
            "finish_s": round(self.finish_s, 1), "explore_s": round(self.explore_s, 1),
            "completion_pct": round(self.completion_pct, 1),
            "avg_latency_s": round(self.avg_latency_s, 1),
            "max_latency_s": round(self.max_latency_s, 1),
            "explored_m2": round(self.explored_m2, 1),
            "faults": self.faults,
        }
        for k in ("T1", "T2", "T3", "T4", "T5"):
            out[k.lower() + "_s"] = round(self.stage_means.get(k, 0.0), 1)
        return out


class Engine:
    """Owns the world state and advances it deterministically step by step."""

    def __init__(self, cfg: SimConfig, scenario: Scenario | None = None,
                 trace_path=None):
        self.cfg = cfg
        self.scn = scenario or load_scenario(cfg.scenario)
        self.truth = self.scn.truth
        self.model = CommModel(cfg.comm_range, cfg.comm_threshold, cfg.comm_model)
        self.rng = random.Random(cfg.seed)
        self.dt = cfg.dt
        self.step_i = 0
        self.t = 0.0

        b = cfg.baseline
        self.use_chains = b != "op-dm"
        self.allow_handoff = b != "no-dt"
        self.sep_gate = b == "sep"
        self.op_mode = "stay" if b == "op-sta" else cfg.operator_mode

        self.trace = TraceWriter(trace_path)
        self.events = {}
        self.pending = {}  # planned events only, eid -> Event
        self.next_eid = 1
        self.orders = {}
        self.next_oid = 1
        self.chain = None
        self.tasks = {
            ts.id: TaskRec(ts.id, self._free_center(ts.pos), ts.priority, ts.duration)
            for ts in self.scn.tasks
        }
        self.accept_timers = []  # (time, tid)
        self.faults = 0
        self.return_times = []
        self.command_queue = []
        self.command_log = []
        self.prev_adj = set()
        self.edge_cooldown = {}
        self._edge_talk = {}
        self._fields = {}
        self._release_sets = {}  # task id -> robots still rejoining the ring
        self._release_seed = {}  # task id -> last time a pickup meeting was planned
        self.metrics = Metrics(self.scn.name, b, cfg.seed, cfg.robots)
        self._explore_done_t = None
        self.finished = False
        self.complete = False

        self._reachable_free = np.isfinite(distance_field(self.truth, self.scn.operator_start)) \
            & (self.truth.cells == FREE)
        self._reachable_total = int(self._reachable_free.sum())

        self._spawn()
        self._bootstrap_events()
        self.time_cap = cfg.time_cap or self.scn.time_cap_hint or self._default_cap()

    # -- setup -------------------------------------------------------------

    def _free_center(self, p):
        return self.truth.cell_center(*self.truth.world_to_cell(p))

    def _default_cap(self):
        area = self.truth.free_count() * self.truth.resolution ** 2
        return max(600.0, 6.0 * area / (self.cfg.v_robot * self.cfg.sensor_range))

    def _spawn(self):
        cells = spawn_cells(self.scn, max(self.cfg.robots * 3, self.cfg.robots + 2))
        picks = sorted(self.rng.sample(range(len(cells)), self.cfg.robots))
        blank = OccupancyGrid.blank(self.truth.width, self.truth.height,
                                    self.truth.resolution, self.truth.origin)
        self.robots = {}
        for i, ci in enumerate(picks):
            pose = self.truth.cell_center(*cells[ci])
            r = RobotState(i, pose, blank.copy())
            r.belief.op_pos = self._free_center(self.scn.operator_start)
            r.belief.op_pos_t = 0.0
            r.belief.stamps = {j: 0.0 for j in range(self.cfg.robots)}
            self.robots[i] = r
        self.op = OperatorState(self._free_center(self.scn.operator_start), blank.copy())
        self.op.belief.op_pos = self.op.pose
        self.op.belief.op_pos_t = 0.0
        self.op.belief.stamps = {j: 0.0 for j in range(self.cfg.robots)}
        self.ring = RingTopology.from_order(sorted(self.robots))
        for r in self.robots.values():
            self._reveal(r)
        self._emit_config()
        self._emit_ring()

    def _bootstrap_events(self):
        """Initial pairwise meetings at the start pose, staggered by edge index."""
        ids = sorted(self.robots)
        if len(ids) < 2:
            return
        stagger = 2.0 + self.rng.uniform(0.0, 2.0)
        point = self._free_center(self.scn.operator_start)
        seen = set()
        cur = ids[0]
        k = 0
        for _ in range(len(ids)):
            nxt = self.ring.succ[cur]
            e = _edge(cur, nxt)
            if e not in seen and cur != nxt:
                seen.add(e)
                self._new_event("meet", cur, nxt, point, (k + 1) * stagger, note="boot")
                k += 1
            cur = nxt
        for r in self.robots.values():
            r.agenda = [Stop(ev.kind, ev.point, event=ev.eid)
                        for ev in self._pending_of(r.rid)]

    def _emit_config(self):
        self.trace.emit({
            "k": "cfg", "t": 0.0, "v": SCHEMA_VERSION,
            "scenario": self.scn.name, "seed": self.cfg.seed,
            "baseline": self.cfg.baseline, "robots": self.cfg.robots,
            "dt": self.dt, "v_robot": self.cfg.v_robot, "v_operator": self.cfg.v_operator,
            "sensor_range": self.cfg.sensor_range, "comm_range": self.cfg.comm_range,
            "comm_model": self.cfg.comm_model, "comm_threshold": self.cfg.comm_threshold,
            "T_h": self.cfg.T_h, "operator_mode": self.op_mode,
            "coverage_goal": self.cfg.coverage_goal,
            "op": list(self.op.pose),
            "tasks": [{"id": k, "pos": list(v.pos), "prio": v.priority, "dur": v.duration}
                      for k, v in sorted(self.tasks.items())],
            "map": self.truth.to_ascii(),
        })

    # -- small helpers -----------------------------------------------------

    def _emit(self, record):
        record["t"] = self.t
        self.trace.emit(record)

    def _emit_ring(self):
        order = []
        members = self.ring.members()
        if members:
            cur = min(members)
            for _ in range(len(members)):
                order.append(cur)
                cur = self.ring.succ[cur]
        self._emit({"k": "ring", "order": order})
        if not self.ring.is_single_cycle():
            raise ContractViolation("ring topology is not a single cycle")

    def _new_event(self, kind, a, b, point, time, note=""):
        ev = Event(self.next_eid, kind, a, b, self._free_center(point), time,
                   note=note, born=self.t)
        self.next_eid += 1
        self.events[ev.eid] = ev
        self.pending[ev.eid] = ev
        self._emit({"k": "plan", "eid": ev.eid, "kind": kind,
                    "pair": [a, b], "p": list(ev.point), "te": time, "note": note})
        return ev

    def _close_event(self, ev, status):
        ev.status = status
        self.pending.pop(ev.eid, None)

    def _pending_of(self, rid):
        out = [ev for ev in self.pending.values() if rid in (ev.a, ev.b)]
        out.sort(key=lambda e: (e.time, e.eid))
        return out

    def _travel(self, a, b):
        """Geodesic travel time on the truth map at robot speed."""
        key = self.truth.world_to_cell(a)
        if key not in self._fields:
            self._fields[key] = distance_field(self.truth, self.truth.cell_center(*key))
        d = field_at(self._fields[key], self.truth, b)
        return d / self.cfg.v_robot

    def _reveal(self, r):
        changed = reveal(r.local, self.truth, r.pose, self.cfg.sensor_range)
        r.last_cell = self.truth.world_to_cell(r.pose)
        return changed

    def _window(self, stamps, t):
        return self.cfg.T_h - t + max(stamps.values())

    # -- main loop ---------------------------------------------------------

    def run(self):
        while not self.finished:
            self.step()
        return self.metrics

    def step(self):
        if self.finished:
            return
        self.step_i += 1
        self.t = round(self.step_i * self.dt, 6)
        self._drain_commands()
        self._advance_operator()
        for rid in sorted(self.robots):
            self._advance_robot(self.robots[rid])
        self._emit_state()
        self._discover_tasks()
        self._adjacency_pass()
        self._consummations()
        self._fire_accept_timers()
        self._departures()
        self._order_timeouts()
        self._formation_check()
        self._execution_tick()
        if self.chain is not None and self.chain.release_requested:
            self._try_release()
        self._sweep()
        self._latency_watchdog()
        self._idle_policies()
        if self.step_i % 50 == 0:
            self._emit_coverage()
            self._check_conservation()
        self._check_done()

    def _check_conservation(self):
        spread_ids = {rid for rid, r in self.robots.items() if r.mode == SPREAD}
        if spread_ids != self.ring.members():
            raise ContractViolation(
                f"ring members {sorted(self.ring.members())} != spread robots "
                f"{sorted(spread_ids)} at t={self.t}")

    # -- movement ----------------------------------------------------------

    def _route_to(self, grid, src, dst):
        """Free-cell route; falls back to treating unknown as traversable."""
        try:
            return shortest_path(grid, src, dst).waypoints
        except (UnreachableError, ContractViolation):
            pass
        optimistic = grid.copy()
        optimistic.cells[optimistic.cells == UNKNOWN] = FREE
        try:
            return shortest_path(optimistic, src, dst).waypoints
        except (UnreachableError, ContractViolation):
            return None

    def _stop_target(self, r, stop):
        if stop.kind == "return":
            return self._free_center(self._return_target(r))
        return stop.point

    def _return_target(self, r):
        believed = r.belief.op_pos or self.op.pose
        # close to the believed spot but the operator moved: the robot can see
        # nobody is here, so adopt the true position and keep chasing (a bare
        # one-shot redirect flip-flops once the robot walks 2 m away again)
        if _dist(r.pose, believed) < 2.0 and _dist(believed, self.op.pose) > 1.0:
            r.belief.op_pos = self.op.pose
            r.belief.op_pos_t = self.t
            believed = r.belief.op_pos
        return believed

    def _advance_robot(self, r):
        self._trim_agenda(r)
        if not r.agenda:
            return
        stop = r.agenda[0]
        if stop.kind == "frontier" and self._frontier_reached(r, stop):
            r.agenda.pop(0)
            r.path = None
            self._trim_agenda(r)
            if not r.agenda:
                return
            stop = r.agenda[0]
        if stop.kind == "meet" and stop.event is not None \
                and r.mode in (SPREAD, TO_SPREAD) \
                and self.t - stop.probed >= self.cfg.hold_time \
                and r.path is not None and not r.path:
            # waiting at a rendezvous with time to spare: poke a frontier
            stop.probed = self.t
            side = self._side_frontier(r, stop)
            if side is not None:
                r.agenda.insert(0, Stop("frontier", side))
                r.path = None
                stop = r.agenda[0]
        target = self._stop_target(r, stop)
        goal_cell = self.truth.world_to_cell(target)
        if r.path is None or r.path_goal != goal_cell:
            r.path = self._route_to(r.local, r.pose, target)
            r.path_goal = goal_cell
            if r.path is None:
                self._emit({"k": "fault", "why": "unreachable", "r": r.rid,
                            "stop": stop.kind})
                self.faults += 1
                r.agenda.pop(0)
                return
        moved = self._follow(r, r.path, self.cfg.v_robot * self.dt, r.local)
        if moved and self.truth.world_to_cell(r.pose) != r.last_cell:
            changed = self._reveal(r)
            if changed and r.path:
                nxt = r.path[0]
                if not r.local.is_free_at(nxt) and r.local.value_at(nxt) != UNKNOWN:
                    r.path = None  # replan around a newly seen obstacle
        if r.path is not None and not r.path:
            # arrived at the stop location; meet/return stops wait in place
            if stop.kind == "frontier":
                r.agenda.pop(0)
                r.path = None
            elif stop.kind == "goto":
                r.agenda.pop(0)
                r.path = None
                if r.mode == TO_RELAY and not r.agenda:
                    r.mode = RELAY

    def _side_frontier(self, r, stop):
        """Nearest frontier whose round trip fits before the stop's event."""
        ev = self.events[stop.event]
        margin = self.cfg.hold_time + 2.0
        slack = ev.time - self.t - margin
        if slack <= 2.0:
            return None
        best = None
        for c in find_frontiers(r.local, self.cfg.min_frontier_size):
            q = spreadmod._nearest_free_point(r.local, c.centroid)
            if q is None:
                continue
            cost = self._travel(r.pose, q) + self._travel(q, stop.point)
            if cost <= slack and (best is None or cost < best[0]):
                best = (cost, q)
        return best[1] if best else None

    def _follow(self, agent, path, budget, known=None):
        """Advance along the waypoint list by exactly `budget` metres.

        With a `known` map the agent refuses to enter cells it has not seen
        to be free; it observes the blocking cell at close range instead and
        leaves the path empty-handed so the caller replans."""
        if not path:
            return False
        pose = agent.pose
        moved = False
        while budget > EPS and path:
            nxt = path[0]
            d = _dist(pose, nxt)
            if d <= budget + EPS:
                cand, consumed = nxt, d
            else:
                f = budget / d
                cand = (pose[0] + (nxt[0] - pose[0]) * f,
                        pose[1] + (nxt[1] - pose[1]) * f)
                consumed = budget
            if known is not None:
                cell = known.world_to_cell(cand)
                if cell != known.world_to_cell(pose) and known.at(*cell) != FREE:
                    # close enough to see the cell directly; record it and stop
                    known.cells[cell[1], cell[0]] = self.truth.at(*cell)
                    agent.path = None
                    break
            pose = cand
            budget -= consumed
            if cand == nxt:
                path.pop(0)
            moved = True
        agent.pose = pose
        return moved

    def _trim_agenda(self, r):
        while r.agenda:
            s = r.agenda[0]
            if s.event is not None and self.events[s.event].status != "planned":
                r.agenda.pop(0)
                r.path = None
            else:
                break

    def _frontier_reached(self, r, stop):
        if _dist(r.pose, stop.point) <= self.cfg.sensor_range \
                and line_of_sight(self.truth, r.pose, stop.point):
            return True
        v = r.local.value_at(stop.point)
        return v != UNKNOWN and v != FREE  # target turned out to be a wall

    def _advance_operator(self):
        o = self.op
        if o.target is None:
            return  # hold position; robots chase the live pose when reporting
        if _dist(o.pose, o.target) <= ARRIVE_TOL:
            # land exactly on the waypoint; links planned at full comm range
            # must not die to a sub-step shortfall
            o.pose = o.target
            o.target = None
            o.path = None
            return
        goal_cell = self.truth.world_to_cell(o.target)
        if o.path is None or o.path_goal != goal_cell:
            o.path = self._route_to(o.map, o.pose, o.target)
            o.path_goal = goal_cell
            if o.path is None:
                return  # wait for the map to grow
        self._follow(o, o.path, self.cfg.v_operator * self.dt, o.map)

    def _emit_state(self):
        rows = []
        for rid in sorted(self.robots):
            r = self.robots[rid]
            m = _MODE_CODE[r.mode]
            if m == "S" and r.agenda and r.agenda[0].kind == "return":
                m = "R"
            rows.append([rid, r.pose[0], r.pose[1], m])
        self._emit({"k": "state", "r": rows, "op": list(self.op.pose)})

    # -- sensing and discovery ---------------------------------------------

    def _discover_tasks(self):
        for tid in sorted(self.tasks):
            task = self.tasks[tid]
            if task.state != "hidden":
                continue
            for rid in sorted(self.robots):
                r = self.robots[rid]
                # a sighting counts once the spot is actually on the robot's
                # map, so whoever reports it can also hand over the geometry
                if _dist(r.pose, task.pos) <= self.cfg.sensor_range \
                        and r.local.is_free_at(task.pos):
                    task.state = "discovered"
                    task.discoverer = rid
                    task.t_disc = self.t
                    r.belief.tasks[tid] = self.t
                    self._emit({"k": "disc", "task": tid, "r": rid})
                    self._urgent_return(r)
                    break

    # -- adjacency, exchanges, meetings ------------------------------------

    def _poses(self):
        poses = {rid: r.pose for rid, r in self.robots.items()}
        poses[OP] = self.op.pose
        return poses

    def _adjacency_pass(self):
        poses = self._poses()
        ids = sorted(poses, key=_akey)
        adj = set()
        rng_m = self.model.max_range
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                a, b = ids[i], ids[j]
                if _dist(poses[a], poses[b]) <= rng_m \
                        and is_link(self.model, poses[a], poses[b], self.truth):
                    adj.add(_edge(a, b))
        new_edges = sorted(adj - self.prev_adj, key=lambda e: (_akey(e[0]), _akey(e[1])))
        self.prev_adj = adj
        for a, b in new_edges:
            if b == OP:
                self._op_contact(a)
            else:
                self._exchange(a, b)
                self._emit({"k": "spont", "pair": [a, b]})
        # agents that stay in range keep talking: refresh data periodically
        # instead of only on link appearance, so a standing chain carries news
        # (an unreported discovery, an order) all the way home hop by hop
        for e in new_edges:
            self._edge_talk[e] = self.t
        for a, b in sorted(adj, key=lambda e: (_akey(e[0]), _akey(e[1]))):
            if (a, b) in new_edges:
                continue
            if b == OP:
                if self.t - self.op.belief.stamps.get(a, 0.0) >= 1.0 - EPS:
                    self._op_contact(a)
            elif self.t - self._edge_talk.get((a, b), -math.inf) >= 1.0 - EPS:
                self._edge_talk[(a, b)] = self.t
                self._exchange(a, b)

    def _op_component(self):
        """Agent ids currently linked to the operator, through any hops."""
        nbrs = {}
        for a, b in self.prev_adj:
            nbrs.setdefault(a, set()).add(b)
            nbrs.setdefault(b, set()).add(a)
        seen, stack = {OP}, [OP]
        while stack:
            for nxt in sorted(nbrs.get(stack.pop(), ()), key=_akey):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def _belief_pair(self, aid):
        if aid == OP:
            return self.op.map, self.op.belief
        r = self.robots[aid]
        return r.local, r.belief

    def _exchange(self, aid, bid):
        """Instant lossless data exchange between two adjacent agents."""
        map_a, bel_a = self._belief_pair(aid)
        map_b, bel_b = self._belief_pair(bid)
        merge_into(map_a, map_b)
        map_b.cells[:] = map_a.cells
        all_tasks = sorted(set(bel_a.tasks) | set(bel_b.tasks))
        for tid in all_tasks:
            td = min(bel_a.tasks.get(tid, math.inf), bel_b.tasks.get(tid, math.inf))
            bel_a.tasks[tid] = td
            bel_b.tasks[tid] = td
        if OP in (aid, bid):
            other = aid if bid == OP else bid
            for tid in all_tasks:
                self._op_learn_task(tid, other)
        merged = dict(bel_a.stamps)
        for k, v in bel_b.stamps.items():
            merged[k] = max(merged.get(k, -math.inf), v)
        bel_a.stamps = dict(merged)
        bel_b.stamps = dict(merged)
        union_orders = bel_a.orders | bel_b.orders
        bel_a.orders = set(union_orders)
        bel_b.orders = set(union_orders)
        for oid in sorted(union_orders):
            o = self.orders[oid]
            if not o.delivered and o.rid in (aid, bid):
                o.delivered = True
                self._emit({"k": "order", "oid": oid, "r": o.rid, "event": "delivered"})
        if bel_a.op_pos_t >= bel_b.op_pos_t:
            bel_b.op_pos, bel_b.op_pos_t = bel_a.op_pos, bel_a.op_pos_t
        else:
            bel_a.op_pos, bel_a.op_pos_t = bel_b.op_pos, bel_b.op_pos_t

    def _op_learn_task(self, tid, messenger):
        task = self.tasks[tid]
        if task.state != "discovered":
            return
        task.state = "at_operator"
        task.t_known = self.t
        task.messenger = messenger
        self._emit({"k": "task", "task": tid, "state": "at_operator", "via": messenger})
        if self.op_mode != "interactive":
            self.accept_timers.append((self.t + self.cfg.interaction_delay, tid))

    def _op_contact(self, rid):
        """A robot reached the operator: merge data, record the return, decide."""
        r = self.robots[rid]
        self.op.belief.op_pos = self.op.pose
        self.op.belief.op_pos_t = self.t
        r.belief.stamps[rid] = self.t
        self.op.belief.stamps[rid] = self.t
        self._exchange(rid, OP)
        self.return_times.append(self.t)
        self._emit({"k": "return", "r": rid})
        for ev in self._pending_of(rid):
            if ev.kind == "return":
                self._close_event(ev, "done")
                self._emit({"k": "meet", "eid": ev.eid, "pair": [ev.a, ev.b]})
        self._trim_agenda(r)
        if r.mode == TO_SPREAD:
            self._rejoin_ring(rid, after=None)
        if self.chain is not None and self.chain.release_requested:
            self._try_release()
        self._try_decide()

    def _consummations(self):
        for eid in sorted(self.pending):
            ev = self.pending.get(eid)
            if ev is None:
                continue
            if ev.kind == "return":
                rid = ev.a
                r = self.robots[rid]
                if r.agenda and r.agenda[0].event == ev.eid \
                        and is_link(self.model, r.pose, self.op.pose, self.truth):
                    self._op_contact(rid)  # closes the event
                elif self.t > ev.time + 3.0 * self.cfg.meeting_slack:
                    self._fault_event(ev)
                continue
            a, b = ev.a, ev.b
            ra, rb = self.robots[a], self.robots[b]
            cur_a = ra.agenda and ra.agenda[0].event == ev.eid
            cur_b = rb.agenda and rb.agenda[0].event == ev.eid
            linked = _dist(ra.pose, ev.point) <= self.model.max_range \
                and _dist(rb.pose, ev.point) <= self.model.max_range \
                and is_link(self.model, ra.pose, rb.pose, self.truth)
            # the planned time is a deadline, not an appointment: a pair that
            # shows up early gets on with it; a pair stuck waiting side by
            # side takes a queued meeting out of order rather than idling.
            # both robots must have finished walking, or a freshly planned
            # meeting fires the instant the pair is still standing together
            # and the resulting replan loop pins the whole fleet in place
            idle_a = ra.path is not None and not ra.path
            idle_b = rb.path is not None and not rb.path
            on_time = self.t >= ev.time - EPS
            ripe = self.t - ev.born >= self.cfg.hold_time
            if linked and ((cur_a and cur_b and (on_time or (idle_a and idle_b and ripe)))
                           or (idle_a and idle_b and ripe)):
                self._consummate_meeting(ev)
            elif self.t > ev.time + self.cfg.meeting_slack:
                self._fault_event(ev)

    def _fault_event(self, ev):
        self._close_event(ev, "cancelled")
        self.faults += 1
        self._emit({"k": "fault", "why": "missed_event", "eid": ev.eid,
                    "pair": [ev.a, ev.b]})
        self.edge_cooldown[_edge(ev.a, ev.b)] = self.t + self.cfg.T_h / 2.0

    def _consummate_meeting(self, ev):
        a, b = ev.a, ev.b
        self._close_event(ev, "done")
        self._emit({"k": "meet", "eid": ev.eid, "pair": [a, b]})
        ra, rb = self.robots[a], self.robots[b]
        for r in (ra, rb):
            if r.agenda and r.agenda[0].event == ev.eid:
                r.agenda.pop(0)
            else:  # taken out of order
                r.agenda = [s for s in r.agenda if s.event != ev.eid]
        ra.path = rb.path = None
        self._exchange(a, b)
        # a returning robot splices back into the ring at its chain meeting
        for rid, other in ((a, b), (b, a)):
            if self.robots[rid].mode == TO_SPREAD:
                self._rejoin_ring(rid, after=other)
        if ra.mode == SPREAD and rb.mode == SPREAD \
                and (self.ring.succ.get(a) == b or self.ring.succ.get(b) == a):
            self._plan_pair(a, b, ev.point)
        self._trim_agenda(ra)
        self._trim_agenda(rb)

    def _rejoin_ring(self, rid, after):
        r = self.robots[rid]
        members = self.ring.members()
        if not members:
            self.ring = RingTopology.from_order([rid])
        elif after is not None and after in members:
            self.ring.insert_after(after, rid)
        else:
            self.ring.insert_after(min(members), rid)
        r.mode = SPREAD
        r.order = None
        self._emit_ring()
        for task in self.tasks.values():
            if task.t_done is not None and task.t_restored is None \
                    and task.tid in self._release_sets:
                left = {x for x in self._release_sets[task.tid]
                        if self.robots[x].mode != SPREAD}
                self._release_sets[task.tid] = left
                if not left:
                    task.t_restored = self.t
                    self._emit({"k": "stage", "task": task.tid, "stage": "T5",
                                "dur": task.t_restored - task.t_done})

    # -- pair planning -----------------------------------------------------

    def _plan_pair(self, a, b, point):
        ra, rb = self.robots[a], self.robots[b]
        local = ra.local  # identical to rb.local after the exchange
        clusters = find_frontiers(local, self.cfg.min_frontier_size)
        clusters.sort(key=lambda c: _dist(c.centroid, point))
        frontiers = []
        seen_cells = set()
        for c in clusters:
            # centroids can land on walls or unknown space; plan to the nearest
            # traversable cell instead
            q = spreadmod._nearest_free_point(local, c.centroid)
            if q is None:
                continue
            cell = local.world_to_cell(q)
            if cell not in seen_cells:
                seen_cells.add(cell)
                frontiers.append(q)
            if len(frontiers) == 6:
                break
        stamps = dict(ra.belief.stamps)
        op_pos = ra.belief.op_pos or self.op.pose

        def commitments_for(rid):
            return [Commitment(e.time, e.point) for e in self._pending_of(rid)
                    if e.time > self.t]

        start = self._free_center(point)
        # judge frontier reachability optimistically: a frontier seen across a
        # gap of unknown cells is still worth walking toward
        opt = local.copy()
        opt.cells[opt.cells == UNKNOWN] = FREE
        fr_times = spreadmod._TravelTimes(opt, self.cfg.v_robot)
        reach = [(fr_times(start, f), f) for f in frontiers]
        frontiers = [f for tt, f in reach if tt < float("inf")]
        return_done = False
        for _ in range(2):
            cs_a = commitments_for(a)
            cs_b = commitments_for(b)
            # keep at least one full period of planning horizon: returns are
            # appended afterwards when the window cannot absorb the trip home
            window = max(self._window(stamps, self.t), self.cfg.T_h)
            if frontiers:
                # frontiers deeper than one period would otherwise never be
                # visited; stretch the horizon so the nearest one stays in play
                # even after every commitment already on the books
                nearest = min(tt for tt, f in reach if tt < float("inf"))
                busy = max([c.time - self.t for c in cs_a + cs_b], default=0.0)
                window = max(window, busy + nearest + self.cfg.hold_time
                             + self.cfg.meeting_slack)
            inst = PairPlanInstance(
                grid=local, start=start, now=self.t,
                deadline=self.t + window, v_max=self.cfg.v_robot,
                frontiers=frontiers, commitments_i=cs_a, commitments_j=cs_b,
                hold_time=self.cfg.hold_time,
            )
            res = spreadmod.solve_pair(inst, self.cfg.c2vrp)
            if (res.fallback or not res.covered) and frontiers:
                # planner gave up (commitments too tight); force the rendezvous
                # onto the nearest frontier so the pair still gains ground
                tt, target = min(((tt, f) for tt, f in reach if tt < float("inf")),
                                 key=lambda x: x[0])
                busy = max([c.time - self.t for c in cs_a + cs_b], default=0.0)
                tm = self.t + busy + tt + self.cfg.hold_time
                ev = self._new_event("meet", a, b, self._free_center(target), tm,
                                     note="push")
                for rid, cs in ((a, cs_a), (b, cs_b)):
                    stops = [s for s in (self._stop_for(rid, c) for c in cs) if s]
                    stops.append(Stop("meet", ev.point, event=ev.eid))
                    self.robots[rid].agenda = stops
                    self.robots[rid].path = None
            elif res.fallback or not frontiers:
                # nothing (more) worth exploring: meet again near the operator
                home = self._free_center(op_pos)
                tm = self.t + max(self.cfg.hold_time, self._travel(point, home) + 2.0)
                ev = self._new_event("meet", a, b, home, tm,
                                     note="hold" if res.fallback else "home")
                for rid, cs in ((a, cs_a), (b, cs_b)):
                    stops = [s for s in (self._stop_for(rid, c) for c in cs) if s]
                    stops.append(Stop("meet", ev.point, event=ev.eid))
                    self.robots[rid].agenda = stops
                    self.robots[rid].path = None
            else:
                ev = self._new_event("meet", a, b, res.meeting_point, res.meeting_time)
                self._apply_route(a, res.route_i, ev)
                self._apply_route(b, res.route_j, ev)
            if return_done:
                break
            if not self._maybe_schedule_return(a, b, ev, stamps, op_pos):
                break
            return_done = True
            self._close_event(ev, "cancelled")  # replan with the return fixed

    def _stop_for(self, rid, commitment):
        for e in self._pending_of(rid):
            if abs(e.time - commitment.time) < 1e-6 \
                    and self.truth.world_to_cell(e.point) == self.truth.world_to_cell(commitment.point):
                return Stop(e.kind, e.point, event=e.eid)
        return None

    def _apply_route(self, rid, route, meet_ev):
        r = self.robots[rid]
        agenda = []
        for s in route:
            if s.kind == "frontier":
                agenda.append(Stop("frontier", self._free_center(s.point)))
            elif s.kind == "commitment":
                stop = self._stop_for(rid, Commitment(s.time, s.point))
                if stop:
                    agenda.append(stop)
            else:
                agenda.append(Stop("meet", meet_ev.point, event=meet_ev.eid))
        r.agenda = agenda
        r.path = None

    def _maybe_schedule_return(self, a, b, ev, stamps, op_pos):
        """Returns True when a return was scheduled that requires a replan."""
        for rid in (a, b):
            if any(e.kind == "return" for e in self._pending_of(rid)):
                return False
        window_at = self._window(stamps, ev.time)
        tt_home = self._travel(ev.point, op_pos)
        if not spreadmod.needs_return(tt_home, tt_home, window_at):
            return False
        if self.ring.succ.get(a) == b and self.ring.succ.get(b) == a:
            rid = min((a, b), key=lambda x: (stamps.get(x, 0.0), x))
        elif self.ring.succ.get(a) == b:
            rid = a
        else:
            rid = b
        home = self._free_center(op_pos)
        # slot the trip home into the earliest gap between confirmed events so
        # the robot reports back as soon as its obligations allow; never start
        # the trip after the report window has already lapsed, or a stretched
        # exploration horizon quietly drags the report past its deadline
        expiry = max(stamps.values(), default=0.0) + self.cfg.T_h
        pend = self._pending_of(rid)
        base = None
        for i, e in enumerate(pend):
            if e.time > expiry + EPS:
                break
            tm_try = e.time + self._travel(e.point, home) + 1.0
            if i + 1 == len(pend) \
                    or tm_try + self._travel(home, pend[i + 1].point) <= pend[i + 1].time:
                base = e
                break
        if base is None:
            # every booked event would hold the robot too long: leave for the
            # operator straight from this meeting and replan around the trip
            tm = self.t + self._travel(ev.point, home) + 1.0
            self._new_event("return", rid, OP, home, tm, note="latency")
            return True
        tm = base.time + self._travel(base.point, home) + 1.0
        rev = self._new_event("return", rid, OP, home, tm, note="latency")
        if base.eid == ev.eid:
            # the return follows the meeting being planned right now: keep the
            # plan and just append the trip home after the meeting stop
            self.robots[rid].agenda.append(Stop("return", home, event=rev.eid))
            return False
        return True

    def _latency_watchdog(self):
        """Last line of defence for the report period.

        Scheduled trips can die to meeting faults near the end of a run.  When
        a robot sees that waiting any longer would push even an immediate trip
        past the fleet's report deadline, it stops negotiating and walks.  The
        believed deadline only understates the true one, so this fires late,
        never early."""
        for rid in sorted(self.robots):
            r = self.robots[rid]
            if r.mode != SPREAD:
                continue
            expiry = max(r.belief.stamps.values(), default=0.0) + self.cfg.T_h
            if self.t + self.cfg.hold_time < expiry:
                continue  # arriving tt after expiry still meets the period
            home = self._free_center(r.belief.op_pos or self.op.pose)
            tt = self._travel(r.pose, home)
            if not math.isfinite(tt):
                continue
            pend = [e for e in self._pending_of(rid) if e.kind == "return"]
            best_possible = max(expiry, self.t + tt + 1.0)
            if pend and min(e.time for e in pend) <= best_possible + self.cfg.hold_time:
                continue  # a booked trip is as fast as leaving right now
            for e in pend:
                self._close_event(e, "cancelled")
            rev = self._new_event("return", rid, OP, home,
                                  self.t + tt + 1.0, note="watchdog")
            r.agenda = [s for s in r.agenda if s.event is None
                        or self.events[s.event].status == "planned"]
            r.agenda.insert(0, Stop("return", home, event=rev.eid))
            r.path = None

    def _urgent_return(self, r):
        """A fresh assistance request goes home ahead of the periodic schedule."""
        if r.mode not in (SPREAD, TO_SPREAD):
            return
        rid = r.rid
        home = self._free_center(r.belief.op_pos)
        pend = [e for e in self._pending_of(rid) if e.kind != "return"]
        old = [e for e in self._pending_of(rid) if e.kind == "return"]
        tm_now = self.t + self._travel(r.pose, home) + 1.0
        base = None
        if not pend or tm_now + self._travel(home, pend[0].point) <= pend[0].time:
            tm = tm_now
        else:
            base = pend[-1]
            for i, e in enumerate(pend):
                tm_try = e.time + self._travel(e.point, home) + 1.0
                if i + 1 == len(pend) \
                        or tm_try + self._travel(home, pend[i + 1].point) <= pend[i + 1].time:
                    base = e
                    break
            tm = base.time + self._travel(base.point, home) + 1.0
        if old and old[0].time <= tm + EPS:
            return  # the scheduled trip is already at least as fast
        for e in old:
            self._close_event(e, "cancelled")
        rev = self._new_event("return", rid, OP, home, tm, note="report")
        stop = Stop("return", home, event=rev.eid)
        if base is None:
            # nothing confirmed stands in the way: drop loose stops and go now
            r.agenda = [s for s in r.agenda if s.event is not None
                        and self.events[s.event].status == "planned"]
            r.agenda.insert(0, stop)
        else:
            pos = len(r.agenda)
            for i, s in enumerate(r.agenda):
                if s.event == base.eid:
                    pos = i + 1
                    break
            r.agenda.insert(pos, stop)
        r.path = None

    # -- operator decisions ------------------------------------------------

    def _fire_accept_timers(self):
        due = sorted(x for x in self.accept_timers if x[0] <= self.t)
        self.accept_timers = [x for x in self.accept_timers if x[0] > self.t]
        for _, tid in due:
            task = self.tasks[tid]
            if task.state == "at_operator":
                task.t_accept = self.t
                self._emit({"k": "task", "task": tid, "state": "accepted",
                            "dur": task.duration, "prio": task.priority})
        if due:
            self._try_decide()

    def _exploration_complete(self):
        if self._explore_done_t is not None:
            return True
        known = int((self._reachable_free & (self.op.map.cells != UNKNOWN)).sum())
        if known >= self.cfg.coverage_goal * self._reachable_total \
                and not find_frontiers(self.op.map, self.cfg.min_frontier_size):
            self._explore_done_t = self.t
            return True
        return False

    def _accepted_queue(self):
        out = [t for t in self.tasks.values()
               if t.state == "at_operator" and t.t_accept is not None]
        out.sort(key=lambda t: (-t.priority, t.t_disc, t.tid))
        return out

    def _try_decide(self):
        if self.chain is not None or self.finished:
            return
        if self.sep_gate and not self._exploration_complete():
            return
        for task in self._accepted_queue():
            if self._decide_task(task):
                return

    def _decide_task(self, task, handoff_group=None):
        """Commit topology, assignment and orders for one accepted task."""
        if not self.op.map.is_free_at(task.pos):
            return False  # reported position not on the operator's map yet
        if not self.use_chains:
            return self._decide_direct(task)
        try:
            chain = relaymod.compute_relay_topology(self.op.map, task.pos, self.op.pose,
                                                    self.model, task_id=task.tid)
        except InfeasibleTaskError:
            return False  # operator map not grown enough yet; retry later
        if handoff_group is not None:
            return self._decide_handoff(task, chain, handoff_group)
        end = task.discoverer
        candidates = sorted(self.ring.members() - {end})
        n_avail = len(candidates)
        op_target = self.op.pose
        m_need = max(0, chain.relay_count - n_avail)
        if m_need and self.op_mode == "stay":
            task.state = "infeasible"
            self._emit({"k": "task", "task": task.tid, "state": "infeasible",
                        "relays": chain.relay_count, "avail": n_avail})
            return False
        pool = [self.robots[rid].pose for rid in candidates]
        m = self._absorption_depth(chain, m_need, pool)
        if m:
            op_target, chain = relaymod.plan_operator_relocation(
                chain, chain.relay_count - m + 1, relaymod.REDUCE_RELAYS, m=m)
        L = chain.relay_count
        chosen = self._ring_successors(task.messenger, exclude={end}, count=L) if L else []
        if len(chosen) < L:
            return False
        cand = []
        for rid in chosen:
            evs = self._pending_of(rid)
            if evs:
                cand.append((rid, evs[-1].time, evs[-1].point))
            else:
                cand.append((rid, self.t, self.robots[rid].pose))
        try:
            asn = relaymod.assign_relays(chain.anchors, cand, self.op.map,
                                         self.cfg.v_robot, method=self.cfg.lbap,
                                         task_id=task.tid)
        except InfeasibleTaskError:
            return False
        order_robots = [None] * L
        for anchor_idx, rid, _rel in asn.mapping:
            order_robots[anchor_idx] = rid
            self._make_order(rid, task.tid, "relay", chain.anchors[anchor_idx], anchor_idx)
        self._make_order(end, task.tid, "end", task.pos)
        task.end_robot = end
        self._commit_chain(task, [end] + order_robots, chain.anchors, op_target)
        return True

    def _absorption_depth(self, chain, m_need, pool):
        """Anchor count the operator absorbs at a fresh decision.

        The operator is one more chain member, so its walk gates the
        formation makespan exactly like the robots' walks do.  A deeper
        post costs walk time now but refunds ground to the next report:
        whoever carries the next discovery home covers the gained distance
        at robot speed.  Score each depth by makespan minus that refund
        and take the deepest post within a hold_time of the best."""
        L = chain.relay_count
        if L == 0 or self.op_mode == "stay":
            return m_need
        def op_walk(m):
            dist = self._travel(self.op.pose, chain.anchors[L - m]) * self.cfg.v_robot
            return dist / self.cfg.v_operator
        def robot_span(m):
            span = 0.0
            for a in chain.anchors[: L - m]:
                span = max(span, min(self._travel(p, a) for p in pool))
            return span
        feas = [m for m in range(m_need, L + 1) if L - m <= len(pool)]
        if not feas:
            return m_need
        refund = self.cfg.v_operator / self.cfg.v_robot
        score = {}
        for m in feas:
            walk = op_walk(m) if m else 0.0
            score[m] = max(walk, robot_span(m)) - refund * walk
        lo = min(score.values())
        return max(m for m in feas if score[m] <= lo + self.cfg.hold_time)

    def _relocation_depth(self, chain, m_need, budget=None):
        """How many anchors the operator absorbs by walking along the chain.

        At least the number the fleet cannot staff; beyond that keep walking
        while the trip fits in `budget` seconds (one report period when not
        given), so the operator ends up nearer the work and later chains
        start shorter."""
        L = chain.relay_count
        if L == 0 or self.op_mode == "stay":
            return m_need
        if budget is None:
            budget = self.cfg.T_h
        best = m_need
        for m in range(m_need + 1, L + 1):
            dist = self._travel(self.op.pose, chain.anchors[L - m]) * self.cfg.v_robot
            if dist / self.cfg.v_operator <= budget:
                best = m
            else:
                break
        return best

    def _decide_direct(self, task):
        """No-chain service: the operator walks to the task themselves."""
        end = task.discoverer
        try:
            path = shortest_path(self.op.map, self.op.pose, task.pos)
        except (UnreachableError, ContractViolation):
            return False
        rev = path.waypoints[::-1]
        target = rev[0]
        walked = 0.0
        for p, q in zip(rev, rev[1:]):
            # stand back from the task, but never around a corner: the
            # operator still has to hold the link to the robot at the task
            if walked >= 2.0 or not line_of_sight(self.op.map, q, task.pos):
                break
            walked += _dist(p, q)
            target = q
        self._make_order(end, task.tid, "end", task.pos)
        task.end_robot = end
        self._commit_chain(task, [end], [], target)
        return True

    def _decide_handoff(self, task, chain, group):
        # the discoverer may be parked at the far end of the old chain; any
        # group member knows the reported position, so the closest one goes
        end = min(group, key=lambda rid: (self._travel(self.robots[rid].pose, task.pos),
                                          rid != task.discoverer, rid))
        candidates = [rid for rid in group if rid != end]
        # a longer chain can borrow spread robots, but only ones the operator
        # can brief right now over standing links; anyone out of touch would
        # never hear the order in time
        reachable = self._op_component()
        candidates += [rid for rid in sorted(self.ring.members())
                       if rid in reachable and rid != end and rid not in candidates]
        op_target = self.op.pose
        m_need = max(0, chain.relay_count - len(candidates))
        if m_need and self.op_mode == "stay":
            return False
        # the group is already standing along the old chain, so the new posts
        # are minutes of walking for nobody; absorbing extra anchors is only
        # worth it while the operator keeps up with the robots' own re-forming
        est = self._travel(self.robots[end].pose, task.pos)
        for a in chain.anchors:
            if candidates:
                est = max(est, min(self._travel(self.robots[rid].pose, a)
                                   for rid in candidates))
        m = self._relocation_depth(chain, m_need, budget=est + self.cfg.hold_time)
        if m:
            op_target, chain = relaymod.plan_operator_relocation(
                chain, chain.relay_count - m + 1, relaymod.REDUCE_RELAYS, m=m)
        L = chain.relay_count
        candidates.sort(key=lambda rid: (_dist(self.robots[rid].pose, task.pos), rid))
        chosen, surplus = candidates[:L], candidates[L:]
        cand = [(rid, self.t, self.robots[rid].pose) for rid in chosen]
        try:
            asn = relaymod.assign_relays(chain.anchors, cand, self.op.map,
                                         self.cfg.v_robot, method=self.cfg.lbap,
                                         task_id=task.tid)
        except InfeasibleTaskError:
            return False
        order_robots = [None] * L
        ring_changed = False
        for anchor_idx, rid, _rel in asn.mapping:
            order_robots[anchor_idx] = rid
            r = self.robots[rid]
            if rid in self.ring.members():
                self.ring.remove(rid)
                ring_changed = True
            r.mode = TO_RELAY
            r.order = None
            r.agenda = [Stop("goto", self._free_center(chain.anchors[anchor_idx]),
                             task=task.tid)]
            r.path = None
        if ring_changed:
            self._emit_ring()
        re = self.robots[end]
        re.mode = TO_RELAY
        re.order = None
        re.agenda = [Stop("goto", task.pos, task=task.tid)]
        re.path = None
        task.end_robot = end
        for rid in surplus:
            if rid in group:  # borrowed spread robots just stay in the ring
                self._start_recovery_return(rid)
        self.chain = ChainOp(task.tid, [end] + order_robots, list(chain.anchors),
                             self._free_center(op_target))
        task.state = "assigned"
        task.t_decided = self.t
        self._emit({"k": "task", "task": task.tid, "state": "assigned", "handoff": 1})
        self._emit({"k": "stage", "task": task.tid, "stage": "T2",
                    "dur": task.t_decided - task.t_known})
        if _dist(self.chain.op_target, self.op.pose) > ARRIVE_TOL:
            self.op.target = self.chain.op_target
            self.op.belief.op_pos = self.chain.op_target
            self.op.belief.op_pos_t = self.t
        return True

    def _make_order(self, rid, tid, role, target, anchor_idx=-1):
        o = Order(self.next_oid, rid, tid, role, self._free_center(target),
                  self.t, anchor_idx)
        self.next_oid += 1
        self.orders[o.oid] = o
        self.op.belief.orders.add(o.oid)
        r = self.robots[rid]
        r.order = o.oid
        if rid in self.ring.members():
            self.ring.remove(rid)
        r.mode = TO_RELAY
        self._emit({"k": "order", "oid": o.oid, "r": rid, "task": tid,
                    "role": role, "event": "created"})
        return o

    def _commit_chain(self, task, robots, anchors, op_target):
        self.chain = ChainOp(task.tid, robots, list(anchors), self._free_center(op_target))
        task.state = "assigned"
        task.t_decided = self.t
        self._emit_ring()
        self._emit({"k": "task", "task": task.tid, "state": "assigned"})
        self._emit({"k": "stage", "task": task.tid, "stage": "T2",
                    "dur": task.t_decided - task.t_known})
        if _dist(self.chain.op_target, self.op.pose) > ARRIVE_TOL:
            self.op.target = self.chain.op_target
            self.op.belief.op_pos = self.chain.op_target
            self.op.belief.op_pos_t = self.t
        # hand decision tokens to anyone currently in contact with the operator
        for rid in sorted(self.robots):
            if _edge(rid, OP) in self.prev_adj:
                self._exchange(rid, OP)

    def _ring_successors(self, messenger, exclude, count):
        members = self.ring.members()
        if messenger not in members:
            return sorted(m for m in members if m not in exclude)[:count]
        out = []
        cur = self.ring.succ[messenger]
        for _ in range(len(members)):
            if cur != messenger and cur not in exclude:
                out.append(cur)
                if len(out) == count:
                    break
            cur = self.ring.succ[cur]
        if len(out) < count and messenger not in exclude:
            out.append(messenger)  # the messenger itself can relay when short-handed
        return out

    # -- transition execution ----------------------------------------------

    def _departures(self):
        """TransitToRelay robots leave for their posts once their own order is
        in hand and no pending meeting partner still needs tokens from them."""
        for rid in sorted(self.robots):
            r = self.robots[rid]
            if r.mode != TO_RELAY or r.order is None:
                continue
            o = self.orders[r.order]
            if not o.delivered:
                continue
            keep = []
            for ev in self._pending_of(rid):
                partner = ev.other(rid)
                if partner == OP:
                    self._close_event(ev, "cancelled")
                    continue
                needs = any(self.orders[oid].rid == partner and not self.orders[oid].delivered
                            for oid in r.belief.orders)
                if needs:
                    keep.append(ev)
                else:
                    self._close_event(ev, "cancelled")
            if keep:
                r.agenda = [Stop(e.kind, e.point, event=e.eid) for e in keep]
                continue
            r.agenda = [Stop("goto", o.target, task=o.task)]
            r.path = None
            r.order = None
            self._emit({"k": "depart", "r": rid, "task": o.task, "role": o.role})

    def _order_timeouts(self):
        for oid in sorted(self.orders):
            o = self.orders[oid]
            if not o.delivered and self.t - o.created > self.cfg.T_h:
                o.delivered = True
                self.robots[o.rid].belief.orders.add(oid)
                self._emit({"k": "order", "oid": oid, "r": o.rid, "event": "forced"})

    def _formation_check(self):
        c = self.chain
        if c is None or c.formed:
            return
        task = self.tasks[c.task]
        if task.state != "assigned":
            return
        stations = [task.pos] + c.anchors
        for rid, station in zip(c.robots, stations):
            r = self.robots[rid]
            if r.mode != RELAY or _dist(r.pose, self._free_center(station)) > STATION_TOL:
                return
        if _dist(self.op.pose, c.op_target) > STATION_TOL:
            return
        if not chain_connected(list(c.robots) + [OP], self._poses(), self.truth, self.model):
            return
        c.formed = True
        task.state = "executing"
        task.t_formed = self.t
        task.elapsed = 0.0
        self._emit({"k": "chain", "task": c.task, "robots": list(c.robots),
                    "anchors": [list(a) for a in c.anchors],
                    "op_target": list(c.op_target), "p_k": list(task.pos)})
        self._emit({"k": "exec", "task": c.task})
        self._emit({"k": "stage", "task": c.task, "stage": "T3",
                    "dur": task.t_formed - task.t_decided})

    def _execution_tick(self):
        c = self.chain
        if c is None or not c.formed:
            return
        task = self.tasks[c.task]
        if task.state != "executing":
            return
        end = self.robots[c.robots[0]]
        ok = chain_connected(list(c.robots) + [OP], self._poses(), self.truth, self.model) \
            and _dist(end.pose, task.pos) <= STATION_TOL
        if ok:
            task.elapsed += self.dt
        else:
            if task.elapsed > 0:
                self._emit({"k": "fault", "why": "chain_broken", "task": c.task})
                self.faults += 1
            task.elapsed = 0.0
        if task.elapsed + EPS >= task.duration:
            task.state = "done"
            task.t_done = self.t
            self._emit({"k": "done", "task": c.task, "dur": task.duration})
            self._emit({"k": "stage", "task": c.task, "stage": "T4",
                        "dur": task.t_done - task.t_formed})
            self._after_task()

    def _after_task(self):
        c = self.chain
        group = list(c.robots)
        nxt = None
        if self.allow_handoff and self.use_chains \
                and not (self.sep_gate and not self._exploration_complete()):
            queue = self._accepted_queue()
            nxt = queue[0] if queue else None
        if nxt is not None:
            prev_tid = c.task
            if self._decide_task(nxt, handoff_group=group):
                self.metrics.handoffs.append({"from": prev_tid, "to": nxt.tid,
                                              "t": self.t})
                return
        c.release_requested = True
        self._try_release()

    def _try_release(self):
        c = self.chain
        if c is None or not c.release_requested:
            return
        task = self.tasks[c.task]
        if task.state != "done":
            return
        group = list(c.robots)
        if len(self.ring.members()) < 2:
            # nobody left outside the chain to splice into; meetings will
            # never appear, so send everyone straight home
            self._do_recovery_release(task, group)
            return
        j_events = []
        for rid in sorted(self.ring.members()):
            evs = [e for e in self._pending_of(rid) if e.kind == "meet" and e.time > self.t]
            if evs:
                last = evs[-1]
                j_events.append((last.time, last.point, rid))
        if not j_events:
            if self.t - task.t_done > 2.0 * self.cfg.T_h:
                self._do_recovery_release(task, group)
            else:
                self._seed_release_meeting(task, group)
            return
        positions = [self.robots[rid].pose for rid in group]
        ok, idx = relaymod.check_relay_release(
            self.t, 0.0, positions, [(tm, p) for tm, p, _ in j_events],
            self.truth, self.cfg.v_robot)
        if not ok:
            if self.t - task.t_done > 2.0 * self.cfg.T_h:
                self._do_recovery_release(task, group)
            else:
                self._seed_release_meeting(task, group)
            return
        t1, p1, jstar = j_events[idx]
        later = [e for e in j_events if e[0] > t1 + EPS]
        p_next = later[0][1] if later else self.op.pose
        try:
            path = shortest_path(self.truth, p1, p_next)
        except (UnreachableError, ContractViolation):
            path = shortest_path(self.truth, p1, p1)
        sp = relaymod.plan_splice(path, {rid: self.robots[rid].pose for rid in group},
                                  self.t, 0.0, self.truth, self.cfg.v_robot)
        prev_party, prev_time, prev_point = jstar, t1, p1
        for rid in sp.order:
            pt = sp.points[rid]
            tm = max(sp.arrivals[rid], prev_time + self._travel(prev_point, pt) + self.dt)
            ev = self._new_event("meet", prev_party, rid, pt, tm, note="splice")
            self.robots[prev_party].agenda.append(Stop("meet", ev.point, event=ev.eid))
            r = self.robots[rid]
            r.mode = TO_SPREAD
            r.order = None
            r.agenda = [Stop("meet", ev.point, event=ev.eid)]
            r.path = None
            prev_party, prev_time, prev_point = rid, tm, pt
        self._release_sets[task.tid] = set(group)
        self._emit({"k": "release", "task": task.tid, "jstar": jstar,
                    "order": list(sp.order)})
        self.metrics.releases.append({"task": task.tid, "t": self.t})
        self.chain = None
        self._try_decide()

    def _seed_release_meeting(self, task, group):
        """Plan a ring meeting beside the waiting group instead of idling.

        Released robots hold their anchors until some ring meeting works as a
        splice target; when none of the planned ones fit, waiting for the ring
        to drift by wastes a report period, so bring the nearest edge here."""
        if self.t - self._release_seed.get(task.tid, -1e9) < self.cfg.meeting_slack:
            return
        members = sorted(self.ring.members())
        if len(members) < 2:
            return
        cx = sum(self.robots[rid].pose[0] for rid in group) / len(group)
        cy = sum(self.robots[rid].pose[1] for rid in group) / len(group)
        point = spreadmod._nearest_free_point(self.truth, (cx, cy))

        def _ready(rid):
            evs = self._pending_of(rid)
            return (evs[-1].time, evs[-1].point) if evs else (self.t, self.robots[rid].pose)

        a = min(members, key=lambda rid: _ready(rid)[0] + self._travel(_ready(rid)[1], point))
        b = self.ring.succ[a]
        tm = self.t
        for rid in (a, b):
            at, ap = _ready(rid)
            tm = max(tm, at + self._travel(ap, point))
        tm += self.cfg.meeting_slack
        ev = self._new_event("meet", a, b, point, tm, note="pickup")
        self.robots[a].agenda.append(Stop("meet", ev.point, event=ev.eid))
        self.robots[b].agenda.append(Stop("meet", ev.point, event=ev.eid))
        self._release_seed[task.tid] = self.t

    def _do_recovery_release(self, task, group):
        for rid in group:
            self._start_recovery_return(rid)
        self._release_sets[task.tid] = set(group)
        self._emit({"k": "release", "task": task.tid, "jstar": None,
                    "order": sorted(group)})
        self.metrics.releases.append({"task": task.tid, "t": self.t})
        self.chain = None
        self._try_decide()

    def _start_recovery_return(self, rid):
        r = self.robots[rid]
        r.mode = TO_SPREAD
        r.order = None
        home = self._free_center(self.op.pose)
        tm = self.t + self._travel(r.pose, home) + self.cfg.meeting_slack
        ev = self._new_event("return", rid, OP, home, tm, note="rejoin")
        r.agenda = [Stop("return", ev.point, event=ev.eid)]
        r.path = None

    # -- safety nets -------------------------------------------------------

    def _sweep(self):
        """Seed a rendezvous for any ring edge that has no planned meeting."""
        members = self.ring.members()
        if len(members) < 2:
            return
        pending_pairs = {_edge(e.a, e.b) for e in self.pending.values()
                         if e.kind == "meet"}
        cur = min(members)
        for _ in range(len(members)):
            nxt = self.ring.succ[cur]
            e = _edge(cur, nxt)
            if cur != nxt and e not in pending_pairs \
                    and self.edge_cooldown.get(e, -1.0) <= self.t \
                    and self.robots[e[0]].mode == SPREAD \
                    and self.robots[e[1]].mode == SPREAD:
                self._seed_edge(e[0], e[1])
                pending_pairs.add(e)
            cur = nxt

    def _seed_edge(self, a, b):
        ra, rb = self.robots[a], self.robots[b]
        anchors = []
        for r in (ra, rb):
            evs = self._pending_of(r.rid)
            anchors.append((evs[-1].time, evs[-1].point) if evs else (self.t, r.pose))
        mid = ((anchors[0][1][0] + anchors[1][1][0]) / 2.0,
               (anchors[0][1][1] + anchors[1][1][1]) / 2.0)
        point = spreadmod._nearest_free_point(self.truth, mid)
        tm = self.t
        for at, ap in anchors:
            tm = max(tm, at + self._travel(ap, point))
        tm += self.cfg.meeting_slack
        ev = self._new_event("meet", a, b, point, tm, note="link")
        ra.agenda.append(Stop("meet", ev.point, event=ev.eid))
        rb.agenda.append(Stop("meet", ev.point, event=ev.eid))

    def _idle_policies(self):
        for rid in sorted(self.robots):
            r = self.robots[rid]
            self._trim_agenda(r)
            if r.agenda:
                continue
            if r.mode == TO_SPREAD:
                pend = self._pending_of(rid)
                if pend:
                    r.agenda = [Stop(e.kind, e.point, event=e.eid) for e in pend]
                    r.path = None
                else:
                    self._start_recovery_return(rid)
                continue
            if r.mode != SPREAD:
                continue
            pend = self._pending_of(rid)
            if pend:
                r.agenda = [Stop(e.kind, e.point, event=e.eid) for e in pend]
                r.path = None
                continue
            if len(self.ring.members()) > 1:
                continue  # the sweep seeds a meeting for this edge
            self._solo_policy(r)

    def _solo_policy(self, r):
        """Single spread robot: alternate frontier pushes with timely returns."""
        op_pos = r.belief.op_pos or self.op.pose
        window = self._window(r.belief.stamps, self.t) if r.belief.stamps else 0.0
        home_t = self._travel(r.pose, op_pos)
        clusters = find_frontiers(r.local, self.cfg.min_frontier_size)
        if clusters and window > home_t + 2.0 * self.cfg.meeting_slack:
            target = min(clusters, key=lambda c: _dist(c.centroid, r.pose)).centroid
            r.agenda = [Stop("frontier", self._free_center(target))]
        else:
            home = self._free_center(op_pos)
            tm = self.t + home_t + self.cfg.meeting_slack
            ev = self._new_event("return", r.rid, OP, home, tm, note="solo")
            r.agenda = [Stop("return", ev.point, event=ev.eid)]
        r.path = None

    # -- commands (console bridge) -----------------------------------------

    def queue_command(self, cmd: dict):
        self.command_queue.append(cmd)

    def _drain_commands(self):
        cmds, self.command_queue = self.command_queue, []
        for cmd in cmds:
            self._emit({"k": "cmd", "cmd": cmd})
            self.command_log.append({"t": self.t, "cmd": cmd})
            self._apply_command(cmd)

    def _apply_command(self, cmd):
        kind = cmd.get("kind")
        if kind == "AcceptTask":
            tid = cmd.get("task")
            task = self.tasks.get(tid)
            if task is None or task.state != "at_operator":
                return
            if "T_k" in cmd:
                task.duration = float(cmd["T_k"])
            if "rho" in cmd:
                task.priority = int(cmd["rho"])
            task.t_accept = self.t
            self._emit({"k": "task", "task": tid, "state": "accepted",
                        "dur": task.duration, "prio": task.priority})
            self._try_decide()
        elif kind == "Relocate":
            p = cmd.get("target")
            if p and self.truth.is_free_at(tuple(p)):
                self.op.target = self._free_center(tuple(p))
        elif kind == "Teleop":
            c = self.chain
            if c is None or not c.formed:
                return
            if self.tasks[c.task].state != "executing":
                return
            wp = cmd.get("waypoint")
            if wp and self.truth.is_free_at(tuple(wp)):
                end = self.robots[c.robots[0]]
                end.agenda = [Stop("goto", self._free_center(tuple(wp)), task=c.task)]
                end.path = None
        elif kind == "ReleaseChain":
            c = self.chain
            if c is not None and c.formed and self.tasks[c.task].state == "executing":
                task = self.tasks[c.task]
                task.state = "done"
                task.t_done = self.t
                self._emit({"k": "done", "task": task.tid, "dur": task.elapsed})
                self._after_task()

    # -- bookkeeping -------------------------------------------------------

    def _coverage(self):
        known = int((self._reachable_free & (self.op.map.cells != UNKNOWN)).sum())
        return known / self._reachable_total if self._reachable_total else 1.0

    def _emit_coverage(self):
        cells = self.op.map.known_count()
        self._emit({"k": "cov", "cells": cells,
                    "area": cells * self.truth.resolution ** 2,
                    "frac": self._coverage()})

    def _check_done(self):
        cov = self._coverage()
        tasks_ok = all(t.state in ("done", "infeasible") for t in self.tasks.values())
        if cov >= self.cfg.coverage_goal and self._exploration_complete() and tasks_ok:
            self.complete = True
            self._finish(cov)
        elif self.t >= self.time_cap:
            self.complete = False
            self._finish(cov)

    def _finish(self, cov):
        self.finished = True
        m = self.metrics
        m.complete = self.complete
        m.explore_s = self._explore_done_t if self._explore_done_t is not None else self.t
        m.coverage = cov
        m.explored_m2 = self.op.map.known_count() * self.truth.resolution ** 2
        discovered = [t for t in self.tasks.values() if t.t_disc is not None]
        done = [t for t in discovered if t.state == "done"]
        m.tasks_discovered = len(discovered)
        m.tasks_done = len(done)
        m.tasks_infeasible = sum(1 for t in discovered if t.state == "infeasible")
        m.completion_pct = 100.0 * len(done) / len(discovered) if discovered else 100.0
        # finish time covers the assistance workload: when every discovered task
        # reached a terminal state it is the last completion, otherwise censored
        settled = all(t.state in ("done", "infeasible") for t in discovered)
        if discovered and settled and done:
            m.finish_s = max(t.t_done for t in done)
        else:
            m.finish_s = self.t
        lats = [t.t_done - t.t_disc for t in done]
        m.avg_latency_s = sum(lats) / len(lats) if lats else 0.0
        m.max_latency_s = max(lats) if lats else 0.0
        m.faults = self.faults
        m.returns = list(self.return_times)
        stages = {}
        for t in self.tasks.values():
            for k, v in t.stage_durations().items():
                stages.setdefault(k, []).append(v)
        m.stage_means = {k: sum(v) / len(v) for k, v in sorted(stages.items())}
        self._emit_coverage()
        self._emit({"k": "end", "complete": self.complete,
                    "metrics": m.row(),
                    "stages": {t.tid: t.stage_durations()
                               for t in self.tasks.values() if t.t_disc is not None}})
        self.trace.close()


def run(cfg: SimConfig, scenario=None, trace_path=None) -> Metrics:
    eng = Engine(cfg, scenario, trace_path)
    return eng.run()
