"""Deterministic tick engine.

Each tick: snapshot perception for every robot, evaluate all controllers
against that snapshot, integrate differential-drive kinematics, separate
overlapping bodies, deliver the frames sent this tick (readable next tick),
and append to the event log.
"""

from __future__ import annotations

import hashlib
import math
import operator
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .agent import (
    ControllerParams,
    Perception,
    Robot,
    RobotState,
    Role,
    SimulationFault,
    step_fsm,
)
from .comms import AllocationResult, allocate_tasks
from .world import (
    CAMERA_RANGE,
    GOAL_ID,
    NEST_ID,
    PROXIMITY_RANGE,
    PROXIMITY_SENSORS,
    SENSOR_UNITS,
    ArenaSpec,
    Blob,
    Color,
    segments_blocked,
)

_ROAMING = (RobotState.EXPLORING, RobotState.RETURN_TO_NEST, RobotState.DECISION_MAKING)
_LISTENING = frozenset(_ROAMING)
_CHAIN_STATES = frozenset(
    {RobotState.SUBGOAL, RobotState.RECOVERY, RobotState.HEURISTIC_OPT1, RobotState.HEURISTIC_OPT2}
)
# colours a roaming robot never reacts to
_ROAMING_IGNORED = frozenset({Color.OFF, Color.WHITE, Color.CYAN})
_TWO_PI = 2.0 * math.pi
# extra gap left when pushing bodies apart, so chained contacts settle quickly
_SEPARATION_SLACK = 1e-3


@dataclass(frozen=True)
class SimParams:
    controller: ControllerParams = field(default_factory=ControllerParams)
    deadlock_window: int = 5000
    collision_iterations: int = 12
    workers: int = 1
    check_invariants: bool = False
    record_trajectories: bool = False
    trajectory_every: int = 1

    @property
    def robot_radius(self) -> float:
        return self.controller.robot_radius


class Status(str, Enum):
    PATH_FORMED = "PathFormed"
    TIMEOUT = "Timeout"
    DEADLOCK = "Deadlock"


@dataclass
class WorldState:
    tick: int
    robots: list[Robot]
    arena: ArenaSpec
    inboxes: dict[int, list] = field(default_factory=dict)
    event_log: list = field(default_factory=list)
    founder_id: int | None = None
    allocation: AllocationResult | None = None
    path_formed_by: int | None = None
    last_activity_tick: int = 0
    trajectory: list = field(default_factory=list)

    def robot(self, rid: int) -> Robot:
        return self.robots[self._index[rid]]

    def __post_init__(self):
        self.robots.sort(key=lambda r: r.id)
        ids = [r.id for r in self.robots]
        if len(set(ids)) != len(ids):
            raise ValueError("robot ids must be unique")
        self._index = {rid: k for k, rid in enumerate(ids)}
        self._pairs = None

    def log(self, robot_id: int, kind: str, payload) -> None:
        self.event_log.append((self.tick, robot_id, kind, payload))


@dataclass
class SimOutcome:
    status: Status
    ticks_elapsed: int
    chain_ids: list[int] | None
    robots_active: int
    robots_resting: int


# --------------------------------------------------------------------------
# construction


def robot_seed(master_seed: int, robot_id: int) -> int:
    """Independent per-robot stream seed, unaffected by evaluation order."""
    return int(np.random.SeedSequence([master_seed, robot_id]).generate_state(2, np.uint64)[0])


def spawn_positions(arena: ArenaSpec, count: int, radius: float, spacing: float | None = None) -> list:
    """Hexagonal lattice around the nest, nearest sites first."""
    spacing = spacing or 2 * radius + 0.03
    cx, cy = arena.nest.center
    sites = []
    reach = int(math.ceil(math.sqrt(count) * 2)) + 4
    for j in range(-reach, reach + 1):
        for i in range(-reach, reach + 1):
            x = cx + (i + 0.5 * (j % 2)) * spacing
            y = cy + j * spacing * math.sqrt(3) / 2
            if not (radius <= x <= arena.width - radius and radius <= y <= arena.height - radius):
                continue
            if any(math.dist(o.closest_point((x, y)), (x, y)) < radius + 0.01 for o in arena.obstacles):
                continue
            sites.append((round(math.hypot(x - cx, y - cy), 12), j, i, x, y))
    sites.sort()
    if len(sites) < count:
        raise ValueError(f"cannot place {count} robots around the nest")
    return [(s[3], s[4]) for s in sites[:count]]


def build_world(arena: ArenaSpec, robot_count: int, seed: int, params: SimParams) -> WorldState:
    if robot_count <= 0:
        raise ValueError("robot_count must be positive")
    cp = params.controller
    master = np.random.default_rng(seed)
    headings = master.uniform(-math.pi, math.pi, size=robot_count)
    robots = []
    for k, (x, y) in enumerate(spawn_positions(arena, robot_count, cp.robot_radius)):
        stream = robot_seed(seed, k)
        robots.append(
            Robot(
                id=k,
                x=x,
                y=y,
                heading=float(headings[k]),
                resting_ticks_remaining=cp.ticks(cp.minimum_resting_time),
                exploration_budget=cp.ticks(cp.initial_exploring_time),
                role=Role.UNASSIGNED if cp.task_allocation else Role.PATH,
                rng_stream=stream,
                rng=random.Random(stream),
            )
        )
    return WorldState(tick=0, robots=robots, arena=arena)


# --------------------------------------------------------------------------
# perception


def _proximity(P, H, arena: ArenaSpec, radius: float, D):
    """World-frame diffusion vectors: (all surfaces, obstacles and walls only)."""
    n = len(P)
    k = PROXIMITY_SENSORS
    step = _TWO_PI / k
    read_obs = np.zeros((n, k))
    read_all = np.zeros((n, k))

    def deposit(table, idx, dx, dy, gap):
        m = gap < PROXIMITY_RANGE
        if not m.any():
            return
        idx, dx, dy, gap = idx[m], dx[m], dy[m], gap[m]
        ang = np.arctan2(dy, dx) - H[idx]
        sensor = np.rint(np.mod(ang, _TWO_PI) / step).astype(int) % k
        val = 1.0 - np.maximum(gap, 0.0) / PROXIMITY_RANGE
        np.maximum.at(table, (idx, sensor), val)

    x, y = P[:, 0], P[:, 1]
    one = np.ones(n)
    zero = np.zeros(n)
    # walls, then obstacles: (robot, direction, gap) per candidate surface
    parts = [
        (-one, zero, x - radius),
        (one, zero, arena.width - x - radius),
        (zero, -one, y - radius),
        (zero, one, arena.height - y - radius),
    ]
    ids = [np.arange(n)] * 4
    R = arena.obstacle_array
    if len(R):
        qx = np.clip(x[:, None], R[None, :, 0], R[None, :, 2])
        qy = np.clip(y[:, None], R[None, :, 1], R[None, :, 3])
        dx = qx - x[:, None]
        dy = qy - y[:, None]
        gap = np.sqrt(dx * dx + dy * dy) - radius
        ids.append(np.repeat(np.arange(n), len(R)))
        parts.append((dx.ravel(), dy.ravel(), gap.ravel()))
    deposit(
        read_obs,
        np.concatenate(ids),
        np.concatenate([q[0] for q in parts]),
        np.concatenate([q[1] for q in parts]),
        np.concatenate([q[2] for q in parts]),
    )
    read_all[:] = read_obs
    close = D < 2 * radius + PROXIMITY_RANGE
    np.fill_diagonal(close, False)
    ii, jj = np.nonzero(close)
    if len(ii):
        deposit(read_all, ii, P[jj, 0] - P[ii, 0], P[jj, 1] - P[ii, 1], D[ii, jj] - 2 * radius)

    def to_world(table):
        body = -(table @ SENSOR_UNITS)
        out = np.empty_like(body)
        out[:, 0] = cos_h * body[:, 0] - sin_h * body[:, 1]
        out[:, 1] = sin_h * body[:, 0] + cos_h * body[:, 1]
        return out

    cos_h, sin_h = np.cos(H), np.sin(H)

    return to_world(read_all), to_world(read_obs)


def _wrap_array(a: np.ndarray) -> np.ndarray:
    """Vectorised wrap into (-pi, pi]."""
    w = np.mod(a + math.pi, _TWO_PI)
    w[w <= 0.0] += _TWO_PI
    return w - math.pi


class _Snapshot:
    """Arrays describing the world at the start of a tick, plus every blob list."""

    def __init__(self, state: WorldState, radius: float):
        robots = state.robots
        arena = state.arena
        n = len(robots)
        self.n = n
        self.P = np.array([(r.x, r.y) for r in robots], dtype=float).reshape(-1, 2)
        self.H = np.array([r.heading for r in robots], dtype=float)
        dx = self.P[None, :, 0] - self.P[:, None, 0]
        dy = self.P[None, :, 1] - self.P[:, None, 1]
        self.D = np.sqrt(dx * dx + dy * dy)
        near = self.D <= CAMERA_RANGE
        np.fill_diagonal(near, False)
        self.near = near
        self._rects = arena.obstacle_array
        self._rows: dict[int, np.ndarray] = {}

        states = [r.state for r in robots]
        self.leds = [r.led for r in robots]
        self.static = np.array([r.static for r in robots], dtype=bool)
        claims: dict[int, int] = {}
        for r in robots:
            if r.target_id is not None and r.claims_target():
                claims[r.target_id] = claims.get(r.target_id, 0) + 1
        self.claims = claims

        # landmarks
        lm_d, lm_vis, lm_ang = [], [], []
        for disk in (arena.nest, arena.goal):
            cx, cy = disk.center
            d = np.hypot(cx - self.P[:, 0], cy - self.P[:, 1])
            vis = d <= CAMERA_RANGE
            if len(arena.obstacle_array) and vis.any():
                idx = np.flatnonzero(vis)
                ends = np.repeat(np.array([[cx, cy]]), len(idx), axis=0)
                vis[idx[segments_blocked(self.P[idx], ends, arena.obstacle_array)]] = False
            lm_d.append(d)
            lm_vis.append(vis)
            lm_ang.append(np.arctan2(cy - self.P[:, 1], cx - self.P[:, 0]))
        self.nest_range = lm_d[0]
        self.diffusion, self.obstacle_push = _proximity(self.P, self.H, arena, radius, self.D)
        self.diffusion_list = [tuple(v) for v in self.diffusion.tolist()]
        self.push_list = [tuple(v) for v in self.obstacle_push.tolist()]
        self.nest_range_list = self.nest_range.tolist()
        nr = np.maximum(self.nest_range, 1e-300)
        ndir = np.stack(
            [(arena.nest.center[0] - self.P[:, 0]) / nr, (arena.nest.center[1] - self.P[:, 1]) / nr], axis=1
        )
        ndir[self.nest_range <= 1e-12] = 0.0
        self.nest_dir_list = [tuple(v) for v in ndir.tolist()]

        # which (observer, source) pairs produce a blob
        # what each observer's controller reads: explorers everything but the
        # colours they ignore, homing robots only recovery beacons, robots in
        # the allocation exchange nothing, chain robots everything
        full = np.array([s in _CHAIN_STATES for s in states], dtype=bool)
        explorer = np.array([s is RobotState.EXPLORING for s in states], dtype=bool)
        homing = np.array([s is RobotState.RETURN_TO_NEST for s in states], dtype=bool)
        lit = np.array([c is not Color.OFF for c in self.leds], dtype=bool)
        ignored = np.array([c in _ROAMING_IGNORED for c in self.leds], dtype=bool)
        warning = np.array([s is RobotState.RECOVERY for s in states], dtype=bool)
        vis = near & lit[None, :] & (
            full[:, None] | (explorer[:, None] & ~ignored[None, :]) | (homing[:, None] & warning[None, :])
        )
        active = full | explorer
        oi, sj = np.nonzero(vis)
        if len(oi) and len(self._rects):
            keep = ~self._blocked(oi, sj)
            oi, sj = oi[keep], sj[keep]
        rng = self.D[oi, sj]
        brg = _wrap_array(np.arctan2(dy[oi, sj], dx[oi, sj]) - self.H[oi])
        src = sj.copy()
        # landmark columns use negative source indices
        for tag, d, v, ang in ((NEST_ID, lm_d[0], lm_vis[0], lm_ang[0]), (GOAL_ID, lm_d[1], lm_vis[1], lm_ang[1])):
            k = np.flatnonzero(v & active)
            oi = np.concatenate([oi, k])
            rng = np.concatenate([rng, d[k]])
            brg = np.concatenate([brg, _wrap_array(ang[k] - self.H[k])])
            src = np.concatenate([src, np.full(len(k), tag)])
        ids = np.array([r.id for r in robots] + [GOAL_ID, NEST_ID], dtype=np.int64)
        # ids[-1] is NEST_ID, ids[-2] is GOAL_ID, so landmark tags index correctly
        sid = ids[src]
        order = np.lexsort((sid, rng, oi))
        payload = [
            (
                self.leds[j],
                r.id,
                r.state,
                r.target_id,
                r.anchored and r.state is RobotState.SUBGOAL and r.id not in claims,
                r.converged,
            )
            for j, r in enumerate(robots)
        ]
        goal_open = GOAL_ID not in claims
        blobs: list[list] = [[] for _ in range(n)]
        for o, s, d, b in zip(oi[order].tolist(), src[order].tolist(), rng[order].tolist(), brg[order].tolist()):
            if s == NEST_ID:
                blobs[o].append(Blob(Color.NEST_BLUE, d, b, NEST_ID))
            elif s == GOAL_ID:
                blobs[o].append(Blob(Color.GOAL_PINK, d, b, GOAL_ID, open=goal_open))
            else:
                led, rid, st, tgt, opn, conv = payload[s]
                blobs[o].append(Blob(led, d, b, rid, st, tgt, opn, conv))
        self.blobs = blobs


    def _blocked(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        # segments always run from the lower to the higher index, so LOS is symmetric
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        return segments_blocked(self.P[lo], self.P[hi], self._rects)

    def sees(self, k: int) -> np.ndarray:
        """Robots within camera range of ``k`` with a clear line of sight."""
        row = self._rows.get(k)
        if row is None:
            row = self.near[k].copy()
            if len(self._rects):
                idx = np.flatnonzero(row)
                row[idx[self._blocked(np.full(len(idx), k), idx)]] = False
            self._rows[k] = row
        return row


def _perceive(k: int, state: WorldState, snap: _Snapshot, free_check, path_clear=None) -> Perception:
    return Perception(
        tick=state.tick,
        blobs=snap.blobs[k],
        inbox=state.inboxes.get(state.robots[k].id, []),
        diffusion=snap.diffusion_list[k],
        obstacle_push=snap.push_list[k],
        nest_range=snap.nest_range_list[k],
        nest_dir=snap.nest_dir_list[k],
        nest_radius=state.arena.nest.radius,
        free_check=free_check,
        path_clear=path_clear,
    )


def _make_path_clear(arena: ArenaSpec, radius: float):
    """Straight-drive test against walls and obstacles grown by the body radius."""
    R = arena.obstacle_array
    grown = R + np.array([-radius, -radius, radius, radius]) if len(R) else R
    xmax, ymax = arena.width - radius, arena.height - radius

    def clear(start, end) -> bool:
        for x, y in (start, end):
            if not (radius <= x <= xmax and radius <= y <= ymax):
                return False
        if not len(grown):
            return True
        return not segments_blocked(np.array([start], dtype=float), np.array([end], dtype=float), grown)[0]

    return clear


def _make_free_check(state: WorldState, snap: _Snapshot, radius: float, self_index: int):
    arena = state.arena
    R = arena.obstacle_array
    others = snap.P[snap.static & (np.arange(snap.n) != self_index)]

    def free(start, end, anchors) -> bool:
        length = math.dist(start, end)
        samples = max(1, int(math.ceil(length / 0.01)))
        ts = np.linspace(1.0 / samples, 1.0, samples)
        pts = np.asarray(start)[None] + ts[:, None] * (np.asarray(end) - np.asarray(start))[None]
        if (
            (pts[:, 0] < radius).any()
            or (pts[:, 0] > arena.width - radius).any()
            or (pts[:, 1] < radius).any()
            or (pts[:, 1] > arena.height - radius).any()
        ):
            return False
        if len(R):
            qx = np.clip(pts[:, 0:1], R[None, :, 0], R[None, :, 2])
            qy = np.clip(pts[:, 1:2], R[None, :, 1], R[None, :, 3])
            if (np.hypot(qx - pts[:, 0:1], qy - pts[:, 1:2]) < radius).any():
                return False
            for a in anchors:
                ends = np.repeat(np.asarray(a, dtype=float)[None], len(pts), axis=0)
                if segments_blocked(pts, ends, R).any():
                    return False
        for a in anchors:
            if (np.hypot(pts[:, 0] - a[0], pts[:, 1] - a[1]) > CAMERA_RANGE).any():
                return False
        if len(others):
            e = np.asarray(end)
            if (np.hypot(others[:, 0] - e[0], others[:, 1] - e[1]) < 2 * radius).any():
                return False
        return True

    return free


# --------------------------------------------------------------------------
# physics


def integrate(x: float, y: float, th: float, left: float, right: float, params: ControllerParams):
    """Exact arc integration of differential-drive wheel speeds over one tick."""
    vl = left * params.wheel_speed_unit
    vr = right * params.wheel_speed_unit
    v = 0.5 * (vl + vr)
    w = (vr - vl) / params.interwheel_distance
    dt = params.tick_seconds
    if abs(w) < 1e-12:
        return x + v * dt * math.cos(th), y + v * dt * math.sin(th), th
    th2 = th + w * dt
    return (
        x + v / w * (math.sin(th2) - math.sin(th)),
        y - v / w * (math.cos(th2) - math.cos(th)),
        math.atan2(math.sin(th2), math.cos(th2)),
    )


def integrate_many(P: np.ndarray, H: np.ndarray, left: np.ndarray, right: np.ndarray, params: ControllerParams):
    """Vectorised :func:`integrate`; returns new positions (m, 2) and headings (m,)."""
    vl = left * params.wheel_speed_unit
    vr = right * params.wheel_speed_unit
    v = 0.5 * (vl + vr)
    w = (vr - vl) / params.interwheel_distance
    dt = params.tick_seconds
    straight = np.abs(w) < 1e-12
    w_safe = np.where(straight, 1.0, w)
    th2 = H + w * dt
    s0, c0 = np.sin(H), np.cos(H)
    s2, c2 = np.sin(th2), np.cos(th2)
    x = np.where(straight, P[:, 0] + v * dt * c0, P[:, 0] + v / w_safe * (s2 - s0))
    y = np.where(straight, P[:, 1] + v * dt * s0, P[:, 1] - v / w_safe * (c2 - c0))
    th = np.where(straight, H, np.arctan2(s2, c2))
    return np.stack([x, y], axis=1), th


_SMALL_PUSH = 12
_first = operator.itemgetter(0)


def _push_one(x: float, y: float, arena: ArenaSpec, radius: float) -> tuple[float, float]:
    """Scalar :func:`_push_out` for a single robot."""
    for xmin, ymin, xmax, ymax in arena.obstacle_list:
        qx = min(max(x, xmin), xmax)
        qy = min(max(y, ymin), ymax)
        dx = x - qx
        dy = y - qy
        d = math.hypot(dx, dy)
        if d >= radius - 1e-12:
            continue
        if d > 1e-12:
            x = qx + dx / d * radius
            y = qy + dy / d * radius
        else:
            hx = min((x - xmin, xmin - radius), (xmax - x, xmax + radius), key=_first)
            vy = min((y - ymin, ymin - radius), (ymax - y, ymax + radius), key=_first)
            if vy[0] < hx[0]:
                y = vy[1]
            else:
                x = hx[1]
    x = min(max(x, radius), arena.width - radius)
    y = min(max(y, radius), arena.height - radius)
    return x, y


def _push_out(P: np.ndarray, idx: np.ndarray, arena: ArenaSpec, radius: float) -> None:
    """Move the robots in ``idx`` out of walls and obstacles (in place)."""
    if len(idx) == 0:
        return
    if len(idx) <= _SMALL_PUSH:
        for k in idx.tolist():
            P[k] = _push_one(float(P[k, 0]), float(P[k, 1]), arena, radius)
        return
    sub = P[idx]
    R = arena.obstacle_array
    if len(R):
        qx = np.clip(sub[:, 0:1], R[None, :, 0], R[None, :, 2])
        qy = np.clip(sub[:, 1:2], R[None, :, 1], R[None, :, 3])
        touching = ((qx - sub[:, 0:1]) ** 2 + (qy - sub[:, 1:2]) ** 2 < radius * radius).any(axis=0)
        R = R[touching]
    for xmin, ymin, xmax, ymax in R:
        qx = np.clip(sub[:, 0], xmin, xmax)
        qy = np.clip(sub[:, 1], ymin, ymax)
        dx = sub[:, 0] - qx
        dy = sub[:, 1] - qy
        d = np.hypot(dx, dy)
        pen = d < radius - 1e-12
        if not pen.any():
            continue
        outside = pen & (d > 1e-12)
        if outside.any():
            sub[outside, 0] = qx[outside] + dx[outside] / d[outside] * radius
            sub[outside, 1] = qy[outside] + dy[outside] / d[outside] * radius
        inside = pen & ~outside
        for m in np.flatnonzero(inside):
            x, y = sub[m]
            cands = [(x - xmin, xmin - radius, y), (xmax - x, xmax + radius, y)]
            best = min(cands, key=lambda c: c[0])
            vert = [(y - ymin, ymin - radius), (ymax - y, ymax + radius)]
            bv = min(vert, key=lambda c: c[0])
            if bv[0] < best[0]:
                sub[m] = (x, bv[1])
            else:
                sub[m] = (best[1], y)
    np.clip(sub[:, 0], radius, arena.width - radius, out=sub[:, 0])
    np.clip(sub[:, 1], radius, arena.height - radius, out=sub[:, 1])
    P[idx] = sub


def _overlaps(P: np.ndarray, radius: float, reach: float = 0.0):
    """Index pairs (i < j, row-major order) of disks closer than ``2 * radius + reach``."""
    dx = P[:, None, 0] - P[None, :, 0]
    dy = P[:, None, 1] - P[None, :, 1]
    close = dx * dx + dy * dy < (2 * radius - 1e-9 + reach) ** 2
    return np.nonzero(np.triu(close, 1))


class _PairCache:
    """Overlap queries against a candidate pair list, rebuilt once any robot
    has moved half the margin since the last build."""

    def __init__(self, radius: float, margin: float = 0.1):
        self.radius = radius
        self.margin = margin
        self.base = None

    def overlaps(self, P: np.ndarray):
        # two robots each moving less than margin / 2 cannot close more than margin
        stale = self.base is None or self.base.shape != P.shape
        if stale or 4.0 * ((P - self.base) ** 2).sum(axis=1).max() >= self.margin**2:
            self.base = P.copy()
            self.ci, self.cj = _overlaps(P, self.radius, self.margin)
        ci, cj = self.ci, self.cj
        dx = P[ci, 0] - P[cj, 0]
        dy = P[ci, 1] - P[cj, 1]
        hit = dx * dx + dy * dy < (2 * self.radius - 1e-9) ** 2
        return ci[hit], cj[hit]


def _obstacle_violations(P: np.ndarray, arena: ArenaSpec, radius: float) -> np.ndarray:
    bad = (
        (P[:, 0] < radius - 1e-9)
        | (P[:, 0] > arena.width - radius + 1e-9)
        | (P[:, 1] < radius - 1e-9)
        | (P[:, 1] > arena.height - radius + 1e-9)
    )
    R = arena.obstacle_array
    if len(R):
        qx = np.clip(P[:, 0:1], R[None, :, 0], R[None, :, 2])
        qy = np.clip(P[:, 1:2], R[None, :, 1], R[None, :, 3])
        bad |= (np.hypot(qx - P[:, 0:1], qy - P[:, 1:2]) < radius - 1e-9).any(axis=1)
    return bad


def resolve_collisions(
    proposed: np.ndarray,
    prior: np.ndarray,
    movable: np.ndarray,
    arena: ArenaSpec,
    radius: float,
    max_iterations: int = 12,
    pairs: _PairCache | None = None,
) -> np.ndarray:
    """Separate overlapping disks; static robots never move.

    Pairs are processed in (lower id, higher id) order.  Movers still in
    violation after ``max_iterations`` are put back at their prior pose.
    """
    P = np.array(proposed, dtype=float)
    mov = np.asarray(movable, dtype=bool)
    if pairs is None:
        pairs = _PairCache(radius)
    todo = np.flatnonzero(mov)
    contact = 2 * radius
    for _ in range(max_iterations):
        _push_out(P, todo, arena, radius)
        ii, jj = pairs.overlaps(P)
        if len(ii) == 0:
            return P
        xs = P[:, 0].tolist()
        ys = P[:, 1].tolist()
        mv = mov.tolist()
        moved = set()
        for i, j in zip(ii.tolist(), jj.tolist()):
            mi, mj = mv[i], mv[j]
            if not (mi or mj):
                continue
            dx = xs[j] - xs[i]
            dy = ys[j] - ys[i]
            d = math.hypot(dx, dy)
            need = contact - d
            if need <= 1e-9:
                continue
            if d < 1e-12:
                ux, uy = 1.0, 0.0
            else:
                ux, uy = dx / d, dy / d
            need += _SEPARATION_SLACK
            if mi and mj:
                h = need / 2
                xs[i] -= ux * h
                ys[i] -= uy * h
                xs[j] += ux * h
                ys[j] += uy * h
                moved.add(i)
                moved.add(j)
            elif mj:
                xs[j] += ux * need
                ys[j] += uy * need
                moved.add(j)
            else:
                xs[i] -= ux * need
                ys[i] -= uy * need
                moved.add(i)
        P[:, 0] = xs
        P[:, 1] = ys
        todo = np.array(sorted(moved), dtype=int)
    _push_out(P, np.flatnonzero(mov), arena, radius)
    # prior poses are overlap-free, so reverting offenders terminates
    while True:
        bad = _obstacle_violations(P, arena, radius) & mov
        ii, jj = pairs.overlaps(P)
        bad[ii[mov[ii]]] = True
        bad[jj[mov[jj]]] = True
        if not bad.any():
            break
        P[bad] = prior[bad]
        mov = mov & ~bad
    return P


# --------------------------------------------------------------------------
# the tick


def _deliver(state: WorldState, snap: _Snapshot, outgoing: list) -> None:
    """Frames sent this tick, readable next tick, to listeners in range with line of sight."""
    inboxes: dict[int, list] = {}
    robots = state.robots
    index = state._index
    listening = [r.state in _LISTENING for r in robots]
    for frame in outgoing:
        s = index[frame.sender]
        if frame.is_broadcast:
            for j in np.flatnonzero(snap.sees(s)).tolist():
                if listening[j]:
                    inboxes.setdefault(robots[j].id, []).append(frame)
        else:
            j = index.get(frame.target)
            if j is not None and listening[j] and snap.sees(s)[j]:
                inboxes.setdefault(frame.target, []).append(frame)
    for box in inboxes.values():
        box.sort(key=lambda f: (f.sent_tick, f.sender))
    state.inboxes = inboxes


def tick(state: WorldState, params: SimParams, executor: ThreadPoolExecutor | None = None) -> WorldState:
    """Advance ``state`` by one tick (in place) and return it."""
    cp = params.controller
    radius = cp.robot_radius
    robots = state.robots
    snap = _Snapshot(state, radius)
    path_clear = _make_path_clear(state.arena, radius)

    def evaluate(k: int):
        r = robots[k]
        if r.state is RobotState.RESTING:
            perc = Perception(tick=state.tick, inbox=state.inboxes.get(r.id, []))
        else:
            fc = None
            if r.state in (RobotState.HEURISTIC_OPT1, RobotState.HEURISTIC_OPT2) and not r.converged:
                fc = _make_free_check(state, snap, radius, k)
            perc = _perceive(k, state, snap, fc, path_clear)
        return step_fsm(r, perc, cp, r.rng)

    if executor is not None and params.workers > 1:
        results = list(executor.map(evaluate, range(len(robots))))
    else:
        results = [evaluate(k) for k in range(len(robots))]

    # commit, id order
    claimants = []
    outgoing = []
    active = False
    proposed = snap.P.copy()
    headings = snap.H.copy()
    driven: list[int] = []
    wheels: list[tuple] = []
    for k, (r, res) in enumerate(zip(robots, results)):
        for kind, payload in res.events:
            state.log(r.id, kind, payload)
            if kind == "transition":
                active = True
            elif kind == "alloc_done":
                n, responders = payload
                state.allocation = allocate_tasks(list(responders), n)
            elif kind == "path_formed":
                state.path_formed_by = r.id
        if res.claim_founder:
            claimants.append(r)
        for f in res.frames:
            outgoing.append(type(f)(f.data, f.target, r.id, state.tick))
        act = res.actuation
        if act.goto is not None:
            gx, gy = act.goto
            x, y = proposed[k]
            d = math.hypot(gx - x, gy - y)
            step = cp.step_length
            if d > 1e-12:
                f = min(1.0, step / d)
                proposed[k] = (x + (gx - x) * f, y + (gy - y) * f)
                headings[k] = math.atan2(gy - y, gx - x)
        elif act.left or act.right:
            driven.append(k)
            wheels.append((act.left, act.right))
    if driven:
        idx = np.array(driven)
        lr = np.array(wheels, dtype=float)
        proposed[idx], headings[idx] = integrate_many(snap.P[idx], snap.H[idx], lr[:, 0], lr[:, 1], cp)
    if claimants and state.founder_id is None:
        founder = min(claimants, key=lambda r: r.id)
        founder.goal_founder = True
        state.founder_id = founder.id
        state.log(founder.id, "founder", founder.founder_attempt_ticks)

    movable = np.array([not r.static for r in robots], dtype=bool)
    if state._pairs is None:
        state._pairs = _PairCache(radius)
    final = resolve_collisions(
        proposed, snap.P, movable, state.arena, radius, params.collision_iterations, state._pairs
    )
    moved = np.hypot(final[:, 0] - snap.P[:, 0], final[:, 1] - snap.P[:, 1])
    for k, r in enumerate(robots):
        r.x = float(final[k, 0])
        r.y = float(final[k, 1])
        r.heading = float(headings[k])
    if active or (len(moved) and moved.max() > 1e-3):
        state.last_activity_tick = state.tick

    _deliver(state, snap, outgoing)
    if params.record_trajectories and state.tick % params.trajectory_every == 0:
        state.trajectory.extend(
            (state.tick, r.id, r.x, r.y, r.heading, r.state.value, r.led.value) for r in robots
        )
    state.tick += 1
    if params.check_invariants:
        check_invariants(state, radius)
    return state


def check_invariants(state: WorldState, radius: float) -> None:
    P = np.array([(r.x, r.y) for r in state.robots], dtype=float)
    bad = _obstacle_violations(P, state.arena, radius)
    if bad.any():
        raise SimulationFault(f"tick {state.tick}: robots {np.flatnonzero(bad).tolist()} outside free space")
    ii, jj = _overlaps(P, radius)
    if len(ii):
        raise SimulationFault(f"tick {state.tick}: overlapping robots {list(zip(ii.tolist(), jj.tolist()))[:5]}")


def extract_chain(state: WorldState) -> list[int] | None:
    """Robot ids nest-side first, following target links to the goal."""
    if state.path_formed_by is None:
        return None
    ids = []
    rid = state.path_formed_by
    seen = set()
    while rid != GOAL_ID:
        if rid in seen or rid is None or rid < 0:
            raise SimulationFault(f"broken chain at {rid}")
        seen.add(rid)
        ids.append(rid)
        rid = state.robot(rid).target_id
    return ids


def run_until(state: WorldState, params: SimParams, max_ticks: int, stop=None) -> SimOutcome:
    """Step until the path is formed, ``stop(state)`` fires, a deadlock, or ``max_ticks``."""
    if max_ticks <= 0:
        raise ValueError("max_ticks must be positive")
    executor = ThreadPoolExecutor(params.workers) if params.workers > 1 else None
    status = Status.TIMEOUT
    try:
        start = state.tick
        while state.tick - start < max_ticks:
            tick(state, params, executor)
            if state.path_formed_by is not None:
                status = Status.PATH_FORMED
                break
            if stop is not None and stop(state):
                break
            if state.tick - state.last_activity_tick >= params.deadlock_window:
                status = Status.DEADLOCK
                break
    finally:
        if executor is not None:
            executor.shutdown()
    # final poses make the digest cover motion, not only discrete events
    state.log(-1, "end", (status.value, tuple((r.id, r.x, r.y, r.heading) for r in state.robots)))
    resting = sum(1 for r in state.robots if r.state is RobotState.RESTING)
    chain = extract_chain(state) if status is Status.PATH_FORMED else None
    return SimOutcome(status, state.tick, chain, len(state.robots) - resting, resting)


def _canonical(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return "(" + ",".join(_canonical(v) for v in value) + ")"
    return str(value)


def trace_hash(event_log) -> int:
    """Order-sensitive 64-bit digest of an event log."""
    h = hashlib.blake2b(digest_size=8)
    for t, rid, kind, payload in event_log:
        h.update(f"{t}|{rid}|{kind}|{_canonical(payload)}\n".encode())
    return int.from_bytes(h.digest(), "big")


EMPTY_TRACE_HASH = trace_hash([])
