"""Static arena geometry, occlusion-aware visibility and field queries.

Coordinates are metres, x to the right, y up, origin at the bottom-left
corner of the arena.  Obstacles are axis-aligned rectangles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NEST_ID = -1
GOAL_ID = -2

LIGHT_EPS = 1e-9
CAMERA_RANGE = 1.0
PROXIMITY_SENSORS = 24
PROXIMITY_RANGE = 0.10

Point = tuple[float, float]


class Color(str, Enum):
    """LED / landmark colours seen by the omnidirectional camera."""

    OFF = "black"
    WHITE = "white"
    CYAN = "cyan"
    RED = "red"
    BLUE = "blue"
    RED_YELLOW = "red_yellow"
    FOUNDER_MAGENTA = "dashed_magenta"
    MAGENTA = "magenta"
    INTENSE_MAGENTA = "intense_magenta"
    NEST_BLUE = "nest_blue"
    GOAL_PINK = "goal_pink"


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate rectangle {self}")

    def inflated(self, r: float) -> "Rect":
        return Rect(self.xmin - r, self.ymin - r, self.xmax + r, self.ymax + r)

    def closest_point(self, p: Point) -> Point:
        return (min(max(p[0], self.xmin), self.xmax), min(max(p[1], self.ymin), self.ymax))

    def contains(self, p: Point) -> bool:
        """Strict interior test."""
        return self.xmin < p[0] < self.xmax and self.ymin < p[1] < self.ymax


@dataclass(frozen=True)
class Disk:
    center: Point
    radius: float

    def contains(self, p: Point) -> bool:
        return math.dist(p, self.center) <= self.radius


@dataclass(frozen=True)
class ArenaSpec:
    width: float
    height: float
    obstacles: tuple[Rect, ...]
    nest: Disk
    goal: Disk
    reference_intensity: float = 1.0
    name: str = ""
    # (n_obstacles, 4) array of xmin, ymin, xmax, ymax; built once for vector queries
    obstacle_array: np.ndarray = field(init=False, repr=False, compare=False)
    obstacle_list: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("arena width and height must be positive")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        arr = np.array(
            [[o.xmin, o.ymin, o.xmax, o.ymax] for o in self.obstacles], dtype=float
        ).reshape(-1, 4)
        object.__setattr__(self, "obstacle_array", arr)
        object.__setattr__(self, "obstacle_list", arr.tolist())
        for o in self.obstacles:
            if o.xmin < 0 or o.ymin < 0 or o.xmax > self.width or o.ymax > self.height:
                raise ValueError(f"obstacle {o} leaves the arena")
        for label, disk in (("nest", self.nest), ("goal", self.goal)):
            (cx, cy), r = disk.center, disk.radius
            if r <= 0:
                raise ValueError(f"{label} radius must be positive")
            if cx - r < 0 or cy - r < 0 or cx + r > self.width or cy + r > self.height:
                raise ValueError(f"{label} disk leaves the arena")
            for o in self.obstacles:
                if math.dist(o.closest_point(disk.center), disk.center) < r:
                    raise ValueError(f"{label} disk intersects obstacle {o}")

    @property
    def light_source(self) -> Point:
        return self.nest.center

    def in_bounds(self, p: Point) -> bool:
        return 0.0 <= p[0] <= self.width and 0.0 <= p[1] <= self.height

    # -- serialisation -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "reference_intensity": self.reference_intensity,
            "obstacles": [[o.xmin, o.ymin, o.xmax, o.ymax] for o in self.obstacles],
            "nest": {"center": list(self.nest.center), "radius": self.nest.radius},
            "goal": {"center": list(self.goal.center), "radius": self.goal.radius},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArenaSpec":
        return cls(
            width=float(d["width"]),
            height=float(d["height"]),
            obstacles=tuple(Rect(*map(float, o)) for o in d.get("obstacles", [])),
            nest=Disk(tuple(map(float, d["nest"]["center"])), float(d["nest"].get("radius", 0.25))),
            goal=Disk(tuple(map(float, d["goal"]["center"])), float(d["goal"].get("radius", 0.25))),
            reference_intensity=float(d.get("reference_intensity", 1.0)),
            name=str(d.get("name", "")),
        )


def load_arena(path: str | Path) -> ArenaSpec:
    with open(path) as fh:
        data = json.load(fh)
    if not data.get("name"):
        data["name"] = Path(path).stem
    return ArenaSpec.from_dict(data)


@dataclass(frozen=True, slots=True)
class Blob:
    """A coloured blob seen by the camera.

    ``state``, ``target_id``, ``open`` and ``converged`` carry the sender's
    range-and-bearing payload; they are ``None``/False for landmarks.
    """

    color: Color
    range: float
    bearing: float
    source_id: int
    state: object = None
    target_id: int | None = None
    open: bool = False
    converged: bool = False


@dataclass(frozen=True, slots=True)
class VisibilityResult:
    visible: bool
    range: float
    occluded_by_obstacle: bool
    out_of_range: bool


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def _segment_hits_rect(x1, y1, x2, y2, xmin, ymin, xmax, ymax) -> bool:
    tmin, tmax = 0.0, 1.0
    for p, d, lo, hi in ((x1, x2 - x1, xmin, xmax), (y1, y2 - y1, ymin, ymax)):
        if d == 0.0:
            if not (lo < p < hi):
                return False
            continue
        t1 = (lo - p) / d
        t2 = (hi - p) / d
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > tmin:
            tmin = t1
        if t2 < tmax:
            tmax = t2
        if tmin >= tmax:
            return False
    return tmin < tmax


def segment_intersects_obstacle(p1: Point, p2: Point, arena: ArenaSpec) -> bool:
    """True iff the open segment p1-p2 passes through an obstacle interior.

    Slab clipping against each rectangle; grazing an edge or a corner does not
    count.  A zero-length segment never intersects.
    """
    if p1[0] == p2[0] and p1[1] == p2[1]:
        return False
    return any(
        _segment_hits_rect(p1[0], p1[1], p2[0], p2[1], o.xmin, o.ymin, o.xmax, o.ymax)
        for o in arena.obstacles
    )


def segments_blocked(starts: np.ndarray, ends: np.ndarray, rects: np.ndarray) -> np.ndarray:
    """Vectorised :func:`segment_intersects_obstacle` for many segments.

    ``starts``/``ends`` are (m, 2); ``rects`` is (k, 4).  Returns a bool (m,).
    """
    m = len(starts)
    if m == 0 or len(rects) == 0:
        return np.zeros(m, dtype=bool)
    p = starts[:, None, :]
    d = (ends - starts)[:, None, :]
    lo = rects[None, :, 0:2]
    hi = rects[None, :, 2:4]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - p) / d
        t2 = (hi - p) / d
    tlo = np.minimum(t1, t2)
    thi = np.maximum(t1, t2)
    flat = d == 0.0
    inside = (lo < p) & (p < hi)
    # a zero-direction axis either never blocks or imposes no constraint
    tlo = np.where(flat, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(flat, np.where(inside, np.inf, -np.inf), thi)
    tmin = np.maximum(tlo.max(axis=2), 0.0)
    tmax = np.minimum(thi.min(axis=2), 1.0)
    hit = tmin < tmax
    zero = np.all(d[:, 0, :] == 0.0, axis=1)
    return hit.any(axis=1) & ~zero


def line_of_sight(observer: Point, target: Point, arena: ArenaSpec, max_range: float) -> VisibilityResult:
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    rng = math.dist(observer, target)
    occluded = segment_intersects_obstacle(observer, target, arena)
    out = rng > max_range
    return VisibilityResult(not occluded and not out, rng, occluded, out)


def light_reading(pos: Point, arena: ArenaSpec, cap: float | None = None) -> float:
    """Light intensity (I/x)^2 at ``pos``; saturates when standing on the source."""
    intensity = arena.reference_intensity
    x = math.dist(pos, arena.light_source)
    if x < LIGHT_EPS:
        return cap if cap is not None else (intensity / LIGHT_EPS) ** 2
    return (intensity / x) ** 2


def distance_from_light(reading: float, arena: ArenaSpec) -> float:
    """Invert the light model: the robot's estimate of its distance to the nest."""
    return arena.reference_intensity / math.sqrt(reading)


def nest_potential_vector(pos: Point, arena: ArenaSpec) -> tuple[float, float]:
    """Unit vector up the light gradient (toward the nest centre)."""
    dx = arena.nest.center[0] - pos[0]
    dy = arena.nest.center[1] - pos[1]
    n = math.hypot(dx, dy)
    if n < 1e-12:
        return (0.0, 0.0)
    return (dx / n, dy / n)


def diffusion_vector(readings: Iterable[tuple[float, float]]) -> tuple[float, float]:
    """Negated proximity-weighted sum of the reading bearings."""
    sx = sy = 0.0
    for bearing, value in readings:
        sx += value * math.cos(bearing)
        sy += value * math.sin(bearing)
    return (-sx, -sy)


SENSOR_BEARINGS = tuple(2.0 * math.pi * k / PROXIMITY_SENSORS for k in range(PROXIMITY_SENSORS))
SENSOR_UNITS = np.array([[math.cos(b), math.sin(b)] for b in SENSOR_BEARINGS])


def sensor_index(bearing: float) -> int:
    step = 2.0 * math.pi / PROXIMITY_SENSORS
    return int(round((bearing % (2.0 * math.pi)) / step)) % PROXIMITY_SENSORS


def proximity_readings(
    pose: tuple[float, float, float],
    arena: ArenaSpec,
    others: Sequence[Point] = (),
    robot_radius: float = 0.085,
    sensor_range: float = PROXIMITY_RANGE,
) -> list[tuple[float, float]]:
    """Ring of proximity readings in the body frame.

    Each nearby surface (obstacle, wall or robot body) lights the sensor whose
    bearing is closest to it with ``1 - gap/range``; readings take the max.
    """
    x, y, th = pose
    values = [0.0] * PROXIMITY_SENSORS

    def hit(px, py, gap):
        if gap >= sensor_range:
            return
        b = math.atan2(py - y, px - x) - th
        k = sensor_index(b)
        values[k] = max(values[k], 1.0 - max(gap, 0.0) / sensor_range)

    for o in arena.obstacles:
        cx, cy = o.closest_point((x, y))
        hit(cx, cy, math.hypot(cx - x, cy - y) - robot_radius)
    hit(0.0, y, x - robot_radius)
    hit(arena.width, y, arena.width - x - robot_radius)
    hit(x, 0.0, y - robot_radius)
    hit(x, arena.height, arena.height - y - robot_radius)
    for ox, oy in others:
        d = math.hypot(ox - x, oy - y)
        if d > 0:
            hit(ox, oy, d - 2 * robot_radius)
    return list(zip(SENSOR_BEARINGS, values))


def detect_blobs(observer, all_robots, arena: ArenaSpec, max_range: float = CAMERA_RANGE) -> list[Blob]:
    """Blobs visible to ``observer``: lit robot LEDs plus nest and goal landmarks.

    Bearings are in the observer's body frame.  Sorted by range, then source id.
    """
    ox, oy, oth = observer.x, observer.y, observer.heading
    blobs = []

    def add(color, px, py, sid, other=None):
        vis = line_of_sight((ox, oy), (px, py), arena, max_range)
        if not vis.visible:
            return
        bearing = wrap_angle(math.atan2(py - oy, px - ox) - oth) if vis.range > 0 else 0.0
        if other is None:
            blobs.append(Blob(color, vis.range, bearing, sid))
        else:
            blobs.append(
                Blob(color, vis.range, bearing, sid, other.state, other.target_id, False, other.converged)
            )

    add(Color.NEST_BLUE, *arena.nest.center, NEST_ID)
    add(Color.GOAL_PINK, *arena.goal.center, GOAL_ID)
    for r in all_robots:
        if r.id == observer.id or r.led == Color.OFF:
            continue
        add(r.led, r.x, r.y, r.id, r)
    blobs.sort(key=lambda b: (b.range, b.source_id))
    return blobs
