"""Per-robot controller.

Eight behavioural states, the wheel-turning rule, subgoal positioning,
recovery behaviour and the two alignment passes.  A controller call sees only
its own robot, its perception snapshot and its own random stream, so robots
can be evaluated in any order (or concurrently) within a tick.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from typing import Callable, NamedTuple

from .comms import Flags, ProtocolFrame, decode_frame, encode_frame, required_robot_count
from .world import GOAL_ID, NEST_ID, Blob, Color, Point, wrap_angle


class SimulationFault(RuntimeError):
    """A state/trigger combination the controller should never produce."""


class RobotState(str, Enum):
    RESTING = "Resting"
    EXPLORING = "Exploring"
    RETURN_TO_NEST = "ReturnToNest"
    SUBGOAL = "Subgoal"
    DECISION_MAKING = "DecisionMaking"
    RECOVERY = "Recovery"
    HEURISTIC_OPT1 = "HeuristicOpt1"
    HEURISTIC_OPT2 = "HeuristicOpt2"


class Role(str, Enum):
    UNASSIGNED = "unassigned"
    PATH = "path"
    REST = "rest"


S = RobotState

# (from, trigger, to).  "recovered" is the recovery robot re-anchoring once it
# is back at a spot where its target is visible again.
TRANSITIONS = frozenset(
    {
        (S.RESTING, "i", S.EXPLORING),
        (S.EXPLORING, "b", S.RETURN_TO_NEST),
        (S.EXPLORING, "c", S.SUBGOAL),
        (S.RETURN_TO_NEST, "d", S.EXPLORING),
        (S.EXPLORING, "j", S.DECISION_MAKING),
        (S.EXPLORING, "e", S.DECISION_MAKING),
        (S.DECISION_MAKING, "k", S.RETURN_TO_NEST),
        (S.DECISION_MAKING, "l", S.RESTING),
        (S.SUBGOAL, "f", S.RECOVERY),
        (S.SUBGOAL, "g", S.HEURISTIC_OPT1),
        (S.HEURISTIC_OPT1, "h", S.HEURISTIC_OPT2),
        (S.HEURISTIC_OPT2, "a", S.RESTING),
        (S.RECOVERY, "recovered", S.SUBGOAL),
    }
)
_EDGE_LOOKUP = {(f, t): to for f, t, to in TRANSITIONS}


def transition_table() -> frozenset:
    return TRANSITIONS


def next_state(state: RobotState, trigger: str) -> RobotState | None:
    """Destination of ``trigger`` from ``state``; None when there is no such edge."""
    return _EDGE_LOOKUP.get((state, trigger))


@dataclass(frozen=True)
class WheelParams:
    hard_turn_threshold: float = 90.0  # degrees
    soft_turn_threshold: float = 70.0
    no_turn_threshold: float = 10.0
    max_speed: float = 10.0  # cm/s wheel speed

    def __post_init__(self):
        if not (0 <= self.no_turn_threshold < self.soft_turn_threshold < self.hard_turn_threshold):
            raise ValueError("turn thresholds must satisfy no_turn < soft_turn < hard_turn")
        if self.max_speed <= 0:
            raise ValueError("max_speed must be positive")


@dataclass(frozen=True)
class ControllerParams:
    # diffusion
    go_straight_angle_range: float = 5.0  # degrees, symmetric
    delta: float = 0.1
    # state timing, seconds
    minimum_resting_time: float = 0.1
    initial_exploring_time: float = 1.0
    minimum_search_for_place_in_nest: float = 5.0
    # wheel turning
    hard_turn_angle_threshold: float = 90.0
    soft_turn_angle_threshold: float = 70.0
    no_turn_angle_threshold: float = 10.0
    max_speed: float = 10.0
    # platform
    tick_seconds: float = 0.1
    wheel_speed_unit: float = 0.01  # metres per wheel-speed unit (cm/s -> m/s)
    interwheel_distance: float = 0.14
    robot_radius: float = 0.085
    # subgoal formation distances, metres
    detect_range: float = 0.30
    anchor_distance: float = 0.70
    anchor_tolerance: float = 0.02
    visibility_range: float = 1.00
    repulsion_range: float = 0.20
    min_anchor_spacing: float = 0.30
    # alignment
    align_epsilon: float = 0.05
    optimization_step: float = 0.05
    min_optimization_step: float = 0.001
    # exploration
    budget_growth: float = 1.5
    exploration_spread: float = 90.0  # degrees, bound on the accumulated heading offset
    diffusion_gain: float = 2.0
    nest_arrival_margin: float = 0.6
    seek_stall_ticks: int = 150
    explore_stall_ticks: int = 60
    explore_stall_distance: float = 0.05
    crowd_arrival_range: float = 1.5
    home_stall_ticks: int = 40
    trail_spacing: float = 0.05
    shortcut_period: int = 10
    home_stall_distance: float = 0.03
    crowd_stall_ticks: int = 50
    # task allocation
    task_allocation: bool = True
    complexity_delta: float = 2.0
    terminate_beacon_period: int = 10

    def __post_init__(self):
        self.wheel  # validates thresholds
        if self.tick_seconds <= 0:
            raise ValueError("tick_seconds must be positive")

    @cached_property
    def wheel(self) -> WheelParams:
        return WheelParams(
            self.hard_turn_angle_threshold,
            self.soft_turn_angle_threshold,
            self.no_turn_angle_threshold,
            self.max_speed,
        )

    def ticks(self, seconds: float) -> int:
        return max(1, int(round(seconds / self.tick_seconds)))

    @property
    def speed_mps(self) -> float:
        return self.max_speed * self.wheel_speed_unit

    @property
    def step_length(self) -> float:
        """Distance covered in one tick at full speed."""
        return self.speed_mps * self.tick_seconds


REST_FOREVER = 1 << 40


@dataclass(eq=False)
class Robot:
    id: int
    x: float
    y: float
    heading: float
    state: RobotState = RobotState.RESTING
    goal_founder: bool = False
    exploring_ticks: int = 0
    resting_ticks_remaining: int = 1
    exploration_budget: int = 10
    anchored: bool = False
    converged: bool = False
    retreated: bool = False
    anchored_pos: Point | None = None
    target_id: int | None = None
    target_pos: Point | None = None
    nest_side_id: int | None = None
    last_visible_pos: Point | None = None
    role: Role = Role.UNASSIGNED
    offset: float = 0.0
    follow_sign: int = 0
    follow_clear: int = 0
    acked: bool = False
    founder_attempt_ticks: int = 0
    founder_wait: int = 0
    n_required: int | None = None
    responders: list = field(default_factory=list)
    assigned: list = field(default_factory=list)
    seek_ticks: int = 0
    trail: list = field(default_factory=list, repr=False)
    on_trail: bool = False
    home_best: float = math.inf
    explore_mark: Point | None = None
    home_ticks: int = 0
    home_mark: Point | None = None
    home_stall: int = 0
    seek_mark: Point | None = None
    alignment_trace: list = field(default_factory=list)
    rng_stream: int = 0
    rng: random.Random = field(default_factory=random.Random, repr=False)

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.heading)

    @property
    def led(self) -> Color:
        return led_color(self.state, self.goal_founder, self.anchored, self.converged)

    @property
    def static(self) -> bool:
        """Immovable for collision resolution."""
        s = self.state
        if s is RobotState.SUBGOAL:
            return self.anchored
        return s in (RobotState.RECOVERY, RobotState.HEURISTIC_OPT1, RobotState.HEURISTIC_OPT2)

    def claims_target(self) -> bool:
        """Whether this robot currently extends (or is extending) its target."""
        s = self.state
        if s in (RobotState.SUBGOAL, RobotState.HEURISTIC_OPT1, RobotState.HEURISTIC_OPT2):
            return True
        return s is RobotState.RECOVERY and not self.retreated


def led_color(state: RobotState, goal_founder: bool, anchored: bool = False, converged: bool = False) -> Color:
    """Signal colour for a robot.

    Seeking subgoals show white and turn red once anchored; alignment robots
    keep the colour of their previous role until they converge.
    """
    if state is RobotState.RESTING:
        return Color.WHITE
    if state is RobotState.EXPLORING:
        return Color.OFF
    if state is RobotState.RETURN_TO_NEST:
        return Color.CYAN
    if state is RobotState.SUBGOAL:
        return Color.RED if anchored else Color.WHITE
    if state is RobotState.DECISION_MAKING:
        return Color.FOUNDER_MAGENTA if goal_founder else Color.INTENSE_MAGENTA
    if state is RobotState.RECOVERY:
        return Color.MAGENTA
    if state is RobotState.HEURISTIC_OPT1:
        return Color.BLUE if converged else Color.RED
    if state is RobotState.HEURISTIC_OPT2:
        return Color.RED_YELLOW if converged else Color.BLUE
    raise SimulationFault(f"no colour for {state}")


class Actuation(NamedTuple):
    """Wheel speeds (left, right) in wheel units, or a short straight move to
    ``goto`` (pivot-then-drive) used for precise positioning."""

    left: float = 0.0
    right: float = 0.0
    goto: Point | None = None


STOP = Actuation()


@dataclass(frozen=True, slots=True)
class AnchorEvent:
    position: Point
    target_id: int


@dataclass(frozen=True, slots=True)
class ConvergedEvent:
    error: float


@dataclass(frozen=True, slots=True)
class OptimizationMove:
    dx: float
    dy: float
    error_after: float


@dataclass(frozen=True, slots=True)
class AlignmentGeometry:
    """Anchor bearings (world frame, radians) and distances seen by the aligning robot.

    theta1/x_dist point at the goal-side anchor, theta2/y_dist at the nest side.
    """

    theta1: float
    theta2: float
    x_dist: float
    y_dist: float

    @classmethod
    def from_points(cls, robot: Point, goal_side: Point, nest_side: Point) -> "AlignmentGeometry":
        gx, gy = goal_side[0] - robot[0], goal_side[1] - robot[1]
        nx, ny = nest_side[0] - robot[0], nest_side[1] - robot[1]
        return cls(math.atan2(gy, gx), math.atan2(ny, nx), math.hypot(gx, gy), math.hypot(nx, ny))

    def anchors(self) -> tuple[Point, Point]:
        """(goal_side, nest_side) relative to the robot."""
        return (
            (self.x_dist * math.cos(self.theta1), self.x_dist * math.sin(self.theta1)),
            (self.y_dist * math.cos(self.theta2), self.y_dist * math.sin(self.theta2)),
        )


@dataclass(slots=True)
class Perception:
    """Everything a controller may look at for one tick."""

    tick: int = 0
    blobs: list = field(default_factory=list)
    inbox: list = field(default_factory=list)
    diffusion: tuple[float, float] = (0.0, 0.0)
    obstacle_push: tuple[float, float] = (0.0, 0.0)
    nest_range: float = math.inf
    nest_dir: tuple[float, float] = (0.0, 0.0)
    nest_radius: float = 0.25
    # free_check(start, end, anchors) -> bool; supplied by the engine
    free_check: Callable | None = None
    # path_clear(start, end) -> bool: a straight drive misses walls and obstacles
    path_clear: Callable | None = None


@dataclass
class StepResult:
    actuation: Actuation = STOP
    frames: list = field(default_factory=list)
    events: list = field(default_factory=list)
    claim_founder: bool = False


# --------------------------------------------------------------------------
# primitives


def wheel_command(heading_error: float, params: WheelParams) -> tuple[float, float]:
    """(left, right) wheel speeds for a heading error (positive = turn left)."""
    err = abs(math.degrees(heading_error))
    vmax = params.max_speed
    if err < params.no_turn_threshold:
        return (vmax, vmax)
    if err >= params.hard_turn_threshold:
        outer, inner = vmax, -vmax
    else:
        outer, inner = vmax, vmax * (1.0 - err / params.hard_turn_threshold)
    return (inner, outer) if heading_error > 0 else (outer, inner)


def recovery_check(target_visible: bool, distance_to_target: float, was_tracked: bool = True,
                   visibility_range: float = 1.0) -> bool:
    """Enter recovery when a tracked target vanished while it should still be in view."""
    return was_tracked and not target_visible and distance_to_target <= visibility_range


def recovery_repulsion(recovery_pos: Point, other_pos: Point, repulsion_range: float = 0.20):
    """Unit push away from a recovery robot, or None outside its band.

    Coincident positions push along +x.
    """
    dx = other_pos[0] - recovery_pos[0]
    dy = other_pos[1] - recovery_pos[1]
    d = math.hypot(dx, dy)
    if d > repulsion_range:
        return None
    if d < 1e-12:
        return (1.0, 0.0)
    return (dx / d, dy / d)


def alignment_error(geom: AlignmentGeometry) -> float:
    """|pi - angle between the two anchor bearings|; zero when collinear between them."""
    spread = abs(wrap_angle(geom.theta1 - geom.theta2))
    return abs(math.pi - spread)


def optimization_step(
    geom: AlignmentGeometry,
    step_size: float,
    epsilon: float = 0.05,
    free: Callable[[Point], bool] | None = None,
    min_step: float = 0.001,
    margin: float = 0.17,
):
    """One alignment move toward the anchor-anchor chord.

    Returns a relative :class:`OptimizationMove`, or :class:`ConvergedEvent`
    when aligned or when no admissible move remains.
    """
    e = alignment_error(geom)
    if e < epsilon:
        return ConvergedEvent(e)
    (bx, by), (ax, ay) = geom.anchors()
    abx, aby = bx - ax, by - ay
    ab = math.hypot(abx, aby)
    if ab < 1e-12:
        return ConvergedEvent(e)
    # foot of the perpendicular, kept off the anchors themselves
    t = -(ax * abx + ay * aby) / (ab * ab)
    m = min(margin / ab, 0.5)
    t = min(max(t, m), 1.0 - m)
    px, py = ax + t * abx, ay + t * aby
    dist = math.hypot(px, py)
    if dist < 1e-9:
        return ConvergedEvent(e)
    s = min(step_size, dist)
    while s >= min_step:
        cx, cy = px / dist * s, py / dist * s
        moved = AlignmentGeometry.from_points((cx, cy), (bx, by), (ax, ay))
        e_new = alignment_error(moved)
        if e_new <= e + 1e-12 and (free is None or free((cx, cy))):
            return OptimizationMove(cx, cy, e_new)
        s *= 0.5
    return ConvergedEvent(e)


# --------------------------------------------------------------------------
# controller helpers


def _transition(robot: Robot, trigger: str, to: RobotState, out: StepResult) -> None:
    if (robot.state, trigger, to) not in TRANSITIONS:
        raise SimulationFault(f"robot {robot.id}: no edge {robot.state.value} --{trigger}--> {to.value}")
    out.events.append(("transition", f"{robot.state.value}>{to.value}:{trigger}"))
    robot.state = to
    if to in (RobotState.RETURN_TO_NEST, RobotState.DECISION_MAKING):
        robot.home_best = math.inf
        robot.home_stall = 0
        robot.on_trail = False


def _steer(robot: Robot, dx: float, dy: float, params: ControllerParams) -> Actuation:
    if dx == 0.0 and dy == 0.0:
        return STOP
    err = wrap_angle(math.atan2(dy, dx) - robot.heading)
    left, right = wheel_command(err, params.wheel)
    return Actuation(left, right)


def _blob_xy(robot: Robot, b: Blob) -> Point:
    a = robot.heading + b.bearing
    return (robot.x + b.range * math.cos(a), robot.y + b.range * math.sin(a))


def _find(blobs, source_id):
    for b in blobs:
        if b.source_id == source_id:
            return b
    return None


def _repulsion(robot: Robot, perc: Perception, params: ControllerParams) -> tuple[float, float]:
    rx = ry = 0.0
    for b in perc.blobs:
        if b.range > params.repulsion_range:
            break
        if b.state is RobotState.RECOVERY:
            a = robot.heading + b.bearing
            # push straight away from the recovery robot
            rx -= math.cos(a)
            ry -= math.sin(a)
    return rx, ry


def _home_vector(robot: Robot, perc: Perception, params: ControllerParams, push=None) -> tuple[float, float]:
    """Direction toward the nest with wall following around obstacles.

    A robot that stops making headway reverses its wall-following side, which
    gets it out of dead-end pockets.
    """
    robot.home_ticks += 1
    if robot.home_ticks % params.home_stall_ticks == 0:
        here = (robot.x, robot.y)
        mark = robot.home_mark
        robot.home_mark = here
        if mark is not None and math.dist(mark, here) < params.home_stall_distance:
            robot.follow_sign = -robot.follow_sign if robot.follow_sign else robot.rng.choice((1, -1))
            robot.follow_clear = 0
    nx, ny = perc.nest_dir
    px, py = perc.obstacle_push if push is None else push
    pm = math.hypot(px, py)
    if pm >= params.delta:
        ux, uy = px / pm, py / pm
        if nx * ux + ny * uy < -0.3:
            if robot.follow_sign == 0:
                t = -uy * nx + ux * ny
                if t > 1e-9:
                    robot.follow_sign = 1
                elif t < -1e-9:
                    robot.follow_sign = -1
                else:
                    robot.follow_sign = robot.rng.choice((1, -1))
            robot.follow_clear = 0
            s = robot.follow_sign
            return (-uy * s + 0.3 * ux, ux * s + 0.3 * uy)
    if robot.follow_sign:
        robot.follow_clear += 1
        if robot.follow_clear > 30:
            robot.follow_sign = 0
    dx, dy = perc.diffusion
    if math.hypot(dx, dy) >= params.delta:
        nx += params.diffusion_gain * dx
        ny += params.diffusion_gain * dy
    return nx, ny


def _at_nest(robot: Robot, perc: Perception, params: ControllerParams) -> bool:
    """Inside the nest zone, or held up by the crowd at its edge."""
    r = perc.nest_range
    if r <= perc.nest_radius + params.nest_arrival_margin:
        return True
    if r < robot.home_best - 0.01:
        robot.home_best = r
        robot.home_stall = 0
        return False
    robot.home_stall += 1
    return r <= params.crowd_arrival_range and robot.home_stall >= params.crowd_stall_ticks


def _attraction(robot: Robot, perc: Perception, params: ControllerParams):
    """Nearest beacon worth approaching, or None."""
    for b in perc.blobs:
        if _is_target(b, robot, params):
            return b
    return None


def _is_target(b: Blob, robot: Robot, params: ControllerParams) -> bool:
    if not b.open:
        return False
    if b.source_id == GOAL_ID:
        return True
    if robot.role is not Role.PATH:
        return False
    return b.state is RobotState.SUBGOAL and b.color is Color.RED


# --------------------------------------------------------------------------
# behaviours


def explore_step(robot: Robot, perc: Perception, params: ControllerParams, rng: random.Random) -> Actuation:
    """Head away from the nest along a randomly drifting offset.

    The offset takes a uniform step inside the go-straight range each tick and
    stays within +/- ``exploration_spread``.  Proximity diffusion, recovery
    repulsion and visible beacons bend the heading.
    """
    robot.exploring_ticks += 1
    here = (robot.x, robot.y)
    if not robot.trail or math.dist(robot.trail[-1], here) >= params.trail_spacing:
        _extend_trail(robot.trail, here, params.trail_spacing)
    a = math.radians(params.go_straight_angle_range)
    spread = math.radians(params.exploration_spread)
    robot.offset = min(max(robot.offset + rng.uniform(-a, a), -spread), spread)
    nx, ny = perc.nest_dir
    if nx == 0.0 and ny == 0.0:
        base = robot.heading
    else:
        base = math.atan2(-ny, -nx)
    ang = base + robot.offset
    dx, dy = math.cos(ang), math.sin(ang)
    skirting = False
    beacon = _attraction(robot, perc, params)
    if beacon is not None:
        ba = robot.heading + beacon.bearing
        dx, dy = math.cos(ba), math.sin(ba)
    else:
        px, py = perc.obstacle_push
        pm = math.hypot(px, py)
        if pm >= params.delta and (dx * px + dy * py) / pm < -0.3:
            # blocked: skirt the obstacle on a side drawn once per encounter
            if robot.follow_sign == 0:
                robot.follow_sign = rng.choice((1, -1))
            robot.follow_clear = 0
            ux, uy = px / pm, py / pm
            s = robot.follow_sign
            dx, dy = -uy * s + 0.3 * ux, ux * s + 0.3 * uy
            skirting = True
        elif robot.follow_sign:
            robot.follow_clear += 1
            if robot.follow_clear > 30:
                robot.follow_sign = 0
    fx, fy = perc.diffusion
    # a wall being skirted must not push the robot back out of concave corners
    if not skirting and math.hypot(fx, fy) >= params.delta:
        dx += params.diffusion_gain * fx
        dy += params.diffusion_gain * fy
    rx, ry = _repulsion(robot, perc, params)
    return _steer(robot, dx + 3.0 * rx, dy + 3.0 * ry, params)


def subgoal_positioning_step(robot: Robot, target: Blob, perc: Perception, params: ControllerParams):
    """Back away nest-ward from the tracked target until the anchor distance.

    Returns an :class:`AnchorEvent` when the robot should become a static
    subgoal, otherwise the movement command.
    """
    here = (robot.x, robot.y)
    if (
        target.range >= params.anchor_distance - params.anchor_tolerance
        or perc.nest_range <= perc.nest_radius
    ):
        return AnchorEvent(here, target.source_id)
    robot.seek_ticks += 1
    if robot.seek_ticks % params.seek_stall_ticks == 0:
        mark = robot.seek_mark
        robot.seek_mark = here
        if mark is not None and math.dist(mark, here) < 0.02:
            if robot.trail and not robot.on_trail:
                _join_trail(robot)
            elif robot.trail:
                # the trail itself is blocked; fall back to homing
                robot.trail = []
            elif target.range >= params.min_anchor_spacing:
                return AnchorEvent(here, target.source_id)
    _plan_home(robot, perc, params, robot.seek_ticks)
    # anything in the way, robots included, is skirted
    hx, hy = _retrace(robot, perc, params, perc.diffusion)
    rx, ry = _repulsion(robot, perc, params)
    return _steer(robot, hx + 3.0 * rx, hy + 3.0 * ry, params)


def _extend_trail(trail: list, here: Point, spacing: float) -> None:
    """Append ``here``, erasing any loop it closes so retracing never circles."""
    hx, hy = here
    reach2 = 4.0 * spacing * spacing
    for k in range(len(trail) - 3):
        px, py = trail[k]
        if (px - hx) ** 2 + (py - hy) ** 2 < reach2:
            del trail[k + 1:]
            break
    trail.append(here)


def _plan_home(robot: Robot, perc: Perception, params: ControllerParams, clock: int) -> None:
    """Every few ticks: take to the trail if the nest-ward view is obstructed,
    and cut ahead along it."""
    if clock % params.shortcut_period != 1 or not robot.trail:
        return
    if not robot.on_trail and _nestward_blocked(robot, perc, params):
        _join_trail(robot)
    if robot.on_trail:
        _shortcut(robot, perc, params)


def _nestward_blocked(robot: Robot, perc: Perception, params: ControllerParams) -> bool:
    """Whether the straight nest-ward run within camera range is obstructed."""
    if perc.path_clear is None:
        return False
    nx, ny = perc.nest_dir
    reach = min(params.visibility_range, max(perc.nest_range - perc.nest_radius, 0.0))
    if reach < params.trail_spacing:
        return False
    return not perc.path_clear((robot.x, robot.y), (robot.x + nx * reach, robot.y + ny * reach))


def _shortcut(robot: Robot, perc: Perception, params: ControllerParams, tries: int = 3) -> None:
    """Skip to the earliest trail point in plain view, straightening the retrace."""
    if perc.path_clear is None:
        return
    trail = robot.trail
    here = (robot.x, robot.y)
    last = len(trail) - 2
    for k, p in enumerate(trail[:last]):
        if math.dist(p, here) > params.visibility_range:
            continue
        if perc.path_clear(here, p):
            del trail[k + 1:]
            return
        tries -= 1
        if tries == 0:
            return


def _join_trail(robot: Robot) -> None:
    """Cut the trail at its point nearest the robot and start following it."""
    here = (robot.x, robot.y)
    trail = robot.trail
    k = min(range(len(trail)), key=lambda i: math.dist(trail[i], here))
    del trail[k + 1:]
    robot.on_trail = True


def _blocked_homeward(perc: Perception, params: ControllerParams) -> bool:
    px, py = perc.obstacle_push
    pm = math.hypot(px, py)
    if pm < params.delta:
        return False
    nx, ny = perc.nest_dir
    return (nx * px + ny * py) / pm < -0.3


def _retrace(robot: Robot, perc: Perception, params: ControllerParams, push=None) -> tuple[float, float]:
    """Head toward the nest; once an obstacle blocks the way, retrace the
    exploration trail instead."""
    trail = robot.trail
    here = (robot.x, robot.y)
    if not robot.on_trail:
        if not (trail and _blocked_homeward(perc, params)):
            return _home_vector(robot, perc, params, push)
        _join_trail(robot)
    while trail and math.dist(trail[-1], here) < params.trail_spacing:
        trail.pop()
    if not trail:
        return _home_vector(robot, perc, params, push)
    tx, ty = trail[-1]
    dx, dy = tx - here[0], ty - here[1]
    d = math.hypot(dx, dy)
    fx, fy = perc.diffusion
    if math.hypot(fx, fy) >= params.delta:
        return dx / d + fx, dy / d + fy
    return dx / d, dy / d


def _homing(robot: Robot, perc: Perception, params: ControllerParams) -> tuple[float, float]:
    """Nest-ward heading for returning robots; a trail that stops making
    headway is abandoned."""
    if robot.on_trail:
        robot.home_ticks += 1
        if robot.home_ticks % params.home_stall_ticks == 0:
            here = (robot.x, robot.y)
            mark = robot.home_mark
            robot.home_mark = here
            if mark is not None and math.dist(mark, here) < params.home_stall_distance:
                robot.trail = []
                robot.on_trail = False
    _plan_home(robot, perc, params, perc.tick + robot.id)
    return _retrace(robot, perc, params)


def _enter_subgoal(robot: Robot, target: Blob, out: StepResult) -> None:
    _transition(robot, "c", RobotState.SUBGOAL, out)
    robot.anchored = False
    robot.target_id = target.source_id
    robot.target_pos = None
    robot.last_visible_pos = None
    robot.seek_ticks = 0
    robot.seek_mark = None
    robot.on_trail = False
    robot.follow_sign = 0
    out.events.append(("seek", target.source_id))


def _start_exploring(robot: Robot, params: ControllerParams) -> None:
    robot.exploring_ticks = 0
    robot.explore_mark = None
    robot.trail = [(robot.x, robot.y)]
    a = math.radians(params.go_straight_angle_range)
    robot.offset = robot.rng.uniform(-a, a)
    robot.follow_sign = 0


def _handle_resting(robot, perc, params, rng, out):
    robot.resting_ticks_remaining -= 1
    if robot.role is Role.REST:
        period = params.terminate_beacon_period
        if (perc.tick + robot.id) % period == 0:
            out.frames.append(encode_frame(0, robot.id, Flags(terminate=True)))
        return STOP
    if robot.resting_ticks_remaining <= 0:
        _transition(robot, "i", RobotState.EXPLORING, out)
        _start_exploring(robot, params)
    return STOP


def _handle_exploring(robot, perc, params, rng, out):
    if params.task_allocation and robot.role is Role.UNASSIGNED:
        for b in perc.blobs:
            if b.range > params.detect_range:
                break
            if b.source_id == GOAL_ID:
                _transition(robot, "j", RobotState.DECISION_MAKING, out)
                out.claim_founder = True
                robot.founder_attempt_ticks = robot.exploring_ticks
                return STOP
        for b in perc.blobs:
            if b.state in (RobotState.DECISION_MAKING, RobotState.HEURISTIC_OPT1, RobotState.HEURISTIC_OPT2):
                _transition(robot, "e", RobotState.DECISION_MAKING, out)
                return STOP
        for f in perc.inbox:
            if f.is_broadcast and (f.data[9] or f.data[7]):
                _transition(robot, "e", RobotState.DECISION_MAKING, out)
                return STOP
    elif robot.role is not Role.REST:
        for b in perc.blobs:
            if b.range > params.detect_range:
                break
            if _is_target(b, robot, params):
                _enter_subgoal(robot, b, out)
                if b.source_id == GOAL_ID:
                    out.claim_founder = True
                return STOP
        for b in perc.blobs:
            if b.range > params.repulsion_range:
                break
            if b.state is RobotState.RECOVERY and b.target_id is not None:
                lost = _find(perc.blobs, b.target_id)
                if lost is not None and _is_target(lost, robot, params):
                    _enter_subgoal(robot, lost, out)
                    out.events.append(("inherit", b.source_id))
                    return STOP
    pinned = False
    if robot.exploring_ticks % params.explore_stall_ticks == 0:
        here = (robot.x, robot.y)
        mark = robot.explore_mark
        robot.explore_mark = here
        pinned = mark is not None and math.dist(mark, here) < params.explore_stall_distance
    # budget spent, or wedged in a corner or crowd
    if robot.exploring_ticks >= robot.exploration_budget or pinned:
        _transition(robot, "b", RobotState.RETURN_TO_NEST, out)
        robot.follow_sign = 0
        return STOP
    return explore_step(robot, perc, params, rng)


def _handle_return(robot, perc, params, rng, out):
    if _at_nest(robot, perc, params):
        _transition(robot, "d", RobotState.EXPLORING, out)
        robot.exploration_budget = int(math.ceil(robot.exploration_budget * params.budget_growth))
        _start_exploring(robot, params)
        return STOP
    hx, hy = _homing(robot, perc, params)
    rx, ry = _repulsion(robot, perc, params)
    return _steer(robot, hx + 3.0 * rx, hy + 3.0 * ry, params)


def _handle_decision(robot, perc, params, rng, out):
    if robot.goal_founder:
        done = _founder_round(robot, perc, params, out)
        if done:
            robot.role = Role.PATH
            _transition(robot, "k", RobotState.RETURN_TO_NEST, out)
            return STOP
    else:
        confirmed = terminated = False
        request = None
        for f in perc.inbox:
            if f.target == robot.id and f.data[8]:
                confirmed = True
            elif f.is_broadcast and f.data[7]:
                terminated = True
            elif f.is_broadcast and f.data[9] and request is None:
                request = f
        if confirmed:
            robot.role = Role.PATH
            _transition(robot, "k", RobotState.RETURN_TO_NEST, out)
            return STOP
        if terminated:
            robot.role = Role.REST
            _transition(robot, "l", RobotState.RESTING, out)
            robot.resting_ticks_remaining = REST_FOREVER
            return STOP
        if request is not None and not robot.acked:
            robot.acked = True
            t = min(robot.exploring_ticks, 65535)
            out.frames.append(encode_frame(t, robot.id, Flags(ack=True), target=request.sender))
    hx, hy = _homing(robot, perc, params)
    return _steer(robot, hx, hy, params)


def _founder_round(robot: Robot, perc: Perception, params: ControllerParams, out: StepResult) -> bool:
    """Request / ack / terminate exchange run by the goal founder at the nest."""
    if not _at_nest(robot, perc, params):
        if robot.n_required is None:
            # the current excursion runs until the founder is back at the nest
            robot.founder_attempt_ticks += 1
        return False
    t_ticks = min(robot.founder_attempt_ticks, 65535)
    if robot.n_required is None:
        robot.n_required = required_robot_count(
            params.speed_mps, t_ticks * params.tick_seconds, params.visibility_range, params.complexity_delta
        )
        robot.founder_wait = 0
        out.events.append(("alloc_start", robot.n_required))
    robot.founder_wait += 1
    for f in perc.inbox:
        if f.target == robot.id and f.data[8] and f.sender not in robot.responders:
            robot.responders.append(f.sender)
    n = robot.n_required
    for rid in robot.responders[len(robot.assigned):]:
        if len(robot.assigned) >= n:
            break
        robot.assigned.append(rid)
        out.frames.append(encode_frame(t_ticks, robot.id, Flags(ack=True), target=rid))
    wait_limit = max(params.ticks(params.minimum_search_for_place_in_nest), robot.founder_attempt_ticks)
    if len(robot.assigned) >= n or robot.founder_wait >= wait_limit:
        out.frames.append(encode_frame(t_ticks, robot.id, Flags(terminate=True)))
        out.events.append(("alloc_done", (n, tuple(robot.responders))))
        return True
    out.frames.append(encode_frame(t_ticks, robot.id, Flags(request=True)))
    return False


def _handle_subgoal(robot, perc, params, rng, out):
    if robot.anchored:
        nest = _find(perc.blobs, NEST_ID)
        if nest is not None:
            robot.nest_side_id = NEST_ID
            _begin_alignment(robot, "g", RobotState.HEURISTIC_OPT1, out)
            return STOP
        for b in perc.blobs:
            if (
                b.state is RobotState.HEURISTIC_OPT1
                and b.converged
                and b.target_id == robot.id
            ):
                robot.nest_side_id = b.source_id
                _begin_alignment(robot, "g", RobotState.HEURISTIC_OPT1, out)
                return STOP
        return STOP
    target = _find(perc.blobs, robot.target_id)
    if target is None:
        dist = math.dist((robot.x, robot.y), robot.target_pos) if robot.target_pos else math.inf
        if recovery_check(False, dist, robot.target_pos is not None, params.visibility_range):
            _transition(robot, "f", RobotState.RECOVERY, out)
            robot.retreated = False
            return STOP
        if robot.target_pos is not None:
            return _steer(robot, robot.target_pos[0] - robot.x, robot.target_pos[1] - robot.y, params)
        return STOP
    robot.last_visible_pos = (robot.x, robot.y)
    robot.target_pos = _blob_xy(robot, target)
    res = subgoal_positioning_step(robot, target, perc, params)
    if isinstance(res, AnchorEvent):
        _anchor(robot, out)
        return STOP
    return res


def _anchor(robot: Robot, out: StepResult) -> None:
    robot.anchored = True
    robot.anchored_pos = (robot.x, robot.y)
    out.events.append(("anchor", (robot.target_id, robot.x, robot.y)))


def _begin_alignment(robot: Robot, trigger: str, to: RobotState, out: StepResult) -> None:
    _transition(robot, trigger, to, out)
    robot.converged = False
    robot.alignment_trace = []


def _handle_recovery(robot, perc, params, rng, out):
    if not robot.retreated:
        lv = robot.last_visible_pos
        if lv is None or math.dist(lv, (robot.x, robot.y)) < 1e-6:
            robot.retreated = True
        else:
            return Actuation(goto=lv)
    target = _find(perc.blobs, robot.target_id)
    if target is not None and target.range >= params.min_anchor_spacing and target.open:
        _transition(robot, "recovered", RobotState.SUBGOAL, out)
        _anchor(robot, out)
    return STOP


def _handle_alignment(robot, perc, params, rng, out):
    goal_side = _find(perc.blobs, robot.target_id)
    nest_side = _find(perc.blobs, robot.nest_side_id)
    opt1 = robot.state is RobotState.HEURISTIC_OPT1
    if robot.converged:
        if opt1:
            if robot.target_id == GOAL_ID or (
                goal_side is not None
                and goal_side.state is RobotState.HEURISTIC_OPT2
                and goal_side.converged
            ):
                _begin_alignment(robot, "h", RobotState.HEURISTIC_OPT2, out)
        elif robot.nest_side_id == NEST_ID or (
            nest_side is not None and nest_side.state is RobotState.RESTING
        ):
            _transition(robot, "a", RobotState.RESTING, out)
            robot.resting_ticks_remaining = REST_FOREVER
            if robot.nest_side_id == NEST_ID:
                out.events.append(("path_formed", robot.id))
        return STOP
    if goal_side is None or nest_side is None:
        return STOP
    here = (robot.x, robot.y)
    g = _blob_xy(robot, goal_side)
    n = _blob_xy(robot, nest_side)
    geom = AlignmentGeometry.from_points(here, g, n)
    free = None
    if perc.free_check is not None:
        def free(rel, _fc=perc.free_check):
            return _fc(here, (here[0] + rel[0], here[1] + rel[1]), (g, n))
    res = optimization_step(
        geom,
        params.optimization_step,
        params.align_epsilon,
        free,
        params.min_optimization_step,
        2 * params.robot_radius,
    )
    robot.alignment_trace.append(alignment_error(geom))
    if isinstance(res, ConvergedEvent):
        robot.converged = True
        out.events.append(("converged", (robot.state.value, robot.x, robot.y)))
        return STOP
    return Actuation(goto=(robot.x + res.dx, robot.y + res.dy))


_HANDLERS = {
    RobotState.RESTING: _handle_resting,
    RobotState.EXPLORING: _handle_exploring,
    RobotState.RETURN_TO_NEST: _handle_return,
    RobotState.DECISION_MAKING: _handle_decision,
    RobotState.SUBGOAL: _handle_subgoal,
    RobotState.RECOVERY: _handle_recovery,
    RobotState.HEURISTIC_OPT1: _handle_alignment,
    RobotState.HEURISTIC_OPT2: _handle_alignment,
}


def step_fsm(robot: Robot, perc: Perception, params: ControllerParams, rng: random.Random | None = None) -> StepResult:
    """Advance one robot by one tick.

    Mutates ``robot`` (it is owned by the caller's thread) and returns the
    actuation plus outgoing frames and log events.  At most one transition
    fires per call.
    """
    out = StepResult()
    out.actuation = _HANDLERS[robot.state](robot, perc, params, rng if rng is not None else robot.rng, out)
    if len(out.events) > 1:
        n_transitions = sum(1 for kind, _ in out.events if kind == "transition")
        if n_transitions > 1:
            raise SimulationFault(f"robot {robot.id} fired {n_transitions} transitions in one tick")
    return out
