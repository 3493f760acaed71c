"""Nest-to-goal subgoal chains and their connectivity check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .world import CAMERA_RANGE, ArenaSpec, Point, segment_intersects_obstacle


@dataclass(frozen=True)
class SubgoalChain:
    nest: Point
    goal: Point
    anchors: tuple[Point, ...] = ()
    robot_ids: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(tuple(map(float, a)) for a in self.anchors))
        object.__setattr__(self, "robot_ids", tuple(self.robot_ids))
        if self.robot_ids and len(self.robot_ids) != len(self.anchors):
            raise ValueError("one robot id per anchor")

    def points(self) -> list[Point]:
        return [tuple(self.nest), *self.anchors, tuple(self.goal)]

    @property
    def length(self) -> float:
        pts = self.points()
        return float(sum(math.dist(a, b) for a, b in zip(pts, pts[1:])))

    @classmethod
    def from_arena(cls, arena: ArenaSpec, anchors=(), robot_ids=()) -> "SubgoalChain":
        return cls(arena.nest.center, arena.goal.center, tuple(anchors), tuple(robot_ids))


@dataclass
class ChainCheck:
    valid: bool
    violations: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.valid


def validate_chain(chain: SubgoalChain, arena: ArenaSpec, max_gap: float = CAMERA_RANGE) -> ChainCheck:
    """Every consecutive pair (nest and goal included) must be within
    ``max_gap`` with an unobstructed segment between them."""
    violations = []
    pts = chain.points()
    for k, (a, b) in enumerate(zip(pts, pts[1:])):
        gap = math.dist(a, b)
        if gap > max_gap + 1e-9:
            violations.append(("gap", k, gap))
        if segment_intersects_obstacle(a, b, arena):
            violations.append(("occluded", k, gap))
    return ChainCheck(not violations, violations)
