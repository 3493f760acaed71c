"""Range-and-bearing messaging, the 10-byte task-allocation frame, and
response-order task assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

FRAME_SIZE = 10
BROADCAST = None


class ProtocolError(ValueError):
    pass


class Flags(NamedTuple):
    terminate: bool = False
    ack: bool = False
    request: bool = False


@dataclass(frozen=True, slots=True)
class ProtocolFrame:
    """Ten byte slots plus addressing.

    ``target`` is ``None`` for broadcast, otherwise the unicast receiver id.
    ``sender`` and ``sent_tick`` are channel metadata (range-and-bearing
    tells the receiver who spoke), not payload.
    """

    data: tuple[int, ...]
    target: int | None = BROADCAST
    sender: int = -1
    sent_tick: int = 0

    def __post_init__(self):
        if len(self.data) != FRAME_SIZE:
            raise ProtocolError(f"frame must have {FRAME_SIZE} slots, got {len(self.data)}")
        if any(not (0 <= v <= 255) for v in self.data):
            raise ProtocolError("slot values must be bytes")

    @property
    def is_broadcast(self) -> bool:
        return self.target is None

    def hex(self) -> str:
        return bytes(self.data).hex()


def encode_frame(
    exploring_time_ticks: int,
    robot_id: int,
    flags: Flags | tuple[bool, bool, bool] = Flags(),
    *,
    target: int | None = BROADCAST,
    sender: int = -1,
    sent_tick: int = 0,
) -> ProtocolFrame:
    """Pack exploring time (slots 0-1) and robot id (slots 5-6) big-endian."""
    if not (0 <= exploring_time_ticks < 65536):
        raise ProtocolError(f"exploring time {exploring_time_ticks} does not fit two bytes")
    if not (0 <= robot_id < 65536):
        raise ProtocolError(f"robot id {robot_id} does not fit two bytes")
    terminate, ack, request = flags
    data = (
        exploring_time_ticks // 256,
        exploring_time_ticks % 256,
        0,
        0,
        0,
        robot_id // 256,
        robot_id % 256,
        int(bool(terminate)),
        int(bool(ack)),
        int(bool(request)),
    )
    return ProtocolFrame(data, target, sender, sent_tick)


def decode_frame(frame: ProtocolFrame) -> tuple[int, int, Flags]:
    d = frame.data
    if d[2] or d[3] or d[4]:
        raise ProtocolError("reserved slots 2-4 must be zero")
    for slot in (7, 8, 9):
        if d[slot] not in (0, 1):
            raise ProtocolError(f"flag slot {slot} must be 0 or 1")
    return d[0] * 256 + d[1], d[5] * 256 + d[6], Flags(bool(d[7]), bool(d[8]), bool(d[9]))


def required_robot_count(s: float, t: float, v: float, delta: float) -> int:
    """Robots needed to cover the estimated path: ceil(s*t/v + delta)."""
    if v <= 0:
        raise ValueError("visual range must be positive")
    if s <= 0:
        raise ValueError("speed must be positive")
    if t < 0 or delta < 0:
        raise ValueError("exploring time and complexity factor must be non-negative")
    # guard against 7.000000000001 style round-up
    return max(0, math.ceil(round(s * t / v + delta, 9)))


@dataclass
class AllocationResult:
    n_required: int
    assigned_path: list[int] = field(default_factory=list)
    assigned_rest: list[int] = field(default_factory=list)
    flagged: bool = False

    @property
    def shortfall(self) -> int:
        return max(0, self.n_required - len(self.assigned_path))


def allocate_tasks(responses: Sequence[int], n: int) -> AllocationResult:
    """The first ``n`` responders form the path, everyone after them rests."""
    if len(set(responses)) != len(responses):
        raise ValueError("responses must be duplicate-free")
    n = max(0, n)
    return AllocationResult(n, list(responses[:n]), list(responses[n:]))


def run_allocation_round(
    founder,
    in_range: Sequence,
    *,
    speed: float,
    visual_range: float,
    delta: float,
    tick_seconds: float = 0.1,
    arrival_ticks: dict[int, int] | None = None,
    log: list | None = None,
) -> AllocationResult:
    """Replay one request/ack/terminate exchange at the nest.

    ``arrival_ticks`` maps robot id to the tick its ack reaches the founder
    (default: all at once); equal arrivals are ordered by id.  ``log`` receives
    every frame sent, in order.
    """
    if not founder.goal_founder:
        raise ValueError("allocation must be started by the goal founder")
    log = [] if log is None else log
    t_ticks = min(founder.founder_attempt_ticks, 65535)
    n = required_robot_count(speed, t_ticks * tick_seconds, visual_range, delta)
    responders = [r for r in in_range if r.id != founder.id]
    if not responders:
        log.append(encode_frame(t_ticks, founder.id, Flags(request=True), sender=founder.id))
        return AllocationResult(n, [], [], flagged=True)
    arrival_ticks = arrival_ticks or {}
    order = sorted(responders, key=lambda r: (arrival_ticks.get(r.id, 0), r.id))

    log.append(encode_frame(t_ticks, founder.id, Flags(request=True), sender=founder.id))
    accepted: list[int] = []
    terminated = False
    for r in order:
        if len(accepted) >= n:
            log.append(encode_frame(t_ticks, founder.id, Flags(terminate=True), sender=founder.id))
            terminated = True
            break
        log.append(encode_frame(0, r.id, Flags(ack=True), target=founder.id, sender=r.id))
        accepted.append(r.id)
        log.append(encode_frame(t_ticks, founder.id, Flags(ack=True), target=r.id, sender=founder.id))
    if not terminated:
        log.append(encode_frame(t_ticks, founder.id, Flags(terminate=True), sender=founder.id))
    result = allocate_tasks([r.id for r in order], n)
    assert result.assigned_path == accepted[: len(result.assigned_path)]
    return result
