import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmpath.agent import REST_FOREVER, ControllerParams, RobotState, Role
from swarmpath.sim import (
    EMPTY_TRACE_HASH,
    SimParams,
    Status,
    build_world,
    integrate,
    _overlaps,
    _PairCache,
    integrate_many,
    resolve_collisions,
    robot_seed,
    run_until,
    tick,
    trace_hash,
)
from swarmpath.world import GOAL_ID, ArenaSpec, Disk, Rect

R = 0.085


def small_arena(obstacles=()):
    return ArenaSpec(4, 4, tuple(Rect(*o) for o in obstacles), Disk((1.0, 2.0), 0.25), Disk((2.4, 2.0), 0.25))


def quiescent_world(n=3, **kw):
    p = SimParams(**kw)
    w = build_world(small_arena(), n, 0, p)
    for r in w.robots:
        r.role = Role.REST
        r.resting_ticks_remaining = REST_FOREVER
    return w, p


def test_build_world_is_overlap_free():
    w = build_world(small_arena(), 40, 3, SimParams())
    P = np.array([(r.x, r.y) for r in w.robots])
    d = np.hypot(*(P[:, None, :] - P[None, :, :]).transpose(2, 0, 1))
    assert (d[np.triu_indices(40, 1)] >= 2 * R).all()
    assert [r.id for r in w.robots] == list(range(40))


def test_robot_seeds_distinct():
    assert len({robot_seed(7, i) for i in range(200)}) == 200


def test_quiescent_step():
    w, p = quiescent_world()
    before = [r.pose for r in w.robots]
    tick(w, p)
    assert [r.pose for r in w.robots] == before and w.tick == 1


def test_straight_drive_displacement():
    cp = ControllerParams()
    x, y, th = integrate(1.0, 1.0, 0.3, 10, 10, cp)
    assert math.hypot(x - 1, y - 1) == pytest.approx(10 * 0.01 * 0.1)
    assert th == 0.3


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-math.pi, math.pi))
def test_integrate_many_matches_scalar(left, right, th):
    cp = ControllerParams()
    P, H = integrate_many(np.array([[2.0, 1.0]]), np.array([th]), np.array([left]), np.array([right]), cp)
    x, y, h = integrate(2.0, 1.0, th, left, right, cp)
    assert P[0] == pytest.approx((x, y), abs=1e-12) and math.isclose(math.cos(H[0] - h), 1.0)


def test_pure_rotation_stays_in_place():
    x, y, th = integrate(1.0, 1.0, 0.0, -10, 10, ControllerParams())
    assert (x, y) == pytest.approx((1.0, 1.0)) and th > 0


# collisions

def test_no_overlap_identity():
    P = np.array([[1.0, 1.0], [2.0, 1.0]])
    out = resolve_collisions(P.copy(), P.copy(), np.ones(2, bool), small_arena(), R, 12)
    assert np.array_equal(out, P)


def test_head_on_pair_separated():
    prior = np.array([[1.0, 1.0], [1.2, 1.0]])
    proposed = np.array([[1.04, 1.0], [1.16, 1.0]])
    out = resolve_collisions(proposed, prior, np.ones(2, bool), small_arena(), R, 12)
    assert math.dist(out[0], out[1]) >= 2 * R - 1e-9


def test_mover_yields_to_static():
    prior = np.array([[1.0, 1.0], [1.2, 1.0]])
    proposed = np.array([[1.0, 1.0], [1.1, 1.0]])
    movable = np.array([False, True])
    out = resolve_collisions(proposed, prior, movable, small_arena(), R, 12)
    assert tuple(out[0]) == (1.0, 1.0)
    assert math.dist(out[0], out[1]) >= 2 * R - 1e-9


def test_three_way_overlap_deterministic():
    c = np.array([2.0, 2.0])
    ang = np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
    proposed = c + 0.1 * np.stack([np.cos(ang), np.sin(ang)], 1)
    prior = c + 0.3 * np.stack([np.cos(ang), np.sin(ang)], 1)
    outs = [resolve_collisions(proposed.copy(), prior, np.ones(3, bool), small_arena(), R, 12) for _ in range(2)]
    assert np.array_equal(outs[0], outs[1])
    for i in range(3):
        for j in range(i + 1, 3):
            assert math.dist(outs[0][i], outs[0][j]) >= 2 * R - 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pair_cache_matches_full_scan(seed):
    rng = np.random.default_rng(seed)
    P = rng.random((40, 2)) * 2.0
    cache = _PairCache(R)
    for _ in range(6):
        got = cache.overlaps(P)
        want = _overlaps(P, R)
        assert all(np.array_equal(a, b) for a, b in zip(got, want))
        P = P + rng.normal(0, 0.03, P.shape)


def test_obstacle_push_out():
    arena = small_arena([(1.8, 0.5, 2.2, 1.5)])
    prior = np.array([[1.6, 1.0]])
    proposed = np.array([[1.75, 1.0]])
    out = resolve_collisions(proposed, prior, np.ones(1, bool), arena, R, 12)
    assert out[0][0] <= 1.8 - R + 1e-9


# run loop

def test_max_ticks_zero_rejected():
    w, p = quiescent_world()
    with pytest.raises(ValueError):
        run_until(w, p, 0)


def test_scripted_chain_completes_at_known_tick():
    # one anchored subgoal midway between nest and goal: opt1, converge, opt2, converge, done
    w, p = quiescent_world()
    r = w.robots[0]
    r.role = Role.PATH
    r.state = RobotState.SUBGOAL
    r.anchored = True
    r.target_id = GOAL_ID
    r.x, r.y = 1.7, 2.0
    w.robots[1].x, w.robots[1].y = 0.6, 3.5
    w.robots[2].x, w.robots[2].y = 0.3, 3.5
    out = run_until(w, p, 100)
    assert out.status is Status.PATH_FORMED
    assert out.ticks_elapsed == 5
    assert out.chain_ids == [0]


def test_deadlock_at_window_expiry():
    w, p = quiescent_world(deadlock_window=50)
    out = run_until(w, p, 1000)
    assert out.status is Status.DEADLOCK and out.ticks_elapsed == 50


def test_timeout():
    p = SimParams()
    w = build_world(small_arena([(1.6, 0.0, 1.8, 4.0)]), 4, 0, p)
    out = run_until(w, p, 30)
    assert out.status is Status.TIMEOUT and out.ticks_elapsed == 30


# trace hash

def _hash(seed, n=5, ticks=150, workers=1):
    p = SimParams(workers=workers)
    w = build_world(small_arena(), n, seed, p)
    run_until(w, p, ticks)
    return trace_hash(w.event_log)


def test_same_seed_same_hash():
    assert _hash(4) == _hash(4)


def test_threads_do_not_change_hash():
    assert _hash(9, n=12) == _hash(9, n=12, workers=4)


def test_different_seeds_differ():
    hashes = [_hash(s, ticks=40) for s in range(100)]
    assert len(set(hashes)) == 100


def test_empty_log_constant():
    assert trace_hash([]) == EMPTY_TRACE_HASH == 0xE4A6A0577479B2B4


def test_hash_is_order_sensitive():
    a = [(0, 1, "x", 1), (0, 2, "y", 2)]
    assert trace_hash(a) != trace_hash(a[::-1])
