import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmpath.baseline import (
    SQRT2,
    NoPath,
    OccupancyGrid,
    arena_astar,
    astar,
    chain_length,
    dijkstra_oracle,
    octile,
    rasterize,
)
from swarmpath.chain import SubgoalChain
from swarmpath.world import ArenaSpec, Disk, Rect

from oracles import bellman_ford_cost, raster_cell_oracle


def empty_arena(obstacles=()):
    return ArenaSpec(8, 4, tuple(Rect(*o) for o in obstacles), Disk((0.5, 0.5), 0.25), Disk((7.5, 3.5), 0.25))


def random_grid(rng, rows, cols, density):
    occ = rng.random((rows, cols)) < density
    occ[0, 0] = occ[-1, -1] = False
    return OccupancyGrid(1.0, occ)


# rasterisation

def test_empty_arena_grid():
    g = rasterize(empty_arena(), 0.1)
    assert g.shape == (40, 80) and not g.cells.any()


def test_single_obstacle_matches_cell_oracle():
    rect = (3.0, 1.0, 4.2, 2.6)
    g = rasterize(empty_arena([rect]), 0.05, 0.085)
    assert np.array_equal(g.cells, raster_cell_oracle(8, 4, 0.05, [rect], 0.085))


@pytest.mark.parametrize("res", [0, -0.1])
def test_bad_resolution(res):
    with pytest.raises(ValueError):
        rasterize(empty_arena(), res)


def test_occupied_nest_rejected():
    with pytest.raises(ValueError):
        rasterize(empty_arena([(0.8, 0.0, 1.0, 1.0)]), 0.05, robot_radius=0.35)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(1.5, 6), st.floats(0.8, 3), st.floats(0.05, 0.8), st.floats(0.05, 0.8)), max_size=4))
def test_rasterisation_monotone(boxes):
    rects = [(x, y, x + w, y + h) for x, y, w, h in boxes]
    before = rasterize(empty_arena(rects[:-1]), 0.1).cells if rects else None
    after = rasterize(empty_arena(rects), 0.1).cells
    if before is not None:
        assert not (before & ~after).any()


# search

def test_start_equals_goal():
    g = OccupancyGrid(0.1, np.zeros((5, 5), bool))
    p = astar(g, (2, 2), (2, 2))
    assert p.cells == [(2, 2)] and p.length == 0
    assert dijkstra_oracle(g, (2, 2), (2, 2)) == 0


def test_straight_row():
    g = OccupancyGrid(0.1, np.zeros((5, 20), bool))
    assert astar(g, (2, 3), (2, 13)).length == pytest.approx(1.0)


def test_diagonal():
    g = OccupancyGrid(0.05, np.zeros((20, 20), bool))
    p = astar(g, (0, 0), (7, 7))
    assert p.length == pytest.approx(0.05 * 7 * SQRT2, rel=1e-15)


def test_walled_off_goal():
    occ = np.zeros((9, 9), bool)
    occ[3:6, 3] = occ[3:6, 5] = occ[3, 3:6] = occ[5, 3:6] = True
    g = OccupancyGrid(1.0, occ)
    with pytest.raises(NoPath):
        astar(g, (0, 0), (4, 4))
    with pytest.raises(NoPath):
        dijkstra_oracle(g, (0, 0), (4, 4))


def test_no_corner_cutting():
    occ = np.zeros((2, 2), bool)
    occ[0, 1] = occ[1, 0] = True
    with pytest.raises(NoPath):
        astar(OccupancyGrid(1.0, occ), (0, 0), (1, 1))


def test_occupied_endpoint_rejected():
    occ = np.zeros((3, 3), bool)
    occ[1, 1] = True
    with pytest.raises(ValueError):
        astar(OccupancyGrid(1.0, occ), (1, 1), (0, 0))


def test_random_small_grids_agree():
    rng = np.random.default_rng(1)
    for _ in range(100):
        g = random_grid(rng, 20, 20, 0.25)
        try:
            a = astar(g, (0, 0), (19, 19)).length
        except NoPath:
            with pytest.raises(NoPath):
                dijkstra_oracle(g, (0, 0), (19, 19))
            continue
        assert a == dijkstra_oracle(g, (0, 0), (19, 19))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_astar_matches_bellman_ford(seed):
    g = random_grid(np.random.default_rng(seed), 12, 15, 0.3)
    steps = bellman_ford_cost(g.cells, (0, 0), (11, 14))
    if steps is None:
        with pytest.raises(NoPath):
            astar(g, (0, 0), (11, 14))
        return
    p = astar(g, (0, 0), (11, 14))
    assert p.length == g.resolution * (steps[0] + SQRT2 * steps[1])
    assert p.length >= octile((0, 0), (11, 14)) - 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_path_cells_are_legal_moves(seed):
    g = random_grid(np.random.default_rng(seed), 12, 15, 0.2)
    try:
        p = astar(g, (0, 0), (11, 14))
    except NoPath:
        return
    total = 0.0
    for (r0, c0), (r1, c1) in zip(p.cells, p.cells[1:]):
        assert max(abs(r1 - r0), abs(c1 - c0)) == 1 and g.free((r1, c1))
        if r0 != r1 and c0 != c1:
            assert g.free((r0, c1)) and g.free((r1, c0))
        total += math.hypot(r1 - r0, c1 - c0)
    assert total == pytest.approx(p.length)


def test_bundled_arena_path_exists():
    p = arena_astar(empty_arena([(3.8, 0.0, 4.2, 3.0)]))
    assert p.length > math.dist((0.5, 0.5), (7.5, 3.5)) - 0.1


# chain length

def test_chain_length_direct():
    assert chain_length(SubgoalChain((0, 0), (5, 0))) == 5.0


def test_chain_length_collinear():
    c = SubgoalChain((0, 0), (4, 0), anchors=[(1, 0), (2, 0), (3, 0)])
    assert chain_length(c) == pytest.approx(4.0)


def test_chain_length_dogleg():
    c = SubgoalChain((0, 0), (3, 4), anchors=[(3, 0)])
    assert chain_length(c) == 7.0 and math.dist((0, 0), (3, 4)) == 5.0
