"""A* shortest paths on an occupancy grid, plus a uniform-cost oracle."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .world import ArenaSpec, Point

SQRT2 = math.sqrt(2.0)
Cell = tuple[int, int]  # (row, col); row follows y, col follows x

_MOVES = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1),           (0, 1),
    (1, -1),  (1, 0),  (1, 1),
)


class NoPath(Exception):
    """The goal cell is not reachable from the start cell."""


@dataclass(frozen=True)
class OccupancyGrid:
    resolution: float
    cells: np.ndarray  # bool, shape (rows, cols), True = occupied
    origin: Point = (0.0, 0.0)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def cell_of(self, p: Point) -> Cell:
        rows, cols = self.cells.shape
        c = int(math.floor((p[0] - self.origin[0]) / self.resolution))
        r = int(math.floor((p[1] - self.origin[1]) / self.resolution))
        return (min(max(r, 0), rows - 1), min(max(c, 0), cols - 1))

    def center_of(self, cell: Cell) -> Point:
        r, c = cell
        return (
            self.origin[0] + (c + 0.5) * self.resolution,
            self.origin[1] + (r + 0.5) * self.resolution,
        )

    def free(self, cell: Cell) -> bool:
        r, c = cell
        rows, cols = self.cells.shape
        return 0 <= r < rows and 0 <= c < cols and not self.cells[r, c]


@dataclass(frozen=True)
class GridPath:
    cells: list
    length: float
    resolution: float
    origin: Point = (0.0, 0.0)

    def points(self) -> list[Point]:
        return [
            (self.origin[0] + (c + 0.5) * self.resolution, self.origin[1] + (r + 0.5) * self.resolution)
            for r, c in self.cells
        ]


def rasterize(arena: ArenaSpec, resolution: float, robot_radius: float = 0.085) -> OccupancyGrid:
    """Mark every cell whose square overlaps an obstacle grown by ``robot_radius``."""
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    cols = int(math.ceil(arena.width / resolution - 1e-9))
    rows = int(math.ceil(arena.height / resolution - 1e-9))
    occ = np.zeros((rows, cols), dtype=bool)
    x0 = np.arange(cols) * resolution
    y0 = np.arange(rows) * resolution
    for o in arena.obstacles:
        g = o.inflated(robot_radius)
        cx = (x0 + resolution > g.xmin) & (x0 < g.xmax)
        cy = (y0 + resolution > g.ymin) & (y0 < g.ymax)
        occ |= cy[:, None] & cx[None, :]
    grid = OccupancyGrid(resolution, occ)
    for label, disk in (("nest", arena.nest), ("goal", arena.goal)):
        if not grid.free(grid.cell_of(disk.center)):
            raise ValueError(f"{label} cell is occupied after inflation")
    return grid


def _neighbours(occ: np.ndarray, cell: Cell):
    """8-connected free neighbours; diagonal steps may not clip an occupied corner."""
    rows, cols = occ.shape
    r, c = cell
    for dr, dc in _MOVES:
        nr, nc = r + dr, c + dc
        if not (0 <= nr < rows and 0 <= nc < cols) or occ[nr, nc]:
            continue
        diagonal = dr != 0 and dc != 0
        if diagonal and (occ[r, nc] or occ[nr, c]):
            continue
        yield (nr, nc), diagonal


def octile(a: Cell, b: Cell) -> float:
    dr = abs(a[0] - b[0])
    dc = abs(a[1] - b[1])
    return (max(dr, dc) - min(dr, dc)) + SQRT2 * min(dr, dc)


def _check_endpoints(grid: OccupancyGrid, start: Cell, goal: Cell) -> None:
    for label, cell in (("start", start), ("goal", goal)):
        if not grid.free(cell):
            raise ValueError(f"{label} cell {cell} is not a free cell")


def _exact_cost(n_orth: int, n_diag: int, resolution: float) -> float:
    # path cost from integer step counts, so equal-cost paths compare exactly
    return resolution * (n_orth + SQRT2 * n_diag)


def astar(grid: OccupancyGrid, start: Cell, goal: Cell) -> GridPath:
    """Minimum-cost 8-connected path under the octile heuristic.

    Open-list ties break on the smaller heuristic, then on cell order.
    """
    start, goal = tuple(start), tuple(goal)
    _check_endpoints(grid, start, goal)
    occ = grid.cells
    g = {start: 0.0}
    steps = {start: (0, 0)}
    parent: dict[Cell, Cell | None] = {start: None}
    h0 = octile(start, goal)
    heap = [(h0, h0, start)]
    closed = set()
    while heap:
        _, h, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        if cell == goal:
            break
        closed.add(cell)
        gc = g[cell]
        no, nd = steps[cell]
        for nxt, diagonal in _neighbours(occ, cell):
            if nxt in closed:
                continue
            cand = gc + (SQRT2 if diagonal else 1.0)
            if cand < g.get(nxt, math.inf) - 1e-12:
                g[nxt] = cand
                steps[nxt] = (no, nd + 1) if diagonal else (no + 1, nd)
                parent[nxt] = cell
                hn = octile(nxt, goal)
                heapq.heappush(heap, (cand + hn, hn, nxt))
    else:
        raise NoPath(f"no path from {start} to {goal}")
    cells = []
    c: Cell | None = goal
    while c is not None:
        cells.append(c)
        c = parent[c]
    cells.reverse()
    no, nd = steps[goal]
    return GridPath(cells, _exact_cost(no, nd, grid.resolution), grid.resolution, grid.origin)


def dijkstra_oracle(grid: OccupancyGrid, start: Cell, goal: Cell) -> float:
    """Uniform-cost search with the same step costs; returns the path cost only."""
    start, goal = tuple(start), tuple(goal)
    _check_endpoints(grid, start, goal)
    occ = grid.cells
    dist = {start: 0.0}
    steps = {start: (0, 0)}
    heap = [(0.0, start)]
    done = set()
    while heap:
        d, cell = heapq.heappop(heap)
        if cell in done:
            continue
        if cell == goal:
            no, nd = steps[cell]
            return _exact_cost(no, nd, grid.resolution)
        done.add(cell)
        no, nd = steps[cell]
        for nxt, diagonal in _neighbours(occ, cell):
            cand = d + (SQRT2 if diagonal else 1.0)
            if cand < dist.get(nxt, math.inf) - 1e-12:
                dist[nxt] = cand
                steps[nxt] = (no, nd + 1) if diagonal else (no + 1, nd)
                heapq.heappush(heap, (cand, nxt))
    raise NoPath(f"no path from {start} to {goal}")


def arena_astar(arena: ArenaSpec, resolution: float = 0.05, robot_radius: float = 0.085) -> GridPath:
    """Nest-to-goal A* path for an arena."""
    grid = rasterize(arena, resolution, robot_radius)
    return astar(grid, grid.cell_of(arena.nest.center), grid.cell_of(arena.goal.center))


def chain_length(chain) -> float:
    """Polyline length nest -> anchors -> goal."""
    pts = [tuple(chain.nest), *map(tuple, chain.anchors), tuple(chain.goal)]
    return float(sum(math.dist(a, b) for a, b in zip(pts, pts[1:])))
