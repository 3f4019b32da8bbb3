"""Grid mazes: generation, exact solvers, and path validation.

Two maze families on an L x L grid (x = column, y = row, both 0-based,
y grows downward):

* DFS mazes: the open-passage graph is a spanning tree carved by randomized
  depth-first search, so the start-to-goal path is unique.
* A* mazes: 30-50% of the cells are walls; (walls, start, goal) are rejection
  sampled until the deterministic A* solver returns a path of at least L
  cells.

All randomness flows through Philox counter-based generators keyed on
explicit 64-bit seeds, so identical inputs give byte-identical mazes on any
platform and under any worker count. Neighbor expansion order is fixed
everywhere as Up, Left, Down, Right.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, NamedTuple, Union

import numpy as np

from .errors import GenerationExhausted, NoPath

# (dx, dy) offsets in the pinned Up, Left, Down, Right expansion order.
NEIGHBOR_ORDER: tuple[tuple[int, int], ...] = ((0, -1), (-1, 0), (0, 1), (1, 0))

DEFAULT_MAX_ATTEMPTS = 10_000


class Cell(NamedTuple):
    x: int
    y: int


Edge = tuple[Cell, Cell]
AdjacencyFn = Callable[[Cell], Iterable[Cell]]


@dataclass
class DfsMaze:
    """Perfect maze: open passages form a spanning tree of the grid."""

    size: int
    edges: set[Edge]
    start: Cell
    goal: Cell
    solution: list[Cell]


@dataclass
class AstarMaze:
    """Wall maze: blocked cells plus a canonical A* shortest path."""

    size: int
    walls: set[Cell]
    start: Cell
    goal: Cell
    solution: list[Cell]


@dataclass
class MazeInstance:
    kind: str  # "dfs" or "astar"
    payload: Union[DfsMaze, AstarMaze]
    id: int  # 64-bit, derived from (kind, size, seed)


class PathCategory(Enum):
    SHORTEST_MATCH = "ShortestMatch"
    VALID_NOT_SHORTEST = "ValidNotShortest"
    INVALID = "Invalid"


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from a tuple of printable parts (blake2b-based)."""
    text = ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed & (2**64 - 1)))


def _uniform_cell(rng: np.random.Generator, size: int) -> Cell:
    idx = int(rng.integers(size * size))
    return Cell(idx % size, idx // size)


def _in_bounds(cell: Cell, size: int) -> bool:
    return 0 <= cell.x < size and 0 <= cell.y < size


def grid_neighbors(cell: Cell, size: int) -> list[Cell]:
    """In-bounds 4-neighbors in Up, Left, Down, Right order."""
    out = []
    for dx, dy in NEIGHBOR_ORDER:
        n = Cell(cell.x + dx, cell.y + dy)
        if _in_bounds(n, size):
            out.append(n)
    return out


def normalize_edge(a: Cell, b: Cell) -> Edge:
    """Unordered edge stored with the (y, x)-smaller endpoint first."""
    return (a, b) if (a.y, a.x) <= (b.y, b.x) else (b, a)


def tree_adjacency(size: int, edges: set[Edge]) -> AdjacencyFn:
    """Adjacency over an explicit passage set, in the pinned order."""

    def neighbors(cell: Cell) -> list[Cell]:
        return [
            n
            for n in grid_neighbors(cell, size)
            if normalize_edge(cell, n) in edges
        ]

    return neighbors


def open_grid_adjacency(size: int, walls: set[Cell]) -> AdjacencyFn:
    """Adjacency where any unblocked in-bounds 4-neighbor is reachable."""

    def neighbors(cell: Cell) -> list[Cell]:
        return [n for n in grid_neighbors(cell, size) if n not in walls]

    return neighbors


def bfs_shortest_path(size: int, adjacency: AdjacencyFn, start: Cell, goal: Cell) -> list[Cell]:
    """Breadth-first shortest path used as the independent oracle.

    Expansion follows the pinned Up/Left/Down/Right order and first-visit
    wins, which fixes the returned path among equals deterministically.
    Raises NoPath when the goal is unreachable.
    """
    if start == goal:
        return [start]
    parent: dict[Cell, Cell] = {start: start}
    frontier = [start]
    while frontier:
        next_frontier = []
        for cell in frontier:
            for n in adjacency(cell):
                if n in parent:
                    continue
                parent[n] = cell
                if n == goal:
                    path = [n]
                    while path[-1] != start:
                        path.append(parent[path[-1]])
                    path.reverse()
                    return path
                next_frontier.append(n)
        frontier = next_frontier
    raise NoPath(f"no path from {start} to {goal}")


def astar_solve(size: int, walls: set[Cell], start: Cell, goal: Cell) -> list[Cell]:
    """Deterministic A* with Manhattan heuristic on a wall grid.

    Tie-breaking is fully pinned: pop the lowest f, then the lowest g, then
    the earliest-pushed entry, where neighbors are pushed in Up, Left, Down,
    Right order; remaining ties cannot occur because push times are unique.
    Start and goal must be unblocked and in bounds.
    """
    for name, cell in (("start", start), ("goal", goal)):
        if not _in_bounds(cell, size):
            raise ValueError(f"{name} {cell} out of bounds for size {size}")
        if cell in walls:
            raise ValueError(f"{name} {cell} is a wall")

    def h(c: Cell) -> int:
        return abs(c.x - goal.x) + abs(c.y - goal.y)

    counter = 0
    best_g: dict[Cell, int] = {start: 0}
    parent: dict[Cell, Cell] = {}
    heap: list[tuple[int, int, int, Cell]] = [(h(start), 0, counter, start)]
    closed: set[Cell] = set()
    while heap:
        _, g, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        closed.add(cur)
        if cur == goal:
            path = [cur]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            return path
        for n in grid_neighbors(cur, size):
            if n in walls or n in closed:
                continue
            ng = g + 1
            if ng < best_g.get(n, size * size + 1):
                best_g[n] = ng
                parent[n] = cur
                counter += 1
                heapq.heappush(heap, (ng + h(n), ng, counter, n))
    raise NoPath(f"no path from {start} to {goal}")


def generate_dfs_maze(L: int, seed: int) -> DfsMaze:
    """Carve a uniform-ish spanning tree by randomized depth-first search.

    The DFS root, start, and goal are each sampled uniformly; the goal is
    resampled while it collides with the start (L > 1 only). At every visit
    the next neighbor is chosen uniformly among the unvisited ones, which is
    equivalent to a fresh shuffle per visit.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if L == 1:
        return DfsMaze(1, set(), Cell(0, 0), Cell(0, 0), [Cell(0, 0)])
    rng = _rng(seed)
    root = _uniform_cell(rng, L)
    visited = {root}
    stack = [root]
    edges: set[Edge] = set()
    while stack:
        cur = stack[-1]
        candidates = [n for n in grid_neighbors(cur, L) if n not in visited]
        if not candidates:
            stack.pop()
            continue
        nxt = candidates[int(rng.integers(len(candidates)))]
        edges.add(normalize_edge(cur, nxt))
        visited.add(nxt)
        stack.append(nxt)
    start = _uniform_cell(rng, L)
    goal = _uniform_cell(rng, L)
    while goal == start:
        goal = _uniform_cell(rng, L)
    solution = bfs_shortest_path(L, tree_adjacency(L, edges), start, goal)
    return DfsMaze(L, edges, start, goal, solution)


def wall_count(L: int, wall_fraction: float) -> int:
    """Number of wall cells for a target fraction, clamped into [0.30, 0.50].

    Integer bounds avoid float-epsilon surprises: the lower bound is
    ceil(3 L^2 / 10) and the upper bound floor(L^2 / 2). Rounding of the
    target itself follows Python round-half-even.
    """
    cells = L * L
    low = -((-3 * cells) // 10)
    high = cells // 2
    return min(max(int(round(wall_fraction * cells)), low), high)


def generate_astar_maze(
    L: int,
    wall_fraction: float,
    seed: int,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> AstarMaze:
    """Rejection-sample an A* maze with a sufficiently long solution.

    Each attempt draws a fresh wall set of wall_count(L, wall_fraction)
    cells, then an unblocked start and goal (goal resampled while equal to
    start). The sample is accepted when A* finds a path of at least L cells.
    Raises GenerationExhausted after max_attempts rejections.
    """
    if L < 2:
        raise ValueError("L must be >= 2")
    if not 0.30 <= wall_fraction <= 0.50:
        raise ValueError("wall_fraction must lie in [0.30, 0.50]")
    rng = _rng(seed)
    cells = L * L
    n_walls = wall_count(L, wall_fraction)
    for _ in range(max_attempts):
        flat = rng.choice(cells, size=n_walls, replace=False)
        walls = {Cell(int(i) % L, int(i) // L) for i in flat}
        free = sorted(
            (Cell(x, y) for y in range(L) for x in range(L) if Cell(x, y) not in walls),
            key=lambda c: (c.y, c.x),
        )
        if len(free) < 2:
            continue
        start = free[int(rng.integers(len(free)))]
        goal = free[int(rng.integers(len(free)))]
        while goal == start:
            goal = free[int(rng.integers(len(free)))]
        try:
            solution = astar_solve(L, walls, start, goal)
        except NoPath:
            continue
        if len(solution) >= L:
            return AstarMaze(L, walls, start, goal, solution)
    raise GenerationExhausted(
        f"no acceptable A* maze for L={L}, fraction={wall_fraction} "
        f"after {max_attempts} attempts",
        attempts=max_attempts,
    )


def validate_path(instance: MazeInstance, path: list[Cell]) -> PathCategory:
    """Classify a candidate path against the instance's canonical solution.

    ShortestMatch requires exact equality with the stored solution.
    ValidNotShortest means every step is legal (4-adjacent, passage open or
    cells unblocked) and the endpoints are the instance's start and goal;
    revisits are allowed. Everything else is Invalid.
    """
    maze = instance.payload
    if list(path) == list(maze.solution):
        return PathCategory.SHORTEST_MATCH
    if not path:
        return PathCategory.INVALID
    if path[0] != maze.start or path[-1] != maze.goal:
        return PathCategory.INVALID
    size = maze.size
    for cell in path:
        if not isinstance(cell, Cell) or not _in_bounds(cell, size):
            return PathCategory.INVALID
        if isinstance(maze, AstarMaze) and cell in maze.walls:
            return PathCategory.INVALID
    for a, b in zip(path, path[1:]):
        if abs(a.x - b.x) + abs(a.y - b.y) != 1:
            return PathCategory.INVALID
        if isinstance(maze, DfsMaze) and normalize_edge(a, b) not in maze.edges:
            return PathCategory.INVALID
    return PathCategory.VALID_NOT_SHORTEST


def instance_id(kind: str, L: int, seed: int, extra: object = None) -> int:
    parts = [kind, L, seed] if extra is None else [kind, L, seed, extra]
    return derive_seed(*parts)


def make_instance(
    kind: str,
    L: int,
    seed: int,
    wall_fraction: float = 0.40,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> MazeInstance:
    """Generate one maze and wrap it with its seed-derived 64-bit id."""
    if kind == "dfs":
        payload: Union[DfsMaze, AstarMaze] = generate_dfs_maze(L, seed)
    elif kind == "astar":
        payload = generate_astar_maze(L, wall_fraction, seed, max_attempts)
    else:
        raise ValueError(f"unknown maze kind {kind!r}")
    return MazeInstance(kind=kind, payload=payload, id=instance_id(kind, L, seed))


def _carve_region_tree(
    cells: list[Cell], size: int, rng: np.random.Generator
) -> set[Edge]:
    """Randomized DFS spanning tree over an arbitrary connected cell region."""
    region = set(cells)
    root = cells[int(rng.integers(len(cells)))]
    visited = {root}
    stack = [root]
    edges: set[Edge] = set()
    while stack:
        cur = stack[-1]
        candidates = [
            n for n in grid_neighbors(cur, size) if n in region and n not in visited
        ]
        if not candidates:
            stack.pop()
            continue
        nxt = candidates[int(rng.integers(len(candidates)))]
        edges.add(normalize_edge(cur, nxt))
        visited.add(nxt)
        stack.append(nxt)
    return edges


def embed_maze(
    inner: Union[DfsMaze, AstarMaze], outer_size: int, seed: int
) -> MazeInstance:
    """Place a maze in the upper-left corner of a larger, sealed grid.

    The inner block keeps its coordinates, so start, goal, and solution carry
    over unchanged. A solid boundary separates inner from outer region (for
    DFS mazes: no crossing passages; for A* mazes: a wall strip along
    x = L1 and y = L1), which keeps the inner solution canonical. The outer
    region is then populated as usual: a fresh DFS tree over the outer cells,
    or walls sampled toward the inner maze's wall fraction.

    Two type invariants are deliberately relaxed on the embedded payload: the
    DFS passage graph is a two-component forest rather than a spanning tree,
    and the solution length guarantee stays at the inner size L1, not L2.
    """
    L1 = inner.size
    L2 = outer_size
    if L2 <= L1:
        raise ValueError("outer size must exceed inner size")
    rng = _rng(seed)
    outer_cells = sorted(
        (
            Cell(x, y)
            for y in range(L2)
            for x in range(L2)
            if x >= L1 or y >= L1
        ),
        key=lambda c: (c.y, c.x),
    )
    if isinstance(inner, DfsMaze):
        edges = set(inner.edges) | _carve_region_tree(outer_cells, L2, rng)
        payload: Union[DfsMaze, AstarMaze] = DfsMaze(
            L2, edges, inner.start, inner.goal, list(inner.solution)
        )
        kind = "dfs"
    else:
        strip = (
            {Cell(L1, y) for y in range(L1)}
            | {Cell(x, L1) for x in range(L1)}
            | {Cell(L1, L1)}
        )
        inner_fraction = len(inner.walls) / (L1 * L1)
        target = wall_count(L2, inner_fraction)
        remaining = [c for c in outer_cells if c not in strip]
        n_sample = min(max(target - len(inner.walls) - len(strip), 0), len(remaining))
        picked = rng.choice(len(remaining), size=n_sample, replace=False)
        sampled = {remaining[int(i)] for i in picked}
        walls = set(inner.walls) | strip | sampled
        payload = AstarMaze(L2, walls, inner.start, inner.goal, list(inner.solution))
        kind = "astar"
    inner_tag = derive_seed(kind, L1, *(f"{c.x},{c.y}" for c in inner.solution))
    return MazeInstance(
        kind=kind, payload=payload, id=instance_id(kind, L2, seed, inner_tag)
    )
