"""ASCII and SVG depictions of mazes with true and predicted paths.

Both renderers work from a RenderScene, which carries maze geometry plus
the reference solution and an optional predicted path.  Predicted paths
are drawn even when they are illegal (wall crossings, teleports): failure
depiction is the whole point of rendering model output.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Optional

from .corpus import DatasetRecord, Vocabulary, deserialize_record
from .errors import UnknownInstance
from .mazes import AstarMaze, Cell, DfsMaze, Edge, normalize_edge

# SVG geometry, in user units.
_CELL = 24
_MARGIN = 12


@dataclass
class RenderScene:
    kind: str
    size: int
    start: Cell
    goal: Cell
    true_path: list[Cell]
    predicted_path: Optional[list[Cell]] = None
    edges: set[Edge] = field(default_factory=set)  # dfs passages
    walls: set[Cell] = field(default_factory=set)  # astar blocked cells


def lenient_cells(token_ids: list[int], vocab: Vocabulary) -> list[Cell]:
    """Decode as many path cells as possible, skipping undecodable tokens.

    Model output is untrusted; a strict decoder would hide everything after
    the first bad token, which defeats failure rendering.
    """
    cells: list[Cell] = []
    if vocab.kind == "dfs":
        for tid in token_ids:
            if not 0 <= tid < len(vocab):
                continue
            tok = vocab.decode(tid)
            if tok.startswith("(") and tok.endswith(")"):
                xs, ys = tok[1:-1].split(",")
                cells.append(Cell(int(xs), int(ys)))
        return cells
    i = 0
    while i + 1 < len(token_ids):
        xi, yi = token_ids[i], token_ids[i + 1]
        if not (0 <= xi < len(vocab) and 0 <= yi < len(vocab)):
            i += 1
            continue
        xtok, ytok = vocab.decode(xi), vocab.decode(yi)
        if xtok.startswith("x") and xtok[1:].isdigit() and ytok.startswith("y") and ytok[1:].isdigit():
            cells.append(Cell(int(xtok[1:]), int(ytok[1:])))
            i += 2
        else:
            i += 1
    return cells


def scene_from_record(
    record: DatasetRecord,
    vocab: Vocabulary,
    predicted_tokens: Optional[list[int]] = None,
) -> RenderScene:
    maze = deserialize_record(record, vocab)
    predicted = None if predicted_tokens is None else lenient_cells(predicted_tokens, vocab)
    if isinstance(maze, DfsMaze):
        return RenderScene(
            kind="dfs",
            size=maze.size,
            start=maze.start,
            goal=maze.goal,
            true_path=maze.solution,
            predicted_path=predicted,
            edges=maze.edges,
        )
    assert isinstance(maze, AstarMaze)
    return RenderScene(
        kind="astar",
        size=maze.size,
        start=maze.start,
        goal=maze.goal,
        true_path=maze.solution,
        predicted_path=predicted,
        walls=maze.walls,
    )


def _slot_open(scene: RenderScene, a: Cell, b: Cell) -> bool:
    """Is the boundary between adjacent in-bounds cells a passage?"""
    if scene.kind == "dfs":
        return normalize_edge(a, b) in scene.edges
    return a not in scene.walls and b not in scene.walls


def _overlay_path(grid: list[list[str]], path: list[Cell], size: int, glyph: str) -> None:
    # Cells first, then connectors between adjacent consecutive steps.  A
    # non-adjacent step has no midpoint slot, so only its endpoints show.
    for c in path:
        if 0 <= c.x < size and 0 <= c.y < size:
            grid[2 * c.y + 1][2 * c.x + 1] = glyph
    for a, b in zip(path, path[1:]):
        if abs(a.x - b.x) + abs(a.y - b.y) != 1:
            continue
        if not (0 <= a.x < size and 0 <= a.y < size and 0 <= b.x < size and 0 <= b.y < size):
            continue
        grid[a.y + b.y + 1][a.x + b.x + 1] = glyph


def render_ascii(scene: RenderScene) -> str:
    """Box-drawing text rendering; exactly 2*size+1 lines.

    Walls use +, - and |; S and G mark the endpoints (S wins when they
    coincide), * is the reference path, o the predicted one.  Connectors
    are drawn even across walls so illegal steps stay visible.
    """
    L = scene.size
    n = 2 * L + 1
    grid = [[" "] * n for _ in range(n)]
    for r in range(0, n, 2):
        for c in range(0, n, 2):
            grid[r][c] = "+"
    # Horizontal boundaries: above row y for y in 0..L.
    for y in range(L + 1):
        for x in range(L):
            closed = (
                y in (0, L)
                or not _slot_open(scene, Cell(x, y - 1), Cell(x, y))
            )
            if closed:
                grid[2 * y][2 * x + 1] = "-"
    # Vertical boundaries: left of column x for x in 0..L.
    for x in range(L + 1):
        for y in range(L):
            closed = (
                x in (0, L)
                or not _slot_open(scene, Cell(x - 1, y), Cell(x, y))
            )
            if closed:
                grid[2 * y + 1][2 * x] = "|"
    for w in scene.walls:
        grid[2 * w.y + 1][2 * w.x + 1] = "#"
    _overlay_path(grid, scene.true_path, L, "*")
    if scene.predicted_path is not None:
        _overlay_path(grid, scene.predicted_path, L, "o")
    grid[2 * scene.goal.y + 1][2 * scene.goal.x + 1] = "G"
    grid[2 * scene.start.y + 1][2 * scene.start.x + 1] = "S"
    return "\n".join("".join(row) for row in grid)


def _center(c: Cell) -> tuple[float, float]:
    return (_MARGIN + c.x * _CELL + _CELL / 2, _MARGIN + c.y * _CELL + _CELL / 2)


def _pts(path: list[Cell]) -> str:
    return " ".join(f"{x:g},{y:g}" for x, y in map(_center, path))


def _line(parent: ET.Element, x1: float, y1: float, x2: float, y2: float, **attrs: str) -> None:
    ET.SubElement(
        parent,
        "line",
        {"x1": f"{x1:g}", "y1": f"{y1:g}", "x2": f"{x2:g}", "y2": f"{y2:g}", **attrs},
    )


def render_svg(scene: RenderScene) -> str:
    """SVG rendering: walls as strokes, true path as one polyline,
    predicted path as a chain of arrows (one per step)."""
    L = scene.size
    side = 2 * _MARGIN + L * _CELL
    root = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": str(side),
            "height": str(side),
            "viewBox": f"0 0 {side} {side}",
        },
    )
    defs = ET.SubElement(root, "defs")
    marker = ET.SubElement(
        defs,
        "marker",
        {
            "id": "arrow",
            "viewBox": "0 0 10 10",
            "refX": "9",
            "refY": "5",
            "markerWidth": "5",
            "markerHeight": "5",
            "orient": "auto-start-reverse",
        },
    )
    ET.SubElement(marker, "path", {"d": "M 0 0 L 10 5 L 0 10 z", "fill": "#f2a900"})
    ET.SubElement(root, "rect", {"width": str(side), "height": str(side), "fill": "#ffffff"})

    wall_attrs = {"stroke": "#222222", "stroke-width": "2", "stroke-linecap": "square"}
    for y in range(L + 1):
        for x in range(L):
            if y in (0, L) or not _slot_open(scene, Cell(x, y - 1), Cell(x, y)):
                y0 = _MARGIN + y * _CELL
                _line(root, _MARGIN + x * _CELL, y0, _MARGIN + (x + 1) * _CELL, y0, **wall_attrs)
    for x in range(L + 1):
        for y in range(L):
            if x in (0, L) or not _slot_open(scene, Cell(x - 1, y), Cell(x, y)):
                x0 = _MARGIN + x * _CELL
                _line(root, x0, _MARGIN + y * _CELL, x0, _MARGIN + (y + 1) * _CELL, **wall_attrs)
    for w in sorted(scene.walls, key=lambda c: (c.y, c.x)):
        ET.SubElement(
            root,
            "rect",
            {
                "x": str(_MARGIN + w.x * _CELL),
                "y": str(_MARGIN + w.y * _CELL),
                "width": str(_CELL),
                "height": str(_CELL),
                "fill": "#444444",
                "stroke": "#222222",
            },
        )

    if scene.true_path:
        ET.SubElement(
            root,
            "polyline",
            {
                "points": _pts(scene.true_path),
                "fill": "none",
                "stroke": "#1f77b4",
                "stroke-width": "3",
                "stroke-linejoin": "round",
                "class": "true-path",
            },
        )
    if scene.predicted_path:
        pred_attrs = {
            "stroke": "#f2a900",
            "stroke-width": "2.5",
            "marker-end": "url(#arrow)",
            "class": "predicted-step",
        }
        for a, b in zip(scene.predicted_path, scene.predicted_path[1:]):
            (x1, y1), (x2, y2) = _center(a), _center(b)
            _line(root, x1, y1, x2, y2, **pred_attrs)
        if len(scene.predicted_path) == 1:
            x, y = _center(scene.predicted_path[0])
            ET.SubElement(
                root,
                "circle",
                {"cx": f"{x:g}", "cy": f"{y:g}", "r": "4", "fill": "#f2a900",
                 "class": "predicted-step"},
            )

    for cell, label, color in ((scene.start, "S", "#2ca02c"), (scene.goal, "G", "#d62728")):
        x, y = _center(cell)
        ET.SubElement(
            root,
            "text",
            {
                "x": f"{x:g}",
                "y": f"{y:g}",
                "fill": color,
                "font-size": "12",
                "font-family": "monospace",
                "text-anchor": "middle",
                "dominant-baseline": "central",
                "font-weight": "bold",
            },
        ).text = label
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode")


def render_instance(
    records: list[DatasetRecord],
    vocab: Vocabulary,
    instance_id: int,
    predicted_tokens: Optional[list[int]] = None,
    fmt: str = "ascii",
) -> str:
    by_id = {r.id: r for r in records}
    if instance_id not in by_id:
        raise UnknownInstance(f"no instance with id {instance_id} in corpus")
    scene = scene_from_record(by_id[instance_id], vocab, predicted_tokens)
    if fmt == "ascii":
        return render_ascii(scene)
    if fmt == "svg":
        return render_svg(scene)
    raise ValueError(f"unknown render format {fmt!r}")
