"""Token serialization of mazes, vocabularies, and corpus persistence.

Record layouts (fixed so corpora are bit-exact):

* DFS: ``<edge> a b`` per passage (each pair ordered smaller-(y,x) endpoint
  first, pairs sorted lexicographically), then ``<start> cell``,
  ``<goal> cell``, ``<path> cell...``. One token per grid cell, spelled
  ``(x,y)``.
* A*: ``<wall> x y`` per wall sorted by (y, x), then ``<start> x y``,
  ``<goal> x y``, ``<plan>`` and one x,y token pair per solution step.
  Separate x- and y-coordinate token banks.

The solution region is always the sequence tail. Reserved ids everywhere:
0 = ``<pad>``, 1 = ``<mask>``; ids 2-5 are the four structural markers of the
respective format.

Corpus files are UTF-8 JSON lines: line 1 holds the manifest object, each
further line one record ``{"id", "tokens", "sol_start", "sol_end"}``.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .errors import FormatError, InsufficientRecords, UnknownToken
from .mazes import (
    AstarMaze,
    Cell,
    DfsMaze,
    MazeInstance,
    derive_seed,
    make_instance,
)
from .mazes import _rng  # shared Philox construction

PAD_ID = 0
MASK_ID = 1

_DFS_MARKERS = ("<pad>", "<mask>", "<edge>", "<start>", "<goal>", "<path>")
_ASTAR_MARKERS = ("<pad>", "<mask>", "<wall>", "<start>", "<goal>", "<plan>")

FORMAT_VERSION = 1


@dataclass
class Vocabulary:
    """Bijective token/id table for one maze kind and grid size."""

    kind: str
    size: int
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, token: str) -> int:
        try:
            return self.token_to_id[token]
        except KeyError:
            raise UnknownToken(f"token {token!r} not in {self.kind}/{self.size} vocabulary")

    def decode(self, token_id: int) -> str:
        if 0 <= token_id < len(self.id_to_token):
            return self.id_to_token[token_id]
        raise UnknownToken(f"id {token_id} not in {self.kind}/{self.size} vocabulary")

    @property
    def vocab_hash(self) -> str:
        payload = json.dumps(self.id_to_token, separators=(",", ":")).encode()
        return hashlib.blake2b(payload, digest_size=8).hexdigest()

    def to_json(self) -> str:
        return json.dumps(
            {tok: i for i, tok in enumerate(self.id_to_token)},
            separators=(",", ":"),
        )


@dataclass
class DatasetRecord:
    """One serialized maze; the solution region is the maskable tail."""

    id: int
    tokens: list[int]
    sol_start: int
    sol_end: int

    @property
    def seq_len(self) -> int:
        return len(self.tokens)

    @property
    def solution_len(self) -> int:
        return self.sol_end - self.sol_start


@dataclass
class CorpusManifest:
    kind: str
    size: int
    train_count: int
    val_count: int
    seed: int
    vocab_hash: str
    split: str
    version: int = FORMAT_VERSION

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": self.version,
                "kind": self.kind,
                "size": self.size,
                "train_count": self.train_count,
                "val_count": self.val_count,
                "seed": self.seed,
                "vocab_hash": self.vocab_hash,
                "split": self.split,
            },
            separators=(",", ":"),
        )


def build_vocab(kind: str, L: int) -> Vocabulary:
    """Vocabulary for a kind/size: markers plus cell or coordinate tokens.

    DFS carries one token per grid cell; A* carries one token per x value
    and one per y value (separate banks even though the ranges coincide).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if kind == "dfs":
        tokens = list(_DFS_MARKERS) + [f"({x},{y})" for y in range(L) for x in range(L)]
    elif kind == "astar":
        tokens = (
            list(_ASTAR_MARKERS)
            + [f"x{i}" for i in range(L)]
            + [f"y{i}" for i in range(L)]
        )
    else:
        raise ValueError(f"unknown maze kind {kind!r}")
    return Vocabulary(
        kind=kind,
        size=L,
        id_to_token=tokens,
        token_to_id={tok: i for i, tok in enumerate(tokens)},
    )


def _cell_token(cell: Cell) -> str:
    return f"({cell.x},{cell.y})"


def serialize_dfs(maze: DfsMaze, vocab: Vocabulary, maze_id: int = 0) -> DatasetRecord:
    """Serialize a DFS maze; raises UnknownToken if it exceeds the vocabulary."""
    if vocab.kind != "dfs":
        raise UnknownToken(f"DFS maze cannot use a {vocab.kind} vocabulary")
    edge_tok = vocab.encode("<edge>")
    tokens: list[int] = []
    key = lambda e: ((e[0].y, e[0].x), (e[1].y, e[1].x))
    for a, b in sorted(maze.edges, key=key):
        tokens.extend((edge_tok, vocab.encode(_cell_token(a)), vocab.encode(_cell_token(b))))
    tokens.extend((vocab.encode("<start>"), vocab.encode(_cell_token(maze.start))))
    tokens.extend((vocab.encode("<goal>"), vocab.encode(_cell_token(maze.goal))))
    tokens.append(vocab.encode("<path>"))
    sol_start = len(tokens)
    tokens.extend(vocab.encode(_cell_token(c)) for c in maze.solution)
    return DatasetRecord(id=maze_id, tokens=tokens, sol_start=sol_start, sol_end=len(tokens))


def serialize_astar(maze: AstarMaze, vocab: Vocabulary, maze_id: int = 0) -> DatasetRecord:
    """Serialize an A* maze; coordinates use the separate x/y token banks."""
    if vocab.kind != "astar":
        raise UnknownToken(f"A* maze cannot use a {vocab.kind} vocabulary")

    def xy(cell: Cell) -> tuple[int, int]:
        return vocab.encode(f"x{cell.x}"), vocab.encode(f"y{cell.y}")

    wall_tok = vocab.encode("<wall>")
    tokens: list[int] = []
    for cell in sorted(maze.walls, key=lambda c: (c.y, c.x)):
        tokens.append(wall_tok)
        tokens.extend(xy(cell))
    tokens.append(vocab.encode("<start>"))
    tokens.extend(xy(maze.start))
    tokens.append(vocab.encode("<goal>"))
    tokens.extend(xy(maze.goal))
    tokens.append(vocab.encode("<plan>"))
    sol_start = len(tokens)
    for cell in maze.solution:
        tokens.extend(xy(cell))
    return DatasetRecord(id=maze_id, tokens=tokens, sol_start=sol_start, sol_end=len(tokens))


def serialize_instance(instance: MazeInstance, vocab: Vocabulary) -> DatasetRecord:
    if instance.kind == "dfs":
        return serialize_dfs(instance.payload, vocab, maze_id=instance.id)
    return serialize_astar(instance.payload, vocab, maze_id=instance.id)


def decode_dfs_cells(token_ids: list[int], vocab: Vocabulary) -> list[Cell]:
    """Decode cell tokens; raises UnknownToken on any non-cell id."""
    cells = []
    for tid in token_ids:
        token = vocab.decode(tid)
        if not (token.startswith("(") and token.endswith(")")):
            raise UnknownToken(f"{token!r} is not a cell token")
        xs, ys = token[1:-1].split(",")
        cells.append(Cell(int(xs), int(ys)))
    return cells


def decode_astar_cells(token_ids: list[int], vocab: Vocabulary) -> list[Cell]:
    """Pair x,y coordinate tokens strictly two at a time.

    Raises ValueError on an odd remainder and UnknownToken when a position
    does not hold the expected bank's token.
    """
    if len(token_ids) % 2 != 0:
        raise ValueError("odd number of coordinate tokens")
    cells = []
    for xi, yi in zip(token_ids[::2], token_ids[1::2]):
        xtok, ytok = vocab.decode(xi), vocab.decode(yi)
        if not xtok.startswith("x") or not xtok[1:].isdigit():
            raise UnknownToken(f"{xtok!r} is not an x-coordinate token")
        if not ytok.startswith("y") or not ytok[1:].isdigit():
            raise UnknownToken(f"{ytok!r} is not a y-coordinate token")
        cells.append(Cell(int(xtok[1:]), int(ytok[1:])))
    return cells


def deserialize_dfs(record: DatasetRecord, vocab: Vocabulary) -> DfsMaze:
    """Inverse of serialize_dfs; structural violations raise ValueError."""
    toks = record.tokens
    edge_tok = vocab.encode("<edge>")
    i = 0
    edges = set()
    while i < len(toks) and toks[i] == edge_tok:
        if i + 2 >= len(toks):
            raise ValueError("truncated edge triple")
        a, b = decode_dfs_cells(toks[i + 1 : i + 3], vocab)
        edges.add((a, b))
        i += 3
    expect = [vocab.encode("<start>"), None, vocab.encode("<goal>"), None, vocab.encode("<path>")]
    if len(toks) < i + 5 or toks[i] != expect[0] or toks[i + 2] != expect[2] or toks[i + 4] != expect[4]:
        raise ValueError("malformed start/goal/path section")
    start = decode_dfs_cells([toks[i + 1]], vocab)[0]
    goal = decode_dfs_cells([toks[i + 3]], vocab)[0]
    if record.sol_start != i + 5 or record.sol_end != len(toks):
        raise ValueError("solution region is not the sequence tail")
    solution = decode_dfs_cells(toks[record.sol_start :], vocab)
    return DfsMaze(vocab.size, edges, start, goal, solution)


def deserialize_astar(record: DatasetRecord, vocab: Vocabulary) -> AstarMaze:
    """Inverse of serialize_astar; structural violations raise ValueError."""
    toks = record.tokens
    wall_tok = vocab.encode("<wall>")
    i = 0
    walls = set()
    while i < len(toks) and toks[i] == wall_tok:
        if i + 2 >= len(toks):
            raise ValueError("truncated wall triple")
        walls.add(decode_astar_cells(toks[i + 1 : i + 3], vocab)[0])
        i += 3
    if (
        len(toks) < i + 7
        or toks[i] != vocab.encode("<start>")
        or toks[i + 3] != vocab.encode("<goal>")
        or toks[i + 6] != vocab.encode("<plan>")
    ):
        raise ValueError("malformed start/goal/plan section")
    start = decode_astar_cells(toks[i + 1 : i + 3], vocab)[0]
    goal = decode_astar_cells(toks[i + 4 : i + 6], vocab)[0]
    if record.sol_start != i + 7 or record.sol_end != len(toks):
        raise ValueError("solution region is not the sequence tail")
    solution = decode_astar_cells(toks[record.sol_start :], vocab)
    return AstarMaze(vocab.size, walls, start, goal, solution)


def deserialize_record(
    record: DatasetRecord, vocab: Vocabulary
) -> Union[DfsMaze, AstarMaze]:
    if vocab.kind == "dfs":
        return deserialize_dfs(record, vocab)
    return deserialize_astar(record, vocab)


def retokenize_record(
    record: DatasetRecord, src: Vocabulary, dst: Vocabulary
) -> DatasetRecord:
    """Re-express a record under another vocabulary via token strings.

    Works whenever every token string of the source record exists in the
    destination vocabulary (e.g. a smaller grid under a larger grid's
    vocabulary of the same kind); raises UnknownToken otherwise.
    """
    mapped = [dst.encode(src.decode(t)) for t in record.tokens]
    return DatasetRecord(
        id=record.id, tokens=mapped, sol_start=record.sol_start, sol_end=record.sol_end
    )


def build_corpus(
    kind: str,
    L: int,
    count: int,
    seed: int,
    wall_fraction: float = 0.40,
    max_attempts: int = 10_000,
    jobs: int = 1,
) -> tuple[list[DatasetRecord], Vocabulary]:
    """Generate `count` mazes with per-index derived seeds and serialize them.

    Seeds are derived per index, so any worker count yields the identical
    corpus in the identical order.
    """
    vocab = build_vocab(kind, L)

    def one(index: int) -> DatasetRecord:
        maze_seed = derive_seed(seed, index)
        inst = make_instance(kind, L, maze_seed, wall_fraction, max_attempts)
        return serialize_instance(inst, vocab)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, range(count)))
    else:
        records = [one(i) for i in range(count)]
    return records, vocab


def split_corpus(
    records: list[DatasetRecord], n_val: int, seed: int
) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
    """Deterministic shuffled split into (train, validation)."""
    if n_val >= len(records):
        raise InsufficientRecords(
            f"cannot hold out {n_val} of {len(records)} records"
        )
    perm = _rng(seed).permutation(len(records))
    val = [records[int(i)] for i in perm[:n_val]]
    train = [records[int(i)] for i in perm[n_val:]]
    return train, val


def write_corpus(
    records: list[DatasetRecord], manifest: CorpusManifest, path: Union[str, Path]
) -> None:
    lines = [manifest.to_json()]
    for r in records:
        lines.append(
            json.dumps(
                {"id": r.id, "tokens": r.tokens, "sol_start": r.sol_start, "sol_end": r.sol_end},
                separators=(",", ":"),
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_corpus(path: Union[str, Path]) -> tuple[list[DatasetRecord], CorpusManifest]:
    """Exact inverse of write_corpus; FormatError carries the 1-based line."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty corpus file", line=1)
    try:
        raw = json.loads(lines[0])
        manifest = CorpusManifest(
            kind=raw["kind"],
            size=raw["size"],
            train_count=raw["train_count"],
            val_count=raw["val_count"],
            seed=raw["seed"],
            vocab_hash=raw["vocab_hash"],
            split=raw["split"],
            version=raw["version"],
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"bad manifest: {exc}", line=1)
    if manifest.version != FORMAT_VERSION:
        raise FormatError(
            f"unsupported corpus version {manifest.version}", line=1
        )
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            raw = json.loads(line)
            record = DatasetRecord(
                id=raw["id"],
                tokens=raw["tokens"],
                sol_start=raw["sol_start"],
                sol_end=raw["sol_end"],
            )
            if not isinstance(record.tokens, list) or not all(
                isinstance(t, int) for t in record.tokens
            ):
                raise TypeError("tokens must be a list of ints")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"bad record: {exc}", line=lineno)
        records.append(record)
    return records, manifest


def write_vocab(vocab: Vocabulary, path: Union[str, Path]) -> None:
    Path(path).write_text(vocab.to_json() + "\n", encoding="utf-8")
