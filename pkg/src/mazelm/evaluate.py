"""Generative inference and accuracy measurement.

Masked models fill the solution region left to right: encode under the
current visibility mask, decode one query at the next hidden position,
take the argmax, reveal it, repeat. Decoder-only models greedily continue
the maze prefix. Either way every non-solution position is copied through
untouched and the output length equals the input length.

Reports score three things per instance: exact token match of the whole
solution (full path), the fraction of matching tokens against the
reference length (per token), and a path category from the maze oracle,
with ParseError for predictions that do not detokenize.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import (
    MASK_ID,
    PAD_ID,
    DatasetRecord,
    Vocabulary,
    decode_astar_cells,
    decode_dfs_cells,
    deserialize_record,
    retokenize_record,
    serialize_instance,
)
from .errors import UnknownToken
from .mazes import MazeInstance, PathCategory, derive_seed, embed_maze, validate_path
from .model import ModelConfig, ModelParams, causal_forward, enc_dec_forward

PARSE_ERROR = "ParseError"
_CATEGORIES = (
    PathCategory.SHORTEST_MATCH.value,
    PathCategory.VALID_NOT_SHORTEST.value,
    PathCategory.INVALID.value,
    PARSE_ERROR,
)


def greedy_pick(logits: np.ndarray) -> int:
    """Temperature-0 choice. Invariant under any positive logit scaling."""
    return int(np.argmax(logits))


def generate_path(params: ModelParams, cfg: ModelConfig, record: DatasetRecord) -> list[int]:
    """Predict the solution region of one record; everything else is copied."""
    return _batch_generate(params, cfg, [record])[0]


def _batch_generate(
    params: ModelParams, cfg: ModelConfig, records: list[DatasetRecord]
) -> list[list[int]]:
    """Left-to-right generation for a batch; rows finish independently."""
    b = len(records)
    t_max = max(len(r.tokens) for r in records)
    ids = np.full((b, t_max), PAD_ID, dtype=np.int64)
    real = np.zeros((b, t_max), dtype=bool)
    pos = np.zeros(b, dtype=np.int64)
    end = np.zeros(b, dtype=np.int64)
    for i, r in enumerate(records):
        ids[i, : len(r.tokens)] = r.tokens
        real[i, : len(r.tokens)] = True
        pos[i] = r.sol_start
        end[i] = r.sol_end
    if cfg.arch == "enc_dec":
        vis = real.copy()
        for i, r in enumerate(records):
            ids[i, r.sol_start : r.sol_end] = MASK_ID
            vis[i, r.sol_start : r.sol_end] = False
        while True:
            rows = np.nonzero(pos < end)[0]
            if rows.size == 0:
                break
            q = pos[rows][:, None]
            logits, _ = enc_dec_forward(params, cfg, ids[rows], vis[rows], q)
            picks = np.argmax(logits[:, 0, :], axis=-1)
            ids[rows, pos[rows]] = picks
            vis[rows, pos[rows]] = True
            pos[rows] += 1
    else:
        # Greedy continuation; right padding sits after every read position,
        # so causality keeps it inert.
        for i, r in enumerate(records):
            ids[i, r.sol_start :] = PAD_ID
        while True:
            rows = np.nonzero(pos < end)[0]
            if rows.size == 0:
                break
            width = int(pos[rows].max())
            logits = causal_forward(params, cfg, ids[rows, :width])
            picks = np.argmax(logits[np.arange(rows.size), pos[rows] - 1], axis=-1)
            ids[rows, pos[rows]] = picks
            pos[rows] += 1
    outs = []
    for i, r in enumerate(records):
        toks = list(r.tokens)
        toks[r.sol_start : r.sol_end] = [int(x) for x in ids[i, r.sol_start : r.sol_end]]
        outs.append(toks)
    return outs


@dataclass
class EvalReport:
    n: int
    full_path_accuracy: float
    per_token_accuracy: float
    histogram: dict[str, int]
    instances: list[dict] = field(repr=False)

    def to_json(self) -> str:
        body = {
            "n": self.n,
            "full_path_accuracy": self.full_path_accuracy,
            "per_token_accuracy": self.per_token_accuracy,
            "histogram": {k: self.histogram[k] for k in _CATEGORIES},
            "instances": self.instances,
        }
        return json.dumps(body, separators=(",", ":"))


def _categorize(record: DatasetRecord, predicted: list[int], vocab: Vocabulary) -> str:
    try:
        if vocab.kind == "dfs":
            cells = decode_dfs_cells(predicted, vocab)
        else:
            cells = decode_astar_cells(predicted, vocab)
    except (UnknownToken, ValueError):
        return PARSE_ERROR
    maze = deserialize_record(record, vocab)
    instance = MazeInstance(kind=vocab.kind, payload=maze, id=record.id)
    return validate_path(instance, cells).value


def grade(
    records: list[DatasetRecord],
    predictions: list[list[int]],
    vocab: Vocabulary,
) -> EvalReport:
    """Grade predicted solution-region tokens against their records.

    Per-token accuracy is measured over the reference length; full path
    requires exact token equality. Instances are reported sorted by id.
    """
    if len(records) != len(predictions):
        raise ValueError("one prediction per record required")
    histogram = {k: 0 for k in _CATEGORIES}
    instances = []
    exact = 0
    token_fracs = []
    for r, pred in zip(records, predictions):
        ref = list(r.tokens[r.sol_start : r.sol_end])
        matches = sum(1 for a, b in zip(pred, ref) if a == b)
        token_fracs.append(matches / len(ref) if ref else 1.0)
        if list(pred) == ref:
            exact += 1
        cat = _categorize(r, list(pred), vocab)
        histogram[cat] += 1
        instances.append({"id": r.id, "predicted": list(pred), "category": cat})
    instances.sort(key=lambda rec: rec["id"])
    n = len(records)
    return EvalReport(
        n=n,
        full_path_accuracy=exact / n if n else 0.0,
        per_token_accuracy=float(np.mean(token_fracs)) if token_fracs else 0.0,
        histogram=histogram,
        instances=instances,
    )


def score(
    params: ModelParams,
    cfg: ModelConfig,
    records: list[DatasetRecord],
    vocab: Vocabulary,
    batch_size: int = 64,
) -> EvalReport:
    """Generate and grade every record."""
    predictions = []
    for lo in range(0, len(records), batch_size):
        chunk = records[lo : lo + batch_size]
        outputs = _batch_generate(params, cfg, chunk)
        predictions.extend(toks[r.sol_start : r.sol_end] for r, toks in zip(chunk, outputs))
    return grade(records, predictions, vocab)


def transfer_eval(
    params: ModelParams,
    cfg: ModelConfig,
    records: list[DatasetRecord],
    small_vocab: Vocabulary,
    big_vocab: Vocabulary,
    mode: str,
    seed: int = 0,
    batch_size: int = 64,
) -> EvalReport:
    """Evaluate small-maze records under a larger grid's model.

    retokenized re-expresses the records in the big vocabulary verbatim;
    embedded plants each maze in the big grid's upper-left corner first.
    """
    if mode == "retokenized":
        moved = [retokenize_record(r, small_vocab, big_vocab) for r in records]
    elif mode == "embedded":
        moved = []
        for r in records:
            inner = deserialize_record(r, small_vocab)
            grown = embed_maze(inner, big_vocab.size, derive_seed("embed", seed, r.id))
            moved.append(serialize_instance(grown, big_vocab))
    else:
        raise ValueError(f"unknown transfer mode {mode!r}")
    return score(params, cfg, moved, big_vocab, batch_size=batch_size)


def data_efficiency_sweep(
    sizes: list[int],
    train_cfg,
    model_cfg: ModelConfig,
    records: list[DatasetRecord],
    val_records: list[DatasetRecord],
    vocab: Vocabulary,
    out_dir: str,
) -> list[dict]:
    """Retrain from scratch on nested prefixes of the corpus, same seeds."""
    from .trainer import train

    if sorted(sizes) != list(sizes):
        raise ValueError("sizes must be ascending")
    if sizes and sizes[-1] > len(records):
        raise ValueError("largest size exceeds the corpus")
    rows = []
    for size in sizes:
        sub_dir = f"{out_dir}/n{size}"
        params, _ = train(train_cfg, model_cfg, records[:size], val_records, vocab, sub_dir)
        report = score(params, model_cfg, val_records, vocab)
        rows.append(
            {
                "train_size": size,
                "full_path_accuracy": report.full_path_accuracy,
                "per_token_accuracy": report.per_token_accuracy,
            }
        )
    return rows
