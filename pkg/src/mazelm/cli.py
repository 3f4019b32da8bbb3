"""Command-line surface: gen / train / eval / render / sweep.

Exit codes:
  0  success
  2  usage error (bad flags, bad or missing config keys, unknown instance,
     vocabulary/checkpoint mismatches)
  3  generation failure (rejection budget exhausted)
  4  I/O failure (missing or malformed files, corrupt checkpoints)
  5  training diverged (non-finite loss)

Every command is deterministic given its flags; all randomness flows from
the --seed flag (or the seed config key).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from .corpus import (
    CorpusManifest,
    DatasetRecord,
    Vocabulary,
    build_corpus,
    build_vocab,
    read_corpus,
    split_corpus,
    write_corpus,
    write_vocab,
)
from .checkpoint import load_checkpoint
from .errors import (
    CorruptCheckpoint,
    FormatError,
    GenerationExhausted,
    InsufficientRecords,
    NoPath,
    NonFiniteLoss,
    SequenceTooLong,
    UnknownInstance,
    UnknownToken,
    VersionMismatch,
)
from .evaluate import data_efficiency_sweep, grade, score, transfer_eval, _batch_generate
from .mazes import derive_seed
from .model import ModelConfig, ModelParams
from .render import render_instance
from .trainer import _OBJECTIVE_ARCH, TrainConfig, train, weight_decay_sweep


class _Usage(Exception):
    """Invalid flags or config; reported with exit code 2."""


# ---------------------------------------------------------------------------
# config files: flat "key = value" lines, '#' comments

_TRAIN_SCHEMA: dict[str, type] = {
    "objective": str,
    "epochs": int,
    "lr": float,
    "weight_decay": float,
    "beta1": float,
    "beta2": float,
    "batch_size": int,
    "seed": int,
    "eval_every": int,
    "clip_norm": float,
    "eval_limit": int,
    "train_eval_limit": int,
    "width": int,
    "depth": int,
    "heads": int,
    "max_seq": int,
    "dtype": str,
    "pos_precision": str,
    "train_corpus": str,
    "val_corpus": str,
    "out_dir": str,
    "profile": str,
}
_REQUIRED_KEYS = ("objective", "epochs", "train_corpus", "val_corpus", "out_dir")
_DESK_PROFILE = {"width": 64, "depth": 8, "heads": 4, "batch_size": 64}


def _parse_config_text(path: Path) -> dict[str, str]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise _Usage(f"config line {lineno} is not key=value: {stripped!r}")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def _load_train_config(path: Path) -> dict:
    raw = _parse_config_text(path)
    for key in raw:
        if key not in _TRAIN_SCHEMA:
            raise _Usage(f"unknown config key: {key}")
    for key in _REQUIRED_KEYS:
        if key not in raw:
            raise _Usage(f"missing config key: {key}")
    vals: dict = {}
    for key, typ in _TRAIN_SCHEMA.items():
        if key not in raw:
            continue
        try:
            vals[key] = typ(raw[key])
        except ValueError:
            raise _Usage(f"config key {key} expects {typ.__name__}, got {raw[key]!r}")
    profile = vals.pop("profile", "")
    if profile not in ("", "desk"):
        raise _Usage(f"unknown profile {profile!r} (expected 'desk')")
    if profile == "desk":
        # Profile fills gaps; explicit keys always win.
        for key, value in _DESK_PROFILE.items():
            vals.setdefault(key, value)
    return vals


def _vocab_for(manifest: CorpusManifest) -> Vocabulary:
    vocab = build_vocab(manifest.kind, manifest.size)
    if vocab.vocab_hash != manifest.vocab_hash:
        raise FormatError(
            f"manifest vocab hash {manifest.vocab_hash} does not match "
            f"{manifest.kind}/{manifest.size}",
            line=1,
        )
    return vocab


def _prepare_training(vals: dict):
    """Shared train/sweep setup: corpora, vocabulary, model and run configs."""
    train_records, train_man = read_corpus(vals["train_corpus"])
    val_records, val_man = read_corpus(vals["val_corpus"])
    if (train_man.kind, train_man.size) != (val_man.kind, val_man.size):
        raise _Usage(
            f"train corpus is {train_man.kind}/{train_man.size} but val corpus "
            f"is {val_man.kind}/{val_man.size}"
        )
    vocab = _vocab_for(train_man)
    objective = vals["objective"]
    if objective not in _OBJECTIVE_ARCH:
        raise _Usage(f"unknown objective {objective!r}")
    max_seq = vals.get("max_seq", 0)
    if max_seq <= 0:
        max_seq = max(r.seq_len for r in train_records + val_records)
    model_cfg = ModelConfig(
        v=len(vocab),
        d=vals.get("width", 64),
        depth=vals.get("depth", 8),
        heads=vals.get("heads", 4),
        max_seq=max_seq,
        arch=_OBJECTIVE_ARCH[objective],
        pos_precision=vals.get("pos_precision", "high"),
        dtype=vals.get("dtype", "float32"),
    )
    train_cfg = TrainConfig(
        objective=objective,
        epochs=vals["epochs"],
        lr=vals.get("lr", 1e-3),
        weight_decay=vals.get("weight_decay"),
        betas=(vals.get("beta1", 0.9), vals.get("beta2", 0.999)),
        batch_size=vals.get("batch_size", 128),
        seed=vals.get("seed", 0),
        eval_every=vals.get("eval_every", 0),
        clip_norm=vals.get("clip_norm", 1.0),
        eval_limit=vals.get("eval_limit", 0),
        train_eval_limit=vals.get("train_eval_limit", 128),
    )
    return train_cfg, model_cfg, train_records, val_records, vocab, vals["out_dir"]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, vocab = build_corpus(
        args.kind,
        args.size,
        args.count,
        args.seed,
        wall_fraction=args.wall_fraction,
        max_attempts=args.max_attempts,
        jobs=args.jobs,
    )
    train_recs, val_recs = split_corpus(records, args.n_val, derive_seed("split", args.seed))
    manifest = CorpusManifest(
        kind=args.kind,
        size=args.size,
        train_count=len(train_recs),
        val_count=len(val_recs),
        seed=args.seed,
        vocab_hash=vocab.vocab_hash,
        split=f"holdout:{args.n_val}",
    )
    write_corpus(train_recs, manifest, out / "train.jsonl")
    write_corpus(val_recs, manifest, out / "val.jsonl")
    write_vocab(vocab, out / "vocab.json")
    print(
        f"wrote {out}: kind={manifest.kind} size={manifest.size} "
        f"train={manifest.train_count} val={manifest.val_count} "
        f"seed={manifest.seed} vocab_hash={manifest.vocab_hash}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    vals = _load_train_config(Path(args.config))
    train_cfg, model_cfg, train_records, val_records, vocab, out_dir = _prepare_training(vals)
    _, rows = train(
        train_cfg, model_cfg, train_records, val_records, vocab, out_dir, resume=args.resume
    )
    if rows:
        last = rows[-1]
        print(
            f"step={last['step']} val_full_path={last['val_full_path']:.4f} "
            f"val_per_token={last['val_per_token']:.4f}"
        )
    else:
        print("no optimizer steps taken")
    print(f"checkpoints and metrics in {out_dir}")
    return 0


def _score_parallel(
    params: ModelParams,
    cfg: ModelConfig,
    records: list[DatasetRecord],
    vocab: Vocabulary,
    batch_size: int,
    jobs: int,
):
    """score() with instance-parallel workers; identical output for any jobs."""
    if jobs <= 1:
        return score(params, cfg, records, vocab, batch_size=batch_size)

    def predict(chunk: list[DatasetRecord]) -> list[list[int]]:
        preds = []
        for lo in range(0, len(chunk), batch_size):
            sub = chunk[lo : lo + batch_size]
            outs = _batch_generate(params, cfg, sub)
            preds.extend(toks[r.sol_start : r.sol_end] for r, toks in zip(sub, outs))
        return preds

    chunks = [records[i::jobs] for i in range(jobs)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(predict, chunks))
    # Undo the round-robin striping.
    predictions: list[Optional[list[int]]] = [None] * len(records)
    for stripe, part in enumerate(parts):
        for j, pred in enumerate(part):
            predictions[stripe + j * jobs] = pred
    return grade(records, predictions, vocab)


def cmd_eval(args: argparse.Namespace) -> int:
    if args.embed and args.transfer is None:
        raise _Usage("--embed requires --transfer")
    params, cfg, step = load_checkpoint(args.checkpoint)
    records, manifest = read_corpus(args.corpus)
    small_vocab = _vocab_for(manifest)
    if args.transfer is not None:
        big_vocab = build_vocab(manifest.kind, args.transfer)
        if len(big_vocab) != cfg.v:
            raise _Usage(
                f"checkpoint expects vocabulary of {cfg.v} tokens but "
                f"{manifest.kind}/{args.transfer} has {len(big_vocab)}"
            )
        mode = "embedded" if args.embed else "retokenized"
        report = transfer_eval(
            params, cfg, records, small_vocab, big_vocab, mode,
            seed=args.seed, batch_size=args.batch_size,
        )
    else:
        if len(small_vocab) != cfg.v:
            raise _Usage(
                f"checkpoint expects vocabulary of {cfg.v} tokens but "
                f"{manifest.kind}/{manifest.size} has {len(small_vocab)}"
            )
        report = _score_parallel(
            params, cfg, records, small_vocab, args.batch_size, args.jobs
        )
    payload = report.to_json()
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        print(
            f"step={step} n={report.n} full_path={report.full_path_accuracy:.4f} "
            f"per_token={report.per_token_accuracy:.4f} -> {args.out}"
        )
    else:
        print(payload)
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    records, manifest = read_corpus(args.corpus)
    vocab = _vocab_for(manifest)
    predicted = None
    if args.predictions:
        data = json.loads(Path(args.predictions).read_text(encoding="utf-8"))
        row = next(
            (r for r in data.get("instances", []) if r.get("id") == args.id), None
        )
        if row is None:
            raise UnknownInstance(f"no prediction for instance id {args.id}")
        predicted = row["predicted"]
    text = render_instance(records, vocab, args.id, predicted, args.format)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    if (args.weight_decays is None) == (args.sizes is None):
        raise _Usage("pass exactly one of --weight-decays or --sizes")
    vals = _load_train_config(Path(args.config))
    train_cfg, model_cfg, train_records, val_records, vocab, out_dir = _prepare_training(vals)
    if args.weight_decays is not None:
        try:
            decays = [float(v) for v in args.weight_decays.split(",") if v]
        except ValueError:
            raise _Usage(f"--weight-decays expects comma-separated floats: {args.weight_decays!r}")
        rows = weight_decay_sweep(
            decays, train_cfg, model_cfg, train_records, val_records, vocab, out_dir
        )
    else:
        try:
            sizes = [int(v) for v in args.sizes.split(",") if v]
        except ValueError:
            raise _Usage(f"--sizes expects comma-separated ints: {args.sizes!r}")
        rows = data_efficiency_sweep(
            sizes, train_cfg, model_cfg, train_records, val_records, vocab, out_dir
        )
    out_path = Path(out_dir) / "sweep.json"
    out_path.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    for row in rows:
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    print(f"wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mazelm",
        description="Maze corpora, transformer training, evaluation, rendering.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a maze corpus and write train/val splits")
    g.add_argument("--kind", required=True, choices=("dfs", "astar"))
    g.add_argument("--size", required=True, type=int, help="grid side length L")
    g.add_argument("--count", required=True, type=int, help="total mazes to generate")
    g.add_argument("--n-val", type=int, default=0, help="records held out for validation")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--wall-fraction", type=float, default=0.40)
    g.add_argument("--max-attempts", type=int, default=10_000)
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train per a key=value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--out", default=None, help="report path (prints JSON without it)")
    e.add_argument(
        "--transfer",
        type=int,
        default=None,
        metavar="L",
        help="treat records as a smaller grid inside this grid size",
    )
    e.add_argument("--embed", action="store_true", help="embed mazes instead of retokenizing")
    e.add_argument("--batch-size", type=int, default=64)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="draw one instance as ascii or svg")
    r.add_argument("--corpus", required=True)
    r.add_argument("--id", required=True, type=int)
    r.add_argument("--format", choices=("ascii", "svg"), default="ascii")
    r.add_argument("--predictions", default=None, help="eval report JSON with instances")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_render)

    s = sub.add_parser("sweep", help="grid sweep over weight decay or corpus size")
    s.add_argument("--config", required=True)
    s.add_argument("--weight-decays", default=None, help="comma-separated decay values")
    s.add_argument("--sizes", default=None, help="comma-separated training-set sizes")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (_Usage, UnknownInstance, UnknownToken, SequenceTooLong, InsufficientRecords) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GenerationExhausted, NoPath) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except (FormatError, CorruptCheckpoint, VersionMismatch, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:  # bad domain values reaching module contracts
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
