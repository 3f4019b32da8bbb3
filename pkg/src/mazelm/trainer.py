"""Optimization loop, hyperparameter defaults, and metric logging.

Defaults follow the training recipe: constant learning rate 1e-3, Adam
betas (0.9, 0.999), weight decay 1e-4 for next-token and 0 for the masked
objectives, batches of 128 at full scale (overridable downward), at most
3000 epochs. Every run is reproducible from its seed: parameter init,
per-epoch shuffles, and per-step mask draws all use seeds derived from
(purpose, seed, index), so a resumed run replays the identical stream.

Metrics are appended as JSON lines, one row per evaluation: step, epoch,
mean train loss since the last row, train/held-out full-path accuracy,
held-out per-token accuracy, and wall-clock seconds. The best checkpoint
tracks held-out full-path accuracy; a final checkpoint is always written.

Resuming restarts optimizer moments (they are not checkpointed) but keeps
the global step, so a run split into chunks at epoch boundaries sees the
same data order as an unbroken one.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import DatasetRecord, Vocabulary
from .errors import NonFiniteLoss, VersionMismatch
from .evaluate import score
from .mazes import derive_seed
from .model import ModelConfig, init_params
from .objectives import mlmu_loss, next_token_loss, sample_batch_masks
from .optim import AdamW, clip_gradients

MAX_EPOCHS = 3000

_OBJECTIVE_ARCH = {"mlmu": "enc_dec", "ordered": "enc_dec", "next_token": "dec_only"}


@dataclass
class TrainConfig:
    objective: str
    epochs: int
    lr: float = 1e-3
    weight_decay: Optional[float] = None
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 128
    seed: int = 0
    eval_every: int = 0  # optimizer steps between metric rows; 0 = end of run only
    clip_norm: float = 1.0  # global-norm gradient clip; 0 disables
    eval_limit: int = 0  # held-out records per eval; 0 = all
    train_eval_limit: int = 128  # train records scored per eval

    def __post_init__(self) -> None:
        if self.objective not in _OBJECTIVE_ARCH:
            raise ValueError(f"unknown objective {self.objective!r}")
        if not 0 <= self.epochs <= MAX_EPOCHS:
            raise ValueError(f"epochs must be within [0, {MAX_EPOCHS}]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.weight_decay is None:
            self.weight_decay = 1e-4 if self.objective == "next_token" else 0.0


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def train(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    train_records: list[DatasetRecord],
    val_records: list[DatasetRecord],
    vocab: Vocabulary,
    out_dir: str,
    resume: Optional[str] = None,
) -> tuple[dict, list[dict]]:
    """Run the loop; returns (final params, metric rows from this run)."""
    want_arch = _OBJECTIVE_ARCH[train_cfg.objective]
    if model_cfg.arch != want_arch:
        raise ValueError(
            f"objective {train_cfg.objective!r} requires arch {want_arch!r}, got {model_cfg.arch!r}"
        )
    if not train_records:
        raise ValueError("empty training corpus")
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.jsonl")

    if resume is not None:
        params, loaded_cfg, step = load_checkpoint(resume)
        if loaded_cfg != model_cfg:
            raise VersionMismatch("resume checkpoint config differs from the requested one")
        mode = "a"
    else:
        params = init_params(model_cfg, derive_seed("init", train_cfg.seed))
        step = 0
        mode = "w"

    opt = AdamW(
        params,
        lr=train_cfg.lr,
        betas=train_cfg.betas,
        weight_decay=train_cfg.weight_decay,
    )
    opt.t = step

    n = len(train_records)
    steps_per_epoch = math.ceil(n / train_cfg.batch_size)
    start_epoch = step // steps_per_epoch
    t0 = time.perf_counter()
    rows: list[dict] = []
    window: list[float] = []
    best_val = -1.0
    mask_kind = "ordered" if train_cfg.objective == "ordered" else "uniform"

    with open(metrics_path, mode) as log:

        def emit(epoch: int) -> None:
            nonlocal best_val
            cap = train_cfg.train_eval_limit
            sub = train_records[:cap] if cap > 0 else train_records
            train_rep = score(params, model_cfg, sub, vocab)
            val_fp = val_pt = None
            if val_records:
                vcap = train_cfg.eval_limit
                vsub = val_records[:vcap] if vcap > 0 else val_records
                val_rep = score(params, model_cfg, vsub, vocab)
                val_fp = val_rep.full_path_accuracy
                val_pt = val_rep.per_token_accuracy
            row = {
                "step": step,
                "epoch": epoch,
                "train_loss": float(np.mean(window)) if window else None,
                "train_full_path": train_rep.full_path_accuracy,
                "val_full_path": val_fp,
                "val_per_token": val_pt,
                "wall_clock": time.perf_counter() - t0,
            }
            window.clear()
            rows.append(row)
            log.write(json.dumps(row, separators=(",", ":")) + "\n")
            log.flush()
            if val_fp is not None and val_fp > best_val:
                best_val = val_fp
                save_checkpoint(os.path.join(out_dir, "best.ckpt"), params, model_cfg, step)

        last_emit = step
        for epoch in range(start_epoch, train_cfg.epochs):
            perm = _rng(derive_seed("shuffle", train_cfg.seed, epoch)).permutation(n)
            for lo in range(0, n, train_cfg.batch_size):
                batch = [train_records[int(i)] for i in perm[lo : lo + train_cfg.batch_size]]
                if train_cfg.objective == "next_token":
                    loss, grads = next_token_loss(params, model_cfg, batch)
                else:
                    mask_rng = _rng(derive_seed("mask", train_cfg.seed, step))
                    masks = sample_batch_masks(batch, mask_rng, kind=mask_kind)
                    loss, grads = mlmu_loss(params, model_cfg, batch, masks)
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"loss became {loss!r}", step=step)
                clip_gradients(grads, train_cfg.clip_norm)
                opt.step(params, grads)
                step += 1
                window.append(loss)
                if train_cfg.eval_every > 0 and step % train_cfg.eval_every == 0:
                    emit(epoch)
                    last_emit = step
        if step > last_emit:
            emit(train_cfg.epochs - 1)

    save_checkpoint(os.path.join(out_dir, "final.ckpt"), params, model_cfg, step)
    return params, rows


def weight_decay_sweep(
    values: list[float],
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    train_records: list[DatasetRecord],
    val_records: list[DatasetRecord],
    vocab: Vocabulary,
    out_dir: str,
) -> list[dict]:
    """Retrain per decay value, identical seeds; rank by held-out accuracy."""
    rows = []
    for wd in values:
        cfg = replace(train_cfg, weight_decay=wd)
        sub_dir = os.path.join(out_dir, f"wd{wd:g}")
        params, _ = train(cfg, model_cfg, train_records, val_records, vocab, sub_dir)
        report = score(params, model_cfg, val_records, vocab)
        rows.append(
            {
                "weight_decay": wd,
                "val_full_path": report.full_path_accuracy,
                "val_per_token": report.per_token_accuracy,
            }
        )
    return rows
