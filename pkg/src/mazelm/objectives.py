"""Mask sampling and the two training losses.

The masked objective draws one masking rate per batch, uniformly from
[0, 1], then masks each solution-region token independently at that rate;
tokens outside the solution region are never masked. Masked input positions
are replaced by the MASK token id and hidden from attention; the loss is the
mean cross-entropy over all masked positions in the batch. The next-token
objective is teacher-forced causal prediction restricted to positions whose
target token lies inside the solution region, so both objectives supervise
exactly the same span.

The ordered-mask ablation masks a uniformly chosen suffix of the solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import MASK_ID, PAD_ID, DatasetRecord
from .model import (
    ModelConfig,
    ModelParams,
    causal_forward,
    dec_only_backward,
    enc_dec_backward,
    enc_dec_forward,
    zero_grads,
)


@dataclass
class MaskSpec:
    """Sampled masking rate and the position masks it induced.

    m_pred marks prediction targets (a subset of the solution region);
    m_enc is always its exact complement: the visible context.
    """

    mu: float
    m_pred: np.ndarray
    m_enc: np.ndarray


def sample_uniform_mask(
    record: DatasetRecord, rng: np.random.Generator, mu: Optional[float] = None
) -> MaskSpec:
    """Bernoulli(mu) mask over the solution region only.

    mu is drawn fresh from Uniform(0,1) when not supplied; batch callers
    pass one shared draw (the rate is per batch, not per sequence).
    """
    if mu is None:
        mu = float(rng.random())
    t = len(record.tokens)
    m_pred = np.zeros(t, dtype=bool)
    span = record.sol_end - record.sol_start
    if span > 0:
        m_pred[record.sol_start : record.sol_end] = rng.random(span) < mu
    return MaskSpec(mu=mu, m_pred=m_pred, m_enc=~m_pred)


def sample_ordered_mask(record: DatasetRecord, rng: np.random.Generator) -> MaskSpec:
    """Mask a uniformly chosen solution position and everything after it."""
    span = record.sol_end - record.sol_start
    if span <= 0:
        raise ValueError("record has an empty solution region")
    pick = record.sol_start + int(rng.integers(span))
    t = len(record.tokens)
    m_pred = np.zeros(t, dtype=bool)
    m_pred[pick : record.sol_end] = True
    # mu records the realized masked fraction of the solution region.
    return MaskSpec(mu=(record.sol_end - pick) / span, m_pred=m_pred, m_enc=~m_pred)


def sample_batch_masks(
    records: list[DatasetRecord],
    rng: np.random.Generator,
    kind: str = "uniform",
) -> list[MaskSpec]:
    """Masks for one batch: uniform shares a single mu draw across records."""
    if kind == "uniform":
        mu = float(rng.random())
        return [sample_uniform_mask(r, rng, mu) for r in records]
    if kind == "ordered":
        return [sample_ordered_mask(r, rng) for r in records]
    raise ValueError(f"unknown mask kind {kind!r}")


def _pad_ids(records: list[DatasetRecord]) -> tuple[np.ndarray, np.ndarray]:
    t_max = max(len(r.tokens) for r in records)
    ids = np.full((len(records), t_max), PAD_ID, dtype=np.int64)
    real = np.zeros((len(records), t_max), dtype=bool)
    for i, r in enumerate(records):
        ids[i, : len(r.tokens)] = r.tokens
        real[i, : len(r.tokens)] = True
    return ids, real


def _cross_entropy(
    logits: np.ndarray, targets: np.ndarray, valid: np.ndarray
) -> tuple[float, np.ndarray, int]:
    """Mean CE over valid rows; returns (loss, dlogits, n_valid).

    dlogits is already scaled by 1/n_valid and zeroed on invalid rows.
    """
    flat = logits.reshape(-1, logits.shape[-1])
    tgt = targets.reshape(-1)
    ok = valid.reshape(-1)
    n = int(ok.sum())
    if n == 0:
        return 0.0, np.zeros_like(logits), 0
    m = flat.max(axis=-1, keepdims=True)
    e = np.exp(flat - m)
    s = e.sum(axis=-1)
    rows = np.arange(flat.shape[0])
    ce = np.log(s) + m[:, 0] - flat[rows, tgt]
    loss = float(np.sum(ce[ok], dtype=np.float64) / n)
    dflat = e / s[:, None]
    dflat[rows, tgt] -= 1.0
    dflat[~ok] = 0.0
    dflat /= n
    return loss, dflat.reshape(logits.shape).astype(logits.dtype, copy=False), n


def mlmu_loss(
    params: ModelParams,
    cfg: ModelConfig,
    records: list[DatasetRecord],
    masks: list[MaskSpec],
) -> tuple[float, ModelParams]:
    """Masked-prediction loss and gradients for one batch.

    Masked inputs become the MASK id, visibility excludes masked and pad
    positions, and one decoder query is placed at every masked position.
    Batches where nothing was masked return zero loss and zero gradients.
    """
    if len(records) != len(masks):
        raise ValueError("one mask per record required")
    ids, real = _pad_ids(records)
    b, t = ids.shape
    m_pred = np.zeros((b, t), dtype=bool)
    for i, spec in enumerate(masks):
        m_pred[i, : spec.m_pred.shape[0]] = spec.m_pred
    counts = m_pred.sum(axis=1)
    tq = int(counts.max()) if b else 0
    if tq == 0:
        return 0.0, zero_grads(cfg)
    visible = ~m_pred & real
    ids_in = np.where(m_pred, MASK_ID, ids)
    q_pos = np.zeros((b, tq), dtype=np.int64)
    q_valid = np.zeros((b, tq), dtype=bool)
    targets = np.zeros((b, tq), dtype=np.int64)
    for i in range(b):
        idx = np.nonzero(m_pred[i])[0]
        q_pos[i, : idx.size] = idx
        q_valid[i, : idx.size] = True
        targets[i, : idx.size] = ids[i, idx]
    logits, cache = enc_dec_forward(params, cfg, ids_in, visible, q_pos)
    loss, dlogits, _ = _cross_entropy(logits, targets, q_valid)
    grads = enc_dec_backward(params, cfg, cache, dlogits)
    return loss, grads


def next_token_loss(
    params: ModelParams,
    cfg: ModelConfig,
    records: list[DatasetRecord],
) -> tuple[float, ModelParams]:
    """Teacher-forced causal loss over solution-region targets only."""
    if cfg.arch != "dec_only":
        raise ValueError("next_token_loss requires arch=dec_only")
    ids, real = _pad_ids(records)
    b, t = ids.shape
    logits, cache = causal_forward(params, cfg, ids, want_cache=True)
    # Position j predicts token j+1; supervise where j+1 is a solution token.
    targets = np.zeros((b, t), dtype=np.int64)
    targets[:, :-1] = ids[:, 1:]
    valid = np.zeros((b, t), dtype=bool)
    for i, r in enumerate(records):
        lo = max(r.sol_start - 1, 0)
        valid[i, lo : r.sol_end - 1] = True
    valid &= real
    loss, dlogits, _ = _cross_entropy(logits, targets, valid)
    grads = dec_only_backward(params, cfg, cache, dlogits)
    return loss, grads
