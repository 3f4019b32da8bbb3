"""Transformer stacks for maze navigation, with hand-written backward passes.

Two architectures on top of shared pre-norm GPT-2-layout blocks (self- or
cross-attention + width-4d GELU feed-forward, rotary position encoding on
queries and keys, tied embedding head):

* ``enc_dec``: depth/2 encoder blocks with visibility-masked self-attention,
  then depth/2 decoder blocks whose queries are copies of one trainable
  vector ``p`` placed at requested positions and which cross-attend to the
  final encoder states (no self-attention among queries).
* ``dec_only``: a standard causal stack for the next-token baseline.

Parameters live in a flat ``{name: ndarray}`` dict; the output head shares
storage with the embedding at all times. Forward functions return caches
that the matching ``*_backward`` functions consume; attention probabilities
are cached only while they fit a size budget and are recomputed chunkwise
otherwise, which keeps long-sequence training inside desk memory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import kernels
from .errors import SequenceTooLong

ROPE_BASE = 10000.0
LN_EPS = 1e-5

# Attention probability tensors above this budget are not cached for the
# backward pass; they are recomputed in slices instead.
_PROBS_CACHE_BYTES = int(os.environ.get("MAZELM_PROBS_CACHE_MB", "128")) * 2**20


@dataclass
class ModelConfig:
    v: int
    d: int
    depth: int
    heads: int
    max_seq: int
    arch: str = "enc_dec"
    pos_precision: str = "high"
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.arch not in ("enc_dec", "dec_only"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.pos_precision not in ("high", "low"):
            raise ValueError(f"unknown pos_precision {self.pos_precision!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if min(self.v, self.d, self.depth, self.heads, self.max_seq) < 1:
            raise ValueError("v, d, depth, heads, max_seq must be positive")
        if self.d % (2 * self.heads) != 0:
            raise ValueError("d must be divisible by 2 * heads (even head dim)")
        if self.arch == "enc_dec" and self.depth % 2 != 0:
            raise ValueError("enc_dec splits depth in half; depth must be even")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def np_dtype(self) -> type:
        return np.float32 if self.dtype == "float32" else np.float64


ModelParams = dict[str, np.ndarray]

_BLOCK_SHAPES = (
    ("ln1.g", "ln"),
    ("ln1.b", "ln"),
    ("wq", "proj"),
    ("bq", "bias"),
    ("wk", "proj"),
    ("bk", "bias"),
    ("wv", "proj"),
    ("bv", "bias"),
    ("wo", "res_proj"),
    ("bo", "bias"),
    ("ln2.g", "ln"),
    ("ln2.b", "ln"),
    ("w1", "mlp_in"),
    ("b1", "mlp_bias"),
    ("w2", "res_mlp"),
    ("b2", "bias"),
)


def block_prefixes(cfg: ModelConfig) -> list[str]:
    if cfg.arch == "dec_only":
        return [f"blk.{i}." for i in range(cfg.depth)]
    half = cfg.depth // 2
    return [f"enc.{i}." for i in range(half)] + [f"dec.{i}." for i in range(half)]


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Flat name -> shape map; iteration order fixes the init RNG stream."""
    d = cfg.d
    kind_shape = {
        "ln": (d,),
        "bias": (d,),
        "proj": (d, d),
        "res_proj": (d, d),
        "mlp_in": (d, 4 * d),
        "mlp_bias": (4 * d,),
        "res_mlp": (4 * d, d),
    }
    shapes: dict[str, tuple[int, ...]] = {"emb": (cfg.v, d)}
    if cfg.arch == "enc_dec":
        shapes["p"] = (d,)
    for pre in block_prefixes(cfg):
        for name, kind in _BLOCK_SHAPES:
            shapes[pre + name] = kind_shape[kind]
    if cfg.arch == "enc_dec":
        for ln in ("enc_lnf", "dec_lnf"):
            shapes[f"{ln}.g"] = (d,)
            shapes[f"{ln}.b"] = (d,)
    else:
        shapes["lnf.g"] = (d,)
        shapes["lnf.b"] = (d,)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Scaled-normal init: std 0.02, residual projections damped by
    1/sqrt(2 * depth); norm gains one, all biases zero; deterministic."""
    rng = np.random.Generator(np.random.Philox(key=seed & (2**64 - 1)))
    std = 0.02
    res_std = 0.02 / math.sqrt(2 * cfg.depth)
    params: ModelParams = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arr = np.ones(shape)
        elif leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2"):
            arr = np.zeros(shape)
        elif leaf in ("wo", "w2"):
            arr = rng.standard_normal(shape) * res_std
        else:  # emb, p, wq, wk, wv, w1
            arr = rng.standard_normal(shape) * std
        params[name] = arr.astype(cfg.np_dtype)
    return params


def zero_grads(cfg: ModelConfig) -> ModelParams:
    return {name: np.zeros(shape, dtype=cfg.np_dtype) for name, shape in param_shapes(cfg).items()}


def param_count(params: ModelParams) -> int:
    return sum(int(a.size) for a in params.values())


# ---------------------------------------------------------------------------
# Rotary position encoding


_rope_cache: dict[tuple[int, int, str], tuple[np.ndarray, np.ndarray]] = {}


def rope_tables(n_pos: int, d_head: int, precision: str) -> tuple[np.ndarray, np.ndarray]:
    """(cos, sin) tables of shape (n_pos, d_head/2).

    High precision computes angles in float64 and keeps float64 tables.
    Low precision is test-only: positions, inverse frequencies, and their
    product are all rounded to float16, which collapses nearby positions
    once pos exceeds the float16 integer range and is exactly the failure
    the 16-bit positional experiment exhibits.
    """
    key = (n_pos, d_head, precision)
    hit = _rope_cache.get(key)
    if hit is not None:
        return hit
    half = d_head // 2
    exponents = -2.0 * np.arange(half, dtype=np.float64) / d_head
    inv_freq = ROPE_BASE**exponents
    if precision == "high":
        angles = np.arange(n_pos, dtype=np.float64)[:, None] * inv_freq[None, :]
        cos = np.cos(angles)
        sin = np.sin(angles)
    else:
        pos16 = np.arange(n_pos, dtype=np.float64).astype(np.float16)
        inv16 = inv_freq.astype(np.float16)
        angles16 = pos16[:, None] * inv16[None, :]  # float16 product
        cos = np.cos(angles16.astype(np.float32)).astype(np.float16)
        sin = np.sin(angles16.astype(np.float32)).astype(np.float16)
    _rope_cache[key] = (cos, sin)
    return cos, sin


def _rope_apply(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate dimension pairs (2i, 2i+1); cos/sin broadcast along leading axes."""
    x0 = x[..., 0::2]
    x1 = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x0 * cos - x1 * sin
    out[..., 1::2] = x0 * sin + x1 * cos
    return out


def _rope_apply_bwd(dy: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    d0 = dy[..., 0::2]
    d1 = dy[..., 1::2]
    out = np.empty_like(dy)
    out[..., 0::2] = d0 * cos + d1 * sin
    out[..., 1::2] = -d0 * sin + d1 * cos
    return out


def rope_rotate(
    vectors: np.ndarray, positions: np.ndarray, precision: str = "high"
) -> np.ndarray:
    """Rotate vectors (..., N, d_head) by their positions (length N)."""
    vectors = np.asarray(vectors)
    positions = np.asarray(positions, dtype=np.int64)
    if vectors.shape[-1] % 2 != 0:
        raise ValueError("head dimension must be even")
    if positions.ndim != 1 or vectors.shape[-2] != positions.shape[0]:
        raise ValueError("positions must be 1-D and match the vector count")
    n_pos = int(positions.max()) + 1 if positions.size else 1
    cos, sin = rope_tables(n_pos, vectors.shape[-1], precision)
    dt = vectors.dtype if vectors.dtype in (np.float32, np.float64) else np.float64
    return _rope_apply(vectors, cos[positions].astype(dt), sin[positions].astype(dt))


def _gathered_tables(
    cfg: ModelConfig, positions: np.ndarray, expand_heads: bool
) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin for given positions, cast to the model dtype.

    positions (T,) gives tables (T, hd/2); positions (B, Tq) gives
    (B, 1, Tq, hd/2) ready to broadcast over heads.
    """
    cos, sin = rope_tables(cfg.max_seq, cfg.head_dim, cfg.pos_precision)
    cos_g = cos[positions].astype(cfg.np_dtype)
    sin_g = sin[positions].astype(cfg.np_dtype)
    if expand_heads:
        cos_g = cos_g[:, None, :, :]
        sin_g = sin_g[:, None, :, :]
    return cos_g, sin_g


# ---------------------------------------------------------------------------
# Attention core (shared by all block types)


def _softmax_masked(scores: np.ndarray, mask_kind: str, mask_arg) -> np.ndarray:
    if mask_kind == "keys":
        return kernels.softmax_key_masked(scores, mask_arg)
    return kernels.softmax_causal(scores, 0)


def _attn_context(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    scale: float,
    mask_kind: str,
    mask_arg,
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Masked scaled-dot-product attention over flat (N, T, hd) tensors.

    Returns (context, probs); probs is None when the probability tensor
    exceeded the cache budget and was processed in slices along N.
    """
    n, tq, _ = q.shape
    tk = k.shape[1]
    need = n * tq * tk * q.itemsize
    if need <= _PROBS_CACHE_BYTES:
        scores = np.matmul(q, k.transpose(0, 2, 1))
        scores *= q.dtype.type(scale)
        probs = _softmax_masked(scores, mask_kind, mask_arg)
        return np.matmul(probs, v), probs
    ctx = np.empty_like(q)
    step = max(1, _PROBS_CACHE_BYTES // (tq * tk * q.itemsize))
    for s in range(0, n, step):
        e = min(n, s + step)
        scores = np.matmul(q[s:e], k[s:e].transpose(0, 2, 1))
        scores *= q.dtype.type(scale)
        arg = mask_arg[s:e] if mask_kind == "keys" else mask_arg
        probs = _softmax_masked(scores, mask_kind, arg)
        ctx[s:e] = np.matmul(probs, v[s:e])
    return ctx, None


def _attn_backward(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    scale: float,
    mask_kind: str,
    mask_arg,
    probs: Optional[np.ndarray],
    dctx: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if probs is not None:
        dprobs = np.matmul(dctx, v.transpose(0, 2, 1))
        dv = np.matmul(probs.transpose(0, 2, 1), dctx)
        dscores = kernels.softmax_bwd(probs, dprobs)
        dscores *= q.dtype.type(scale)
        dq = np.matmul(dscores, k)
        dk = np.matmul(dscores.transpose(0, 2, 1), q)
        return dq, dk, dv
    n, tq, _ = q.shape
    tk = k.shape[1]
    dq = np.empty_like(q)
    dk = np.empty_like(k)
    dv = np.empty_like(v)
    step = max(1, _PROBS_CACHE_BYTES // (tq * tk * q.itemsize))
    for s in range(0, n, step):
        e = min(n, s + step)
        scores = np.matmul(q[s:e], k[s:e].transpose(0, 2, 1))
        scores *= q.dtype.type(scale)
        arg = mask_arg[s:e] if mask_kind == "keys" else mask_arg
        p = _softmax_masked(scores, mask_kind, arg)
        dprobs = np.matmul(dctx[s:e], v[s:e].transpose(0, 2, 1))
        dv[s:e] = np.matmul(p.transpose(0, 2, 1), dctx[s:e])
        dscores = kernels.softmax_bwd(p, dprobs)
        dscores *= q.dtype.type(scale)
        dq[s:e] = np.matmul(dscores, k[s:e])
        dk[s:e] = np.matmul(dscores.transpose(0, 2, 1), q[s:e])
    return dq, dk, dv


def _split_heads(x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    b, t, _ = x.shape
    return x.reshape(b, t, cfg.heads, cfg.head_dim).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    b, _, t, _ = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, t, cfg.d)


def _flat(x: np.ndarray) -> np.ndarray:
    b, h, t, hd = x.shape
    return np.ascontiguousarray(x).reshape(b * h, t, hd)


def _unflat(x: np.ndarray, b: int, h: int) -> np.ndarray:
    n, t, hd = x.shape
    return x.reshape(b, h, t, hd)


def _ln_recompute(x: np.ndarray, g: np.ndarray, b: np.ndarray, mean: np.ndarray, rstd: np.ndarray) -> np.ndarray:
    return (x - mean[..., None]) * rstd[..., None] * g + b


# ---------------------------------------------------------------------------
# Blocks


def _mlp_fwd(params: ModelParams, pre: str, x1: np.ndarray):
    xn2, mu2, rstd2 = kernels.layernorm_fwd(x1, params[pre + "ln2.g"], params[pre + "ln2.b"], LN_EPS)
    h1 = xn2 @ params[pre + "w1"] + params[pre + "b1"]
    y = x1 + kernels.gelu_fwd(h1) @ params[pre + "w2"] + params[pre + "b2"]
    return y, (x1, mu2, rstd2, h1)


def _mlp_bwd(params: ModelParams, pre: str, cache, dy: np.ndarray, grads: ModelParams) -> np.ndarray:
    x1, mu2, rstd2, h1 = cache
    d = x1.shape[-1]
    xn2 = _ln_recompute(x1, params[pre + "ln2.g"], params[pre + "ln2.b"], mu2, rstd2)
    gact = kernels.gelu_fwd(h1)
    dm2 = dy.reshape(-1, d)
    grads[pre + "w2"] += gact.reshape(-1, 4 * d).T @ dm2
    grads[pre + "b2"] += dm2.sum(axis=0)
    dgact = dy @ params[pre + "w2"].T
    dh1 = kernels.gelu_bwd(h1, dgact)
    grads[pre + "w1"] += xn2.reshape(-1, d).T @ dh1.reshape(-1, 4 * d)
    grads[pre + "b1"] += dh1.reshape(-1, 4 * d).sum(axis=0)
    dxn2 = dh1 @ params[pre + "w1"].T
    dx1, dg2, db2 = kernels.layernorm_bwd(dxn2, x1, params[pre + "ln2.g"], mu2, rstd2)
    grads[pre + "ln2.g"] += dg2
    grads[pre + "ln2.b"] += db2
    return dy + dx1


def _self_block_fwd(
    params: ModelParams,
    pre: str,
    x: np.ndarray,
    rope_cs: tuple[np.ndarray, np.ndarray],
    mask_kind: str,
    mask_arg,
    cfg: ModelConfig,
):
    xn, mu1, rstd1 = kernels.layernorm_fwd(x, params[pre + "ln1.g"], params[pre + "ln1.b"], LN_EPS)
    cos, sin = rope_cs
    qh = _rope_apply(_split_heads(xn @ params[pre + "wq"] + params[pre + "bq"], cfg), cos, sin)
    kh = _rope_apply(_split_heads(xn @ params[pre + "wk"] + params[pre + "bk"], cfg), cos, sin)
    vh = _split_heads(xn @ params[pre + "wv"] + params[pre + "bv"], cfg)
    b = x.shape[0]
    qf, kf, vf = _flat(qh), _flat(kh), _flat(vh)
    scale = 1.0 / math.sqrt(cfg.head_dim)
    ctx, probs = _attn_context(qf, kf, vf, scale, mask_kind, mask_arg)
    cm = _merge_heads(_unflat(ctx, b, cfg.heads), cfg)
    x1 = x + cm @ params[pre + "wo"] + params[pre + "bo"]
    y, mlp_cache = _mlp_fwd(params, pre, x1)
    attn_cache = (x, mu1, rstd1, qf, kf, vf, probs, cm, rope_cs, mask_kind, mask_arg)
    return y, (attn_cache, mlp_cache)


def _self_block_bwd(
    params: ModelParams, pre: str, cache, dy: np.ndarray, grads: ModelParams, cfg: ModelConfig
) -> np.ndarray:
    attn_cache, mlp_cache = cache
    x, mu1, rstd1, qf, kf, vf, probs, cm, rope_cs, mask_kind, mask_arg = attn_cache
    dx1 = _mlp_bwd(params, pre, mlp_cache, dy, grads)
    b, t, d = x.shape
    grads[pre + "wo"] += cm.reshape(-1, d).T @ dx1.reshape(-1, d)
    grads[pre + "bo"] += dx1.reshape(-1, d).sum(axis=0)
    dcm = dx1 @ params[pre + "wo"].T
    dctx = _flat(_split_heads(dcm, cfg))
    scale = 1.0 / math.sqrt(cfg.head_dim)
    dqf, dkf, dvf = _attn_backward(qf, kf, vf, scale, mask_kind, mask_arg, probs, dctx)
    cos, sin = rope_cs
    dq = _merge_heads(_rope_apply_bwd(_unflat(dqf, b, cfg.heads), cos, sin), cfg)
    dk = _merge_heads(_rope_apply_bwd(_unflat(dkf, b, cfg.heads), cos, sin), cfg)
    dv = _merge_heads(_unflat(dvf, b, cfg.heads), cfg)
    xn = _ln_recompute(x, params[pre + "ln1.g"], params[pre + "ln1.b"], mu1, rstd1)
    xn2 = xn.reshape(-1, d)
    for w, bias, dval in (("wq", "bq", dq), ("wk", "bk", dk), ("wv", "bv", dv)):
        grads[pre + w] += xn2.T @ dval.reshape(-1, d)
        grads[pre + bias] += dval.reshape(-1, d).sum(axis=0)
    dxn = dq @ params[pre + "wq"].T + dk @ params[pre + "wk"].T + dv @ params[pre + "wv"].T
    dxln, dg1, db1 = kernels.layernorm_bwd(dxn, x, params[pre + "ln1.g"], mu1, rstd1)
    grads[pre + "ln1.g"] += dg1
    grads[pre + "ln1.b"] += db1
    return dx1 + dxln


def _cross_block_fwd(
    params: ModelParams,
    pre: str,
    u: np.ndarray,
    enc_h: np.ndarray,
    kmask: np.ndarray,
    rope_q: tuple[np.ndarray, np.ndarray],
    rope_k: tuple[np.ndarray, np.ndarray],
    cfg: ModelConfig,
):
    un, mu1, rstd1 = kernels.layernorm_fwd(u, params[pre + "ln1.g"], params[pre + "ln1.b"], LN_EPS)
    qh = _rope_apply(_split_heads(un @ params[pre + "wq"] + params[pre + "bq"], cfg), *rope_q)
    kh = _rope_apply(_split_heads(enc_h @ params[pre + "wk"] + params[pre + "bk"], cfg), *rope_k)
    vh = _split_heads(enc_h @ params[pre + "wv"] + params[pre + "bv"], cfg)
    b = u.shape[0]
    qf, kf, vf = _flat(qh), _flat(kh), _flat(vh)
    scale = 1.0 / math.sqrt(cfg.head_dim)
    ctx, probs = _attn_context(qf, kf, vf, scale, "keys", kmask)
    cm = _merge_heads(_unflat(ctx, b, cfg.heads), cfg)
    u1 = u + cm @ params[pre + "wo"] + params[pre + "bo"]
    y, mlp_cache = _mlp_fwd(params, pre, u1)
    attn_cache = (u, mu1, rstd1, qf, kf, vf, probs, cm, rope_q, rope_k, kmask)
    return y, (attn_cache, mlp_cache)


def _cross_block_bwd(
    params: ModelParams,
    pre: str,
    cache,
    dy: np.ndarray,
    enc_h: np.ndarray,
    grads: ModelParams,
    cfg: ModelConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (du, denc_h contribution from this block's key/value paths)."""
    attn_cache, mlp_cache = cache
    u, mu1, rstd1, qf, kf, vf, probs, cm, rope_q, rope_k, kmask = attn_cache
    du1 = _mlp_bwd(params, pre, mlp_cache, dy, grads)
    b, tq, d = u.shape
    grads[pre + "wo"] += cm.reshape(-1, d).T @ du1.reshape(-1, d)
    grads[pre + "bo"] += du1.reshape(-1, d).sum(axis=0)
    dcm = du1 @ params[pre + "wo"].T
    dctx = _flat(_split_heads(dcm, cfg))
    scale = 1.0 / math.sqrt(cfg.head_dim)
    dqf, dkf, dvf = _attn_backward(qf, kf, vf, scale, "keys", kmask, probs, dctx)
    dq = _merge_heads(_rope_apply_bwd(_unflat(dqf, b, cfg.heads), *rope_q), cfg)
    dk = _merge_heads(_rope_apply_bwd(_unflat(dkf, b, cfg.heads), *rope_k), cfg)
    dv = _merge_heads(_unflat(dvf, b, cfg.heads), cfg)
    un = _ln_recompute(u, params[pre + "ln1.g"], params[pre + "ln1.b"], mu1, rstd1)
    grads[pre + "wq"] += un.reshape(-1, d).T @ dq.reshape(-1, d)
    grads[pre + "bq"] += dq.reshape(-1, d).sum(axis=0)
    ench2 = enc_h.reshape(-1, d)
    grads[pre + "wk"] += ench2.T @ dk.reshape(-1, d)
    grads[pre + "bk"] += dk.reshape(-1, d).sum(axis=0)
    grads[pre + "wv"] += ench2.T @ dv.reshape(-1, d)
    grads[pre + "bv"] += dv.reshape(-1, d).sum(axis=0)
    denc = dk @ params[pre + "wk"].T + dv @ params[pre + "wv"].T
    dun = dq @ params[pre + "wq"].T
    duln, dg1, db1 = kernels.layernorm_bwd(dun, u, params[pre + "ln1.g"], mu1, rstd1)
    grads[pre + "ln1.g"] += dg1
    grads[pre + "ln1.b"] += db1
    return du1 + duln, denc


# ---------------------------------------------------------------------------
# Stacks


def _as_batch(ids) -> tuple[np.ndarray, bool]:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def _check_len(cfg: ModelConfig, t: int) -> None:
    if t > cfg.max_seq:
        raise SequenceTooLong(f"sequence length {t} exceeds max_seq {cfg.max_seq}")


def _encoder_fwd(params: ModelParams, cfg: ModelConfig, ids: np.ndarray, m_enc: np.ndarray):
    b, t = ids.shape
    _check_len(cfg, t)
    x = params["emb"][ids]
    rope_cs = _gathered_tables(cfg, np.arange(t), expand_heads=False)
    kmask = np.repeat(m_enc.astype(np.uint8), cfg.heads, axis=0)
    n_half = cfg.depth // 2
    caches = []
    for i in range(n_half):
        x, cache = _self_block_fwd(params, f"enc.{i}.", x, rope_cs, "keys", kmask, cfg)
        caches.append(cache)
    h, muf, rstdf = kernels.layernorm_fwd(x, params["enc_lnf.g"], params["enc_lnf.b"], LN_EPS)
    return h, (ids, x, muf, rstdf, caches)


def _encoder_bwd(params: ModelParams, cfg: ModelConfig, cache, dh: np.ndarray, grads: ModelParams) -> None:
    ids, x_last, muf, rstdf, caches = cache
    dx, dgf, dbf = kernels.layernorm_bwd(dh, x_last, params["enc_lnf.g"], muf, rstdf)
    grads["enc_lnf.g"] += dgf
    grads["enc_lnf.b"] += dbf
    for i in reversed(range(cfg.depth // 2)):
        dx = _self_block_bwd(params, f"enc.{i}.", caches[i], dx, grads, cfg)
    kernels.embedding_grad(ids.ravel(), dx.reshape(-1, cfg.d), grads["emb"])


def _decoder_fwd(
    params: ModelParams,
    cfg: ModelConfig,
    enc_h: np.ndarray,
    m_enc: np.ndarray,
    q_pos: np.ndarray,
):
    b, t, _ = enc_h.shape
    tq = q_pos.shape[1]
    _check_len(cfg, t)
    if q_pos.size and int(q_pos.max()) >= cfg.max_seq:
        raise SequenceTooLong(f"query position {int(q_pos.max())} exceeds max_seq {cfg.max_seq}")
    u = np.broadcast_to(params["p"], (b, tq, cfg.d)).astype(cfg.np_dtype, copy=True)
    rope_q = _gathered_tables(cfg, q_pos, expand_heads=True)
    rope_k = _gathered_tables(cfg, np.arange(t), expand_heads=False)
    kmask = np.repeat(m_enc.astype(np.uint8), cfg.heads, axis=0)
    n_half = cfg.depth // 2
    caches = []
    for i in range(n_half):
        u, cache = _cross_block_fwd(params, f"dec.{i}.", u, enc_h, kmask, rope_q, rope_k, cfg)
        caches.append(cache)
    out, muf, rstdf = kernels.layernorm_fwd(u, params["dec_lnf.g"], params["dec_lnf.b"], LN_EPS)
    return out, (u, muf, rstdf, caches)


def _decoder_bwd(
    params: ModelParams,
    cfg: ModelConfig,
    cache,
    enc_h: np.ndarray,
    dout: np.ndarray,
    grads: ModelParams,
) -> np.ndarray:
    """Returns the accumulated gradient w.r.t. the encoder states."""
    u_last, muf, rstdf, caches = cache
    du, dgf, dbf = kernels.layernorm_bwd(dout, u_last, params["dec_lnf.g"], muf, rstdf)
    grads["dec_lnf.g"] += dgf
    grads["dec_lnf.b"] += dbf
    denc = np.zeros_like(enc_h)
    for i in reversed(range(cfg.depth // 2)):
        du, denc_i = _cross_block_bwd(params, f"dec.{i}.", caches[i], du, enc_h, grads, cfg)
        denc += denc_i
    grads["p"] += du.reshape(-1, cfg.d).sum(axis=0)
    return denc


def encoder_forward(params: ModelParams, cfg: ModelConfig, ids, m_enc) -> np.ndarray:
    """Final encoder hidden states (post-norm) for visible-key attention.

    Positions where m_enc is false still receive hidden states but are
    never attended to by anyone.
    """
    ids_b, squeeze = _as_batch(ids)
    m = np.asarray(m_enc, dtype=bool)
    if m.ndim == 1:
        m = m[None, :]
    h, _ = _encoder_fwd(params, cfg, ids_b, m)
    return h[0] if squeeze else h


def decoder_forward(params: ModelParams, cfg: ModelConfig, enc_states, m_enc, positions) -> np.ndarray:
    """Decode copies of p at the given positions against encoder states."""
    enc_h = np.asarray(enc_states)
    squeeze = enc_h.ndim == 2
    if squeeze:
        enc_h = enc_h[None, ...]
    m = np.asarray(m_enc, dtype=bool)
    if m.ndim == 1:
        m = m[None, :]
    q_pos = np.asarray(positions, dtype=np.int64)
    if q_pos.ndim == 1:
        q_pos = q_pos[None, :]
    if q_pos.shape[1] == 0:
        empty = np.zeros((q_pos.shape[0], 0, cfg.d), dtype=cfg.np_dtype)
        return empty[0] if squeeze else empty
    out, _ = _decoder_fwd(params, cfg, enc_h, m, q_pos)
    return out[0] if squeeze else out


def head_logits(params: ModelParams, hidden) -> np.ndarray:
    """Tied head: logits = hidden @ Emb^T (softmax left to the consumer)."""
    return np.asarray(hidden) @ params["emb"].T


def enc_dec_forward(
    params: ModelParams,
    cfg: ModelConfig,
    ids: np.ndarray,
    m_enc: np.ndarray,
    q_pos: np.ndarray,
):
    """Full pipeline: logits (B, Tq, v) at the query positions, plus cache."""
    enc_h, enc_cache = _encoder_fwd(params, cfg, ids, m_enc)
    dec_out, dec_cache = _decoder_fwd(params, cfg, enc_h, m_enc, q_pos)
    logits = dec_out @ params["emb"].T
    return logits, (enc_h, enc_cache, dec_out, dec_cache)


def enc_dec_backward(
    params: ModelParams, cfg: ModelConfig, cache, dlogits: np.ndarray
) -> ModelParams:
    enc_h, enc_cache, dec_out, dec_cache = cache
    grads = zero_grads(cfg)
    d = cfg.d
    grads["emb"] += dlogits.reshape(-1, cfg.v).T @ dec_out.reshape(-1, d)
    dout = dlogits @ params["emb"]
    denc = _decoder_bwd(params, cfg, dec_cache, enc_h, dout, grads)
    _encoder_bwd(params, cfg, enc_cache, denc, grads)
    return grads


def causal_forward(params: ModelParams, cfg: ModelConfig, ids, want_cache: bool = False):
    """Causal logits (..., T, v): position t sees ids up to and including t."""
    if cfg.arch != "dec_only":
        raise ValueError("causal_forward requires arch=dec_only")
    ids_b, squeeze = _as_batch(ids)
    b, t = ids_b.shape
    _check_len(cfg, t)
    x = params["emb"][ids_b]
    rope_cs = _gathered_tables(cfg, np.arange(t), expand_heads=False)
    caches = []
    for i in range(cfg.depth):
        x, cache = _self_block_fwd(params, f"blk.{i}.", x, rope_cs, "causal", None, cfg)
        caches.append(cache)
    h, muf, rstdf = kernels.layernorm_fwd(x, params["lnf.g"], params["lnf.b"], LN_EPS)
    logits = h @ params["emb"].T
    if want_cache:
        return logits, (ids_b, x, muf, rstdf, h, caches)
    return logits[0] if squeeze else logits


def dec_only_backward(params: ModelParams, cfg: ModelConfig, cache, dlogits: np.ndarray) -> ModelParams:
    ids, x_last, muf, rstdf, h, caches = cache
    grads = zero_grads(cfg)
    grads["emb"] += dlogits.reshape(-1, cfg.v).T @ h.reshape(-1, cfg.d)
    dh = dlogits @ params["emb"]
    dx, dgf, dbf = kernels.layernorm_bwd(dh, x_last, params["lnf.g"], muf, rstdf)
    grads["lnf.g"] += dgf
    grads["lnf.b"] += dbf
    for i in reversed(range(cfg.depth)):
        dx = _self_block_bwd(params, f"blk.{i}.", caches[i], dx, grads, cfg)
    kernels.embedding_grad(ids.ravel(), dx.reshape(-1, cfg.d), grads["emb"])
    return grads
