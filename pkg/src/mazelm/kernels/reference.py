"""Pure-numpy kernel implementations.

This is the fallback backend and the semantic reference for the compiled
extension: both expose the same functions with identical shapes, dtype
preservation (float32 or float64), and the same zero-row conventions.
Matrix products stay in the caller; these kernels cover the fused
elementwise/reduction hot spots.
"""

from __future__ import annotations

import numpy as np

# GELU tanh approximation constant sqrt(2/pi).
_GELU_C = 0.7978845608028654
_GELU_A = 0.044715


def softmax_key_masked(scores: np.ndarray, kmask: np.ndarray) -> np.ndarray:
    """Row softmax over the last axis, restricted to visible keys.

    scores: (N, Tq, Tk); kmask: (N, Tk) nonzero = visible. Rows with no
    visible key yield an all-zero probability row rather than NaN.
    """
    visible = kmask.astype(bool)[:, None, :]
    neg = np.array(-np.inf, dtype=scores.dtype)
    masked = np.where(visible, scores, neg)
    m = np.max(masked, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, scores.dtype.type(0))
    e = np.exp(masked - m)
    s = np.sum(e, axis=-1, keepdims=True)
    return e / np.where(s > 0, s, scores.dtype.type(1))


def softmax_causal(scores: np.ndarray, offset: int) -> np.ndarray:
    """Causal row softmax: query i sees keys j with j <= offset + i."""
    n, tq, tk = scores.shape
    visible = np.arange(tk)[None, :] <= (offset + np.arange(tq))[:, None]
    neg = np.array(-np.inf, dtype=scores.dtype)
    masked = np.where(visible[None, :, :], scores, neg)
    m = np.max(masked, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, scores.dtype.type(0))
    e = np.exp(masked - m)
    s = np.sum(e, axis=-1, keepdims=True)
    return e / np.where(s > 0, s, scores.dtype.type(1))


def softmax_lastdim(x: np.ndarray) -> np.ndarray:
    """Plain softmax over the last axis (used for logits)."""
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_bwd(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Gradient through any of the softmax variants above.

    Zero rows (fully masked) propagate zero gradient, and masked entries
    have probs == 0 so their score gradient vanishes as required.
    """
    inner = np.sum(probs * dprobs, axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def layernorm_fwd(
    x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row layer norm: returns (y, mean, rstd) with mean/rstd cached for bwd."""
    mean = np.mean(x, axis=-1)
    var = np.mean((x - mean[..., None]) ** 2, axis=-1)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    y = (x - mean[..., None]) * rstd[..., None] * g + b
    return y.astype(x.dtype, copy=False), mean, rstd


def layernorm_bwd(
    dy: np.ndarray,
    x: np.ndarray,
    g: np.ndarray,
    mean: np.ndarray,
    rstd: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat = (x - mean[..., None]) * rstd[..., None]
    flat_dy = dy.reshape(-1, dy.shape[-1])
    flat_xhat = xhat.reshape(-1, dy.shape[-1])
    dg = np.sum(flat_dy * flat_xhat, axis=0)
    db = np.sum(flat_dy, axis=0)
    dxhat = dy * g
    m1 = np.mean(dxhat, axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = rstd[..., None] * (dxhat - m1 - xhat * m2)
    return dx.astype(x.dtype, copy=False), dg.astype(g.dtype, copy=False), db.astype(g.dtype, copy=False)


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    c = x.dtype.type(_GELU_C)
    a = x.dtype.type(_GELU_A)
    half = x.dtype.type(0.5)
    return half * x * (1.0 + np.tanh(c * (x + a * x * x * x))).astype(x.dtype, copy=False)


def gelu_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    c = x.dtype.type(_GELU_C)
    a = x.dtype.type(_GELU_A)
    u = c * (x + a * x * x * x)
    t = np.tanh(u)
    du = c * (1.0 + 3.0 * a * x * x)
    dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
    return (dy * dydx).astype(x.dtype, copy=False)


def adamw_update(
    p: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
) -> None:
    """One in-place decoupled-decay adaptive-moment update.

    Decay is applied before the moment step (multiplicative, scaled by lr),
    so lr == 0 leaves parameters untouched regardless of decay.
    """
    dt = p.dtype.type
    if weight_decay != 0.0:
        p *= dt(1.0 - lr * weight_decay)
    m *= dt(beta1)
    m += dt(1.0 - beta1) * grad
    v *= dt(beta2)
    v += dt(1.0 - beta2) * grad * grad
    mhat = m / dt(1.0 - beta1**step)
    vhat = v / dt(1.0 - beta2**step)
    p -= dt(lr) * mhat / (np.sqrt(vhat) + dt(eps))


def embedding_grad(ids: np.ndarray, dout: np.ndarray, demb: np.ndarray) -> None:
    """Scatter-accumulate token gradients: demb[ids[i]] += dout[i]."""
    np.add.at(demb, ids, dout)
