"""Decoupled-weight-decay Adam over named parameter dicts.

Decay multiplies parameters by (1 - lr * weight_decay) before the moment
update, so lr = 0 leaves parameters untouched regardless of decay and the
moments never see the decay term.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .model import ModelParams


class AdamW:
    def __init__(
        self,
        params: ModelParams,
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        self.t += 1
        for name, p in params.items():
            kernels.adamw_update(
                p,
                grads[name],
                self.m[name],
                self.v[name],
                step=self.t,
                lr=self.lr,
                beta1=self.beta1,
                beta2=self.beta2,
                eps=self.eps,
                weight_decay=self.weight_decay,
            )


def global_grad_norm(grads: ModelParams) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)


def clip_gradients(grads: ModelParams, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm.

    max_norm <= 0 disables clipping. Returns the pre-clip norm.
    """
    norm = global_grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
