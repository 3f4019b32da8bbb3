"""Kernel backend selection.

Two interchangeable backends provide the fused numeric kernels: `_core`
(compiled extension) and `reference` (pure numpy). Selection happens once at
import time; set MAZELM_KERNELS=native or MAZELM_KERNELS=reference to force
one, the default "auto" prefers the extension when it imported cleanly.
The active choice is exposed as BACKEND.
"""

from __future__ import annotations

import os

_requested = os.environ.get("MAZELM_KERNELS", "auto")
if _requested not in ("auto", "native", "reference"):
    raise ValueError(
        f"MAZELM_KERNELS must be auto, native, or reference, got {_requested!r}"
    )

if _requested == "reference":
    from . import reference as _impl

    BACKEND = "reference"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "native"
    except ImportError:
        if _requested == "native":
            raise
        from . import reference as _impl

        BACKEND = "reference"

softmax_key_masked = _impl.softmax_key_masked
softmax_causal = _impl.softmax_causal
softmax_lastdim = _impl.softmax_lastdim
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
adamw_update = _impl.adamw_update
embedding_grad = _impl.embedding_grad

__all__ = [
    "BACKEND",
    "softmax_key_masked",
    "softmax_causal",
    "softmax_lastdim",
    "softmax_bwd",
    "layernorm_fwd",
    "layernorm_bwd",
    "gelu_fwd",
    "gelu_bwd",
    "adamw_update",
    "embedding_grad",
]
