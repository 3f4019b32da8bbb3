"""Timing comparison between the compiled and reference kernel backends.

Run as `python -m mazelm.benchmark`.  Per-kernel timings use each backend
module directly; the end-to-end row times one full training step (forward,
backward, optimizer update) with the package-level kernel bindings swapped
live, since the model resolves kernels.<name> at call time.
"""

from __future__ import annotations

import argparse
import time
from contextlib import contextmanager
from typing import Callable, Optional

import numpy as np

from . import kernels
from .kernels import reference

try:
    from .kernels import _core  # type: ignore[attr-defined]
except ImportError:
    _core = None

_KERNEL_NAMES = [
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


def _cases(scale: float) -> dict[str, Callable[[object], object]]:
    """One closure per kernel; argument arrays are shared across backends."""
    rng = np.random.default_rng(7)
    n = max(4, int(32 * scale))
    t = max(8, int(128 * scale))
    d = max(8, int(64 * scale))
    rows = n * t

    scores = rng.normal(size=(n, t, t)).astype(np.float32)
    kmask = (rng.random((n, t)) > 0.4).astype(np.uint8)
    logits = rng.normal(size=(rows, 2 * d)).astype(np.float32)
    probs = reference.softmax_lastdim(logits)
    dprobs = rng.normal(size=probs.shape).astype(np.float32)
    x = rng.normal(size=(rows, d)).astype(np.float32)
    g = rng.normal(size=d).astype(np.float32)
    b = rng.normal(size=d).astype(np.float32)
    dy = rng.normal(size=(rows, d)).astype(np.float32)
    _, mean, rstd = reference.layernorm_fwd(x, g, b, 1e-5)
    acts = rng.normal(size=(rows, 4 * d)).astype(np.float32)
    dacts = rng.normal(size=acts.shape).astype(np.float32)
    p = rng.normal(size=rows * d).astype(np.float32)
    grad = rng.normal(size=rows * d).astype(np.float32)
    m1 = np.zeros_like(p)
    v1 = np.zeros_like(p)
    ids = rng.integers(0, 97, size=rows).astype(np.int64)
    dout = rng.normal(size=(rows, d)).astype(np.float32)
    demb = np.zeros((97, d), dtype=np.float32)

    return {
        "softmax_key_masked": lambda k: k.softmax_key_masked(scores, kmask),
        "softmax_causal": lambda k: k.softmax_causal(scores, 0),
        "softmax_lastdim": lambda k: k.softmax_lastdim(logits),
        "softmax_bwd": lambda k: k.softmax_bwd(probs, dprobs),
        "layernorm_fwd": lambda k: k.layernorm_fwd(x, g, b, 1e-5),
        "layernorm_bwd": lambda k: k.layernorm_bwd(dy, x, g, mean, rstd),
        "gelu_fwd": lambda k: k.gelu_fwd(acts),
        "gelu_bwd": lambda k: k.gelu_bwd(acts, dacts),
        "adamw_update": lambda k: k.adamw_update(
            p, grad, m1, v1, 1, 1e-3, 0.9, 0.999, 1e-8, 0.01
        ),
        "embedding_grad": lambda k: k.embedding_grad(ids, dout, demb),
    }


def _time_call(fn: Callable[[], object], reps: int) -> float:
    fn()  # warmup
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


@contextmanager
def _bound_backend(impl):
    """Temporarily rebind the package-level kernel functions."""
    saved = {name: getattr(kernels, name) for name in _KERNEL_NAMES}
    try:
        for name in _KERNEL_NAMES:
            setattr(kernels, name, getattr(impl, name))
        yield
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def _train_step_closure(scale: float) -> Callable[[], object]:
    from .corpus import build_corpus
    from .model import ModelConfig, init_params
    from .objectives import mlmu_loss, sample_batch_masks
    from .optim import AdamW

    L = 4 if scale < 1.0 else 6
    records, vocab = build_corpus("dfs", L, 8, seed=13)
    d = max(16, int(64 * scale))
    cfg = ModelConfig(
        v=len(vocab), d=d, depth=4, heads=2,
        max_seq=max(r.seq_len for r in records) + 2,
    )
    params = init_params(cfg, seed=1)
    opt = AdamW(params, lr=1e-3)
    rng = np.random.default_rng(3)
    masks = sample_batch_masks(records, rng)

    def step():
        loss, grads = mlmu_loss(params, cfg, records, masks)
        opt.step(params, grads)
        return loss

    return step


def run(reps: int = 5, scale: float = 1.0) -> list[dict]:
    """Benchmark every kernel plus one training step; returns result rows."""
    cases = _cases(scale)
    rows = []
    for name, call in cases.items():
        ref_ms = _time_call(lambda: call(reference), reps)
        nat_ms = _time_call(lambda: call(_core), reps) if _core is not None else None
        rows.append(_row(name, ref_ms, nat_ms))

    step = _train_step_closure(scale)
    with _bound_backend(reference):
        ref_ms = _time_call(step, reps)
    nat_ms = None
    if _core is not None:
        with _bound_backend(_core):
            nat_ms = _time_call(step, reps)
    rows.append(_row("end_to_end_step", ref_ms, nat_ms))
    return rows


def _row(name: str, ref_ms: float, nat_ms: Optional[float]) -> dict:
    return {
        "kernel": name,
        "reference_ms": round(ref_ms, 4),
        "native_ms": None if nat_ms is None else round(nat_ms, 4),
        "speedup": None if nat_ms is None else round(ref_ms / nat_ms, 2),
    }


def main(argv: Optional[list[str]] = None) -> int:
    ap = argparse.ArgumentParser(description="compare kernel backends")
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="problem-size multiplier")
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled backend unavailable; timing reference only")
    rows = run(reps=args.reps, scale=args.scale)
    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':<{width}}  {'reference':>10}  {'native':>10}  {'speedup':>7}")
    for r in rows:
        nat = "-" if r["native_ms"] is None else f"{r['native_ms']:.3f}ms"
        spd = "-" if r["speedup"] is None else f"{r['speedup']:.2f}x"
        print(f"{r['kernel']:<{width}}  {r['reference_ms']:>8.3f}ms  {nat:>10}  {spd:>7}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
