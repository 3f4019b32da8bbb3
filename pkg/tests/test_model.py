"""Model-level properties: RoPE geometry, visibility, causality, tying,
determinism, and the positional-precision policy."""

from __future__ import annotations

import numpy as np
import pytest

from mazelm.errors import SequenceTooLong
from mazelm.model import (
    ModelConfig,
    causal_forward,
    decoder_forward,
    enc_dec_forward,
    encoder_forward,
    head_logits,
    init_params,
    param_count,
    param_shapes,
    rope_rotate,
    rope_tables,
)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def _cfg(arch: str = "enc_dec", **kw) -> ModelConfig:
    base = dict(v=13, d=16, depth=2, heads=2, max_seq=64)
    base.update(kw)
    return ModelConfig(arch=arch, **base)


# ----------------------------------------------------------------- rope


def test_rope_position_zero_is_identity():
    v = _rng(1).standard_normal((5, 8))
    out = rope_rotate(v, np.zeros(5, dtype=np.int64))
    np.testing.assert_array_equal(out, v)


def test_rope_high_precision_preserves_pair_norms():
    rng = _rng(2)
    n = 4096
    v = np.repeat(rng.standard_normal((1, 16)), n, axis=0)
    out = rope_rotate(v, np.arange(n), "high")
    before = np.linalg.norm(v.reshape(n, -1, 2), axis=-1)
    after = np.linalg.norm(out.reshape(n, -1, 2), axis=-1)
    assert np.abs(after / before - 1.0).max() < 1e-6


def test_rope_shift_invariance_of_dot_products():
    rng = _rng(3)
    q = rng.standard_normal(16)
    k = rng.standard_normal(16)
    base = float(
        (rope_rotate(q[None], np.array([9])) @ rope_rotate(k[None], np.array([31])).T)[0, 0]
    )
    for s in (1, 7, 64):
        shifted = float(
            (rope_rotate(q[None], np.array([9 + s])) @ rope_rotate(k[None], np.array([31 + s])).T)[0, 0]
        )
        assert abs(shifted - base) / max(abs(base), 1e-12) < 1e-5


def test_rope_low_precision_departs_from_true_rotation():
    # fp16 angle tables misplace large positions by whole radians while
    # high precision stays exact; this is the 16-bit positional failure.
    rng = _rng(4)
    n = 4096
    v = np.repeat(rng.standard_normal((1, 16)), n, axis=0)
    hi = rope_rotate(v, np.arange(n), "high")
    lo = rope_rotate(v, np.arange(n), "low")
    dev = np.linalg.norm(hi - lo, axis=-1) / np.linalg.norm(v, axis=-1)
    assert (dev[1024:] > 1e-3).all()


def test_rope_low_precision_collapses_adjacent_large_positions():
    # fp16 cannot represent odd integers above 2048: positions 2048 and
    # 2049 share one angle table row, so their rotations are identical.
    cos, sin = rope_tables(2050, 16, "low")
    assert np.array_equal(cos[2048], cos[2049])
    assert np.array_equal(sin[2048], sin[2049])
    v = _rng(5).standard_normal((1, 16))
    a = rope_rotate(v, np.array([2048]), "low")
    b = rope_rotate(v, np.array([2049]), "low")
    np.testing.assert_array_equal(a, b)
    hi_a = rope_rotate(v, np.array([2048]), "high")
    hi_b = rope_rotate(v, np.array([2049]), "high")
    assert np.abs(hi_a - hi_b).max() > 1e-3


# ------------------------------------------------------------- encoder


def test_encoder_single_visible_position_matches_t1():
    cfg = _cfg()
    params = init_params(cfg, seed=1)
    ids = np.array([4, 7, 9])
    m = np.array([True, False, False])
    full = encoder_forward(params, cfg, ids, m)
    solo = encoder_forward(params, cfg, ids[:1], np.array([True]))
    np.testing.assert_allclose(full[0], solo[0], atol=1e-6)


def test_encoder_masked_token_permutation_leaves_visible_rows():
    cfg = _cfg()
    params = init_params(cfg, seed=2)
    rng = _rng(6)
    for trial in range(5):
        t = int(rng.integers(4, 12))
        ids = rng.integers(2, cfg.v, size=t)
        m = rng.random(t) < 0.5
        if m.all() or not m.any():
            continue
        hidden = np.nonzero(~m)[0]
        swapped = ids.copy()
        swapped[hidden] = rng.permutation(ids[hidden])
        a = encoder_forward(params, cfg, ids, m)
        b = encoder_forward(params, cfg, swapped, m)
        np.testing.assert_array_equal(a[m], b[m])


def test_encoder_rejects_overlong_input():
    cfg = _cfg(max_seq=8)
    params = init_params(cfg, seed=3)
    ids = np.ones(9, dtype=np.int64)
    with pytest.raises(SequenceTooLong):
        encoder_forward(params, cfg, ids, np.ones(9, dtype=bool))


# ------------------------------------------------------------- decoder


def test_decoder_swapping_query_positions_swaps_outputs():
    cfg = _cfg()
    params = init_params(cfg, seed=4)
    ids = np.arange(2, 10)
    m = np.ones(8, dtype=bool)
    enc = encoder_forward(params, cfg, ids, m)
    ab = decoder_forward(params, cfg, enc, m, np.array([2, 5]))
    ba = decoder_forward(params, cfg, enc, m, np.array([5, 2]))
    np.testing.assert_array_equal(ab, ba[::-1])


def test_decoder_empty_query_list_gives_empty_output():
    cfg = _cfg()
    params = init_params(cfg, seed=5)
    ids = np.arange(2, 8)
    m = np.ones(6, dtype=bool)
    enc = encoder_forward(params, cfg, ids, m)
    out = decoder_forward(params, cfg, enc, m, np.zeros(0, dtype=np.int64))
    assert out.shape == (0, cfg.d)


def test_decoder_rejects_position_beyond_max_seq():
    cfg = _cfg(max_seq=8)
    params = init_params(cfg, seed=6)
    ids = np.arange(2, 8)
    m = np.ones(6, dtype=bool)
    enc = encoder_forward(params, cfg, ids, m)
    with pytest.raises(SequenceTooLong):
        decoder_forward(params, cfg, enc, m, np.array([8]))


def test_full_pipeline_deterministic_given_seed():
    cfg = _cfg()
    a = init_params(cfg, seed=99)
    b = init_params(cfg, seed=99)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    ids = np.arange(2, 12)[None, :]
    m = np.ones((1, 10), dtype=bool)
    q = np.array([[3, 6]])
    la, _ = enc_dec_forward(a, cfg, ids, m, q)
    lb, _ = enc_dec_forward(b, cfg, ids, m, q)
    np.testing.assert_array_equal(la, lb)


def test_pipeline_ignores_tokens_hidden_by_random_masks():
    cfg = _cfg()
    params = init_params(cfg, seed=7)
    rng = _rng(8)
    for trial in range(5):
        t = int(rng.integers(6, 14))
        ids = rng.integers(2, cfg.v, size=(1, t))
        m = rng.random((1, t)) < 0.6
        if not m.any() or m.all():
            continue
        q = np.nonzero(~m[0])[0][:2][None, :]
        scrambled = ids.copy()
        hidden = np.nonzero(~m[0])[0]
        scrambled[0, hidden] = rng.integers(2, cfg.v, size=hidden.size)
        la, _ = enc_dec_forward(params, cfg, ids, m, q)
        lb, _ = enc_dec_forward(params, cfg, scrambled, m, q)
        np.testing.assert_array_equal(la, lb)


# ----------------------------------------------------------- tied head


def test_head_logits_zero_hidden_is_uniform():
    cfg = _cfg()
    params = init_params(cfg, seed=9)
    logits = head_logits(params, np.zeros((3, cfg.d), dtype=np.float32))
    assert not logits.any()


def test_head_is_embedding_transpose():
    cfg = _cfg()
    assert "head" not in param_shapes(cfg)
    params = init_params(cfg, seed=10)
    h = _rng(11).standard_normal((4, cfg.d)).astype(np.float32)
    np.testing.assert_array_equal(head_logits(params, h), h @ params["emb"].T)
    # Perturbing embedding row k moves exactly logit column k.
    bumped = {k: v.copy() for k, v in params.items()}
    bumped["emb"][5] += 1.0
    delta = head_logits(bumped, h) - head_logits(params, h)
    assert delta[:, 5].all()
    delta[:, 5] = 0.0
    assert not delta.any()


# ---------------------------------------------------------- causal arch


def test_causal_future_token_cannot_move_earlier_logits():
    cfg = _cfg(arch="dec_only")
    params = init_params(cfg, seed=12)
    rng = _rng(13)
    for trial in range(5):
        t = int(rng.integers(3, 12))
        ids = rng.integers(2, cfg.v, size=t)
        other = ids.copy()
        other[-1] = (other[-1] + 1 - 2) % (cfg.v - 2) + 2
        la = causal_forward(params, cfg, ids)
        lb = causal_forward(params, cfg, other)
        np.testing.assert_array_equal(la[: t - 1], lb[: t - 1])


def test_causal_first_position_matches_t1_run():
    cfg = _cfg(arch="dec_only")
    params = init_params(cfg, seed=14)
    ids = np.array([4, 9, 2, 7])
    full = causal_forward(params, cfg, ids)
    solo = causal_forward(params, cfg, ids[:1])
    # Different sequence lengths hit different BLAS tilings, so the match
    # is to float32 roundoff rather than bitwise.
    np.testing.assert_allclose(full[0], solo[0], atol=1e-6)


def test_causal_rejects_overlong_input():
    cfg = _cfg(arch="dec_only", max_seq=4)
    params = init_params(cfg, seed=15)
    with pytest.raises(SequenceTooLong):
        causal_forward(params, cfg, np.ones(5, dtype=np.int64))


# ------------------------------------------------------- init and sizes


def test_init_same_seed_identical_params():
    cfg = _cfg()
    a = init_params(cfg, seed=21)
    b = init_params(cfg, seed=21)
    assert set(a) == set(b)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    c = init_params(cfg, seed=22)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_p_is_single_d_vector():
    cfg = _cfg(d=32, heads=4)
    params = init_params(cfg, seed=23)
    assert params["p"].shape == (32,)


def test_reference_model_parameter_count_near_8m():
    cfg = ModelConfig(v=120, d=128, depth=40, heads=4, max_seq=4096)
    params = init_params(cfg, seed=0)
    n = param_count(params)
    assert abs(n - 8_000_000) / 8_000_000 < 0.15


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(v=10, d=10, depth=2, heads=2, max_seq=16)  # d % (2*heads) != 0
    with pytest.raises(ValueError):
        ModelConfig(v=10, d=16, depth=3, heads=2, max_seq=16, arch="enc_dec")
    with pytest.raises(ValueError):
        ModelConfig(v=10, d=16, depth=2, heads=2, max_seq=16, arch="other")
