"""Mask sampling and loss tests against arithmetic oracles.

Cross-entropy oracles here are computed from frozen logits with plain
float64 log-sum-exp arithmetic, sharing no code with the loss functions.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from mazelm.corpus import MASK_ID, DatasetRecord, build_corpus, build_vocab
from mazelm.model import ModelConfig, causal_forward, enc_dec_forward, init_params, param_shapes
from mazelm.objectives import (
    MaskSpec,
    _cross_entropy,
    mlmu_loss,
    next_token_loss,
    sample_batch_masks,
    sample_ordered_mask,
    sample_uniform_mask,
)


def oracle_ce(logits_row: np.ndarray, target: int) -> float:
    """-log softmax(logits)[target], float64, direct formula."""
    row = np.asarray(logits_row, dtype=np.float64)
    m = float(row.max())
    lse = m + math.log(float(np.exp(row - m).sum()))
    return lse - float(row[target])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


@pytest.fixture(scope="module")
def dfs3():
    records, vocab = build_corpus("dfs", 3, 8, seed=101)
    return vocab, records


def _cfg(arch: str, v: int, dtype: str = "float32") -> ModelConfig:
    return ModelConfig(v=v, d=8, depth=2, heads=2, max_seq=128, arch=arch, dtype=dtype)


def _zero_params(cfg: ModelConfig):
    return {k: np.zeros(s, dtype=cfg.np_dtype) for k, s in param_shapes(cfg).items()}


# ---------------------------------------------------------------- masks


def test_mu_zero_masks_nothing(dfs3):
    _, records = dfs3
    spec = sample_uniform_mask(records[0], _rng(0), mu=0.0)
    assert not spec.m_pred.any()
    assert spec.m_enc.all()


def test_mu_one_masks_exactly_solution_region(dfs3):
    _, records = dfs3
    r = records[0]
    spec = sample_uniform_mask(r, _rng(0), mu=1.0)
    expect = np.zeros(len(r.tokens), dtype=bool)
    expect[r.sol_start : r.sol_end] = True
    assert np.array_equal(spec.m_pred, expect)


def test_mask_confined_to_solution_and_complement(dfs3):
    _, records = dfs3
    rng = _rng(7)
    for r in records:
        for _ in range(20):
            spec = sample_uniform_mask(r, rng)
            assert 0.0 <= spec.mu <= 1.0
            assert not spec.m_pred[: r.sol_start].any()
            assert not spec.m_pred[r.sol_end :].any()
            # m_enc and m_pred partition the positions exactly.
            assert not (spec.m_enc & spec.m_pred).any()
            assert (spec.m_enc | spec.m_pred).all()


def test_batch_masks_share_one_mu(dfs3):
    _, records = dfs3
    specs = sample_batch_masks(records, _rng(3), kind="uniform")
    assert len({s.mu for s in specs}) == 1


def test_mask_rate_monte_carlo_half(dfs3):
    # E[masked fraction] = E[mu] = 1/2 by the law of total expectation.
    _, records = dfs3
    r = max(records, key=lambda x: x.solution_len)
    span = r.sol_end - r.sol_start
    rng = _rng(12345)
    total = 0
    draws = 100_000
    for _ in range(draws):
        total += int(sample_uniform_mask(r, rng).m_pred.sum())
    rate = total / (draws * span)
    assert abs(rate - 0.5) < 0.01


class _PinnedPick:
    """rng stand-in whose integers(n) returns a fixed value."""

    def __init__(self, value: int) -> None:
        self.value = value

    def integers(self, n: int) -> int:
        assert 0 <= self.value < n
        return self.value


def test_ordered_mask_first_pick_masks_whole_solution(dfs3):
    _, records = dfs3
    r = records[0]
    spec = sample_ordered_mask(r, _PinnedPick(0))
    assert int(spec.m_pred.sum()) == r.solution_len
    assert spec.mu == 1.0


def test_ordered_mask_last_pick_masks_one_token(dfs3):
    _, records = dfs3
    r = records[0]
    spec = sample_ordered_mask(r, _PinnedPick(r.solution_len - 1))
    assert int(spec.m_pred.sum()) == 1
    assert spec.m_pred[r.sol_end - 1]


def test_ordered_mask_is_solution_suffix(dfs3):
    _, records = dfs3
    rng = _rng(9)
    for r in records:
        for _ in range(20):
            spec = sample_ordered_mask(r, rng)
            idx = np.nonzero(spec.m_pred)[0]
            assert idx.size >= 1
            assert idx[-1] == r.sol_end - 1
            assert np.array_equal(idx, np.arange(idx[0], r.sol_end))


# ---------------------------------------------------------------- losses


def test_cross_entropy_one_hot_logits_zero_loss():
    logits = np.full((1, 4, 5), -1000.0, dtype=np.float32)
    targets = np.array([[1, 0, 3, 2]])
    for j, t in enumerate(targets[0]):
        logits[0, j, t] = 1000.0
    valid = np.ones((1, 4), dtype=bool)
    loss, dlogits, n = _cross_entropy(logits, targets, valid)
    assert loss == 0.0
    assert n == 4
    assert np.isfinite(dlogits).all()


def test_mlmu_uniform_logits_ln_v(dfs3):
    vocab, records = dfs3
    cfg = _cfg("enc_dec", len(vocab))
    params = _zero_params(cfg)
    rng = _rng(5)
    specs = [sample_uniform_mask(r, rng, mu=0.8) for r in records[:4]]
    assert any(s.m_pred.any() for s in specs)
    loss, _ = mlmu_loss(params, cfg, records[:4], specs)
    assert abs(loss - math.log(len(vocab))) < 1e-6


def test_mlmu_empty_mask_zero_loss_zero_grads(dfs3):
    vocab, records = dfs3
    cfg = _cfg("enc_dec", len(vocab))
    params = init_params(cfg, seed=1)
    specs = [sample_uniform_mask(r, _rng(0), mu=0.0) for r in records[:3]]
    loss, grads = mlmu_loss(params, cfg, records[:3], specs)
    assert loss == 0.0
    assert all(not g.any() for g in grads.values())


def test_mlmu_two_masked_tokens_hand_computed(dfs3):
    """Batch loss equals -(log p1 + log p2)/2 from an independent forward.

    The oracle runs an unpadded single-record forward with hand-built
    inputs; mlmu_loss sees a padded two-record batch where the second
    record has nothing masked.
    """
    vocab, records = dfs3
    cfg = _cfg("enc_dec", len(vocab))
    params = init_params(cfg, seed=2)
    r = records[0]
    j1, j2 = r.sol_start, r.sol_start + 1
    assert j2 < r.sol_end

    ids = np.asarray(r.tokens, dtype=np.int64)
    ids_in = ids.copy()
    ids_in[[j1, j2]] = MASK_ID
    visible = np.ones(len(ids), dtype=bool)
    visible[[j1, j2]] = False
    logits, _ = enc_dec_forward(
        params, cfg, ids_in[None, :], visible[None, :], np.array([[j1, j2]])
    )
    expect = (oracle_ce(logits[0, 0], ids[j1]) + oracle_ce(logits[0, 1], ids[j2])) / 2

    m_pred = np.zeros(len(ids), dtype=bool)
    m_pred[[j1, j2]] = True
    specs = [
        MaskSpec(mu=0.3, m_pred=m_pred, m_enc=~m_pred),
        sample_uniform_mask(records[1], _rng(0), mu=0.0),
    ]
    loss, grads = mlmu_loss(params, cfg, [r, records[1]], specs)
    assert abs(loss - expect) < 1e-6
    assert any(g.any() for g in grads.values())


def test_mlmu_permutation_invariance(dfs3):
    vocab, records = dfs3
    cfg = _cfg("enc_dec", len(vocab))
    params = init_params(cfg, seed=3)
    batch = records[:5]
    specs = sample_batch_masks(batch, _rng(11), kind="uniform")
    loss_a, _ = mlmu_loss(params, cfg, batch, specs)
    perm = [3, 0, 4, 2, 1]
    loss_b, _ = mlmu_loss(params, cfg, [batch[i] for i in perm], [specs[i] for i in perm])
    assert abs(loss_a - loss_b) < 1e-6


def test_mlmu_mask_record_mismatch_raises(dfs3):
    vocab, records = dfs3
    cfg = _cfg("enc_dec", len(vocab))
    params = init_params(cfg, seed=4)
    specs = sample_batch_masks(records[:2], _rng(0), kind="uniform")
    with pytest.raises(ValueError):
        mlmu_loss(params, cfg, records[:3], specs)


def test_next_token_uniform_logits_ln_v(dfs3):
    vocab, records = dfs3
    cfg = _cfg("dec_only", len(vocab))
    params = _zero_params(cfg)
    loss, _ = next_token_loss(params, cfg, records[:4])
    assert abs(loss - math.log(len(vocab))) < 1e-6


def test_next_token_three_step_hand_computed(dfs3):
    """Mean of three per-step cross-entropies from frozen causal logits."""
    vocab, records = dfs3
    r = next(x for x in records if x.solution_len >= 3)
    # Synthetic three-token supervision window at the end of the solution.
    toy = DatasetRecord(id=r.id, tokens=r.tokens, sol_start=r.sol_end - 3, sol_end=r.sol_end)
    cfg = _cfg("dec_only", len(vocab))
    params = init_params(cfg, seed=5)
    logits = causal_forward(params, cfg, np.asarray(toy.tokens, dtype=np.int64))
    steps = [
        oracle_ce(logits[j], toy.tokens[j + 1]) for j in range(toy.sol_start - 1, toy.sol_end - 1)
    ]
    assert len(steps) == 3
    loss, _ = next_token_loss(params, cfg, [toy])
    assert abs(loss - sum(steps) / 3) < 1e-6


def test_next_token_causality_exact(dfs3):
    """Tokens past the supervised window cannot change the loss."""
    vocab, records = dfs3
    r = records[0]
    # Supervise everything but the final solution token, then mutate it.
    toy_a = DatasetRecord(id=r.id, tokens=r.tokens, sol_start=r.sol_start, sol_end=r.sol_end - 1)
    mutated = list(r.tokens)
    mutated[-1] = r.tokens[r.sol_start]
    toy_b = DatasetRecord(id=r.id, tokens=mutated, sol_start=r.sol_start, sol_end=r.sol_end - 1)
    cfg = _cfg("dec_only", len(vocab))
    params = init_params(cfg, seed=6)
    loss_a, _ = next_token_loss(params, cfg, [toy_a])
    loss_b, _ = next_token_loss(params, cfg, [toy_b])
    assert loss_a == loss_b


def test_next_token_rejects_enc_dec_config(dfs3):
    vocab, records = dfs3
    cfg = _cfg("enc_dec", len(vocab))
    params = init_params(cfg, seed=7)
    with pytest.raises(ValueError):
        next_token_loss(params, cfg, records[:1])


# ------------------------------------------------- gradient spot checks


def _fd_check(loss_fn, params, names, h=1e-5, tol=1e-6):
    _, grads = loss_fn(params)
    rng = _rng(99)
    for name in names:
        flat = params[name].reshape(-1)
        gflat = grads[name].reshape(-1)
        picks = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        for i in picks:
            keep = flat[i]
            flat[i] = keep + h
            up, _ = loss_fn(params)
            flat[i] = keep - h
            down, _ = loss_fn(params)
            flat[i] = keep
            fd = (up - down) / (2 * h)
            # Tiny entries are dominated by fd cancellation noise; an
            # absolute floor of 1e-9 covers them.
            err = abs(fd - gflat[i])
            denom = max(abs(fd), abs(gflat[i]), 1e-8)
            assert err < 1e-9 or err / denom < tol, (name, i, fd, gflat[i])


def test_mlmu_gradient_matches_finite_differences(dfs3):
    vocab, records = dfs3
    cfg = _cfg("enc_dec", len(vocab), dtype="float64")
    params = init_params(cfg, seed=8)
    batch = records[:2]
    rng = _rng(21)
    specs = [sample_uniform_mask(r, rng, mu=0.7) for r in batch]
    assert any(s.m_pred.any() for s in specs)
    fn = lambda p: mlmu_loss(p, cfg, batch, specs)
    _fd_check(fn, params, ["emb", "p", "enc.0.wq", "dec.0.w2", "dec_lnf.g"])


def test_next_token_gradient_matches_finite_differences(dfs3):
    vocab, records = dfs3
    cfg = _cfg("dec_only", len(vocab), dtype="float64")
    params = init_params(cfg, seed=9)
    batch = records[:2]
    fn = lambda p: next_token_loss(p, cfg, batch)
    _fd_check(fn, params, ["emb", "blk.0.wv", "blk.1.w1", "lnf.b"])
