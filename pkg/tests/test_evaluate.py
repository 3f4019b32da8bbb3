"""Inference and report grading tests."""

from __future__ import annotations

import numpy as np
import pytest

from mazelm.corpus import DatasetRecord, build_corpus, retokenize_record
from mazelm.evaluate import (
    _batch_generate,
    generate_path,
    grade,
    greedy_pick,
    score,
    transfer_eval,
)
from mazelm.model import ModelConfig, init_params


@pytest.fixture(scope="module")
def dfs4():
    records, vocab = build_corpus("dfs", 4, 10, seed=17)
    return vocab, records


@pytest.fixture(scope="module")
def astar4():
    records, vocab = build_corpus("astar", 4, 8, seed=23)
    return vocab, records


def _model(vocab, arch="enc_dec", seed=1):
    cfg = ModelConfig(v=len(vocab), d=16, depth=2, heads=2, max_seq=160, arch=arch)
    return cfg, init_params(cfg, seed)


# ------------------------------------------------------------ generation


def test_generate_copies_non_solution_positions(dfs4):
    vocab, records = dfs4
    cfg, params = _model(vocab)
    r = records[0]
    out = generate_path(params, cfg, r)
    assert len(out) == len(r.tokens)
    assert out[: r.sol_start] == list(r.tokens[: r.sol_start])
    assert out[r.sol_end :] == list(r.tokens[r.sol_end :])


def test_generate_empty_target_returns_input(dfs4):
    vocab, records = dfs4
    cfg, params = _model(vocab)
    r = records[0]
    frozen = DatasetRecord(id=r.id, tokens=r.tokens, sol_start=r.sol_start, sol_end=r.sol_start)
    assert generate_path(params, cfg, frozen) == list(r.tokens)


@pytest.mark.parametrize("arch,objective_seed", [("enc_dec", 1), ("dec_only", 2)])
def test_generate_deterministic(dfs4, arch, objective_seed):
    vocab, records = dfs4
    cfg, params = _model(vocab, arch=arch, seed=objective_seed)
    a = generate_path(params, cfg, records[1])
    b = generate_path(params, cfg, records[1])
    assert a == b


@pytest.mark.parametrize("arch", ["enc_dec", "dec_only"])
def test_batched_generation_matches_single(dfs4, arch):
    vocab, records = dfs4
    cfg, params = _model(vocab, arch=arch, seed=3)
    batch = records[:5]
    together = _batch_generate(params, cfg, batch)
    alone = [generate_path(params, cfg, r) for r in batch]
    assert together == alone


def test_greedy_pick_scale_invariant():
    rng = np.random.Generator(np.random.Philox(key=31))
    for _ in range(50):
        logits = rng.standard_normal(17)
        base = greedy_pick(logits)
        for c in (0.25, 1.0, 7.5, 1e3):
            assert greedy_pick(c * logits) == base


# --------------------------------------------------------------- grading


def test_grade_perfect_predictions(dfs4):
    vocab, records = dfs4
    preds = [list(r.tokens[r.sol_start : r.sol_end]) for r in records]
    rep = grade(records, preds, vocab)
    assert rep.full_path_accuracy == 1.0
    assert rep.per_token_accuracy == 1.0
    assert rep.histogram["ShortestMatch"] == rep.n == len(records)
    assert sum(rep.histogram.values()) == rep.n


def test_grade_one_wrong_token_arithmetic(dfs4):
    # Two instances of solution length 10; one wrong token in one of them:
    # full path 0.5, per token 0.95.
    vocab, records = dfs4
    pair = [r for r in records if r.solution_len == 10][:2]
    if len(pair) < 2:
        more, _ = build_corpus("dfs", 4, 200, seed=99)
        pair = [r for r in more if r.solution_len == 10][:2]
    assert len(pair) == 2
    preds = [list(r.tokens[r.sol_start : r.sol_end]) for r in pair]
    wrong = preds[1][3]
    preds[1][3] = wrong + 1 if wrong + 1 < len(vocab) else wrong - 1
    rep = grade(pair, preds, vocab)
    assert rep.full_path_accuracy == 0.5
    assert rep.per_token_accuracy == pytest.approx(0.95)


def test_grade_full_path_never_exceeds_per_token(dfs4):
    vocab, records = dfs4
    rng = np.random.Generator(np.random.Philox(key=41))
    preds = []
    for r in records:
        p = list(r.tokens[r.sol_start : r.sol_end])
        for j in range(len(p)):
            if rng.random() < 0.3:
                p[j] = int(rng.integers(0, len(vocab)))
        preds.append(p)
    rep = grade(records, preds, vocab)
    assert rep.full_path_accuracy <= rep.per_token_accuracy
    assert sum(rep.histogram.values()) == rep.n


def test_grade_marker_token_is_parse_error(dfs4):
    vocab, records = dfs4
    r = records[0]
    pred = list(r.tokens[r.sol_start : r.sol_end])
    pred[0] = vocab.encode("<edge>")
    rep = grade([r], [pred], vocab)
    assert rep.histogram["ParseError"] == 1
    assert rep.full_path_accuracy == 0.0


def test_grade_wrong_bank_is_parse_error(astar4):
    vocab, records = astar4
    r = records[0]
    pred = list(r.tokens[r.sol_start : r.sol_end])
    # Swap an x-bank token into a y slot: coordinate pairing must fail.
    pred[1] = vocab.encode("x0")
    rep = grade([r], [pred], vocab)
    assert rep.histogram["ParseError"] == 1


def test_grade_valid_not_shortest_detour(dfs4):
    vocab, records = dfs4
    # A solution with an immediate back-and-forth detour stays valid.
    r = next(x for x in records if x.solution_len >= 3)
    ref = list(r.tokens[r.sol_start : r.sol_end])
    pred = [ref[0], ref[1], ref[0], ref[1]] + ref[2:]
    rep = grade([r], [pred], vocab)
    assert rep.histogram["ValidNotShortest"] == 1


def test_report_instances_sorted_and_serializable(dfs4):
    vocab, records = dfs4
    preds = [list(r.tokens[r.sol_start : r.sol_end]) for r in records]
    rep = grade(records[::-1], preds[::-1], vocab)
    ids = [i["id"] for i in rep.instances]
    assert ids == sorted(ids)
    body = rep.to_json()
    assert body.startswith('{"n":')


# -------------------------------------------------------------- transfer


def test_transfer_same_size_retokenized_reduces_to_score(dfs4):
    vocab, records = dfs4
    cfg, params = _model(vocab, seed=5)
    direct = score(params, cfg, records[:4], vocab)
    moved = transfer_eval(params, cfg, records[:4], vocab, vocab, "retokenized")
    assert moved.to_json() == direct.to_json()


def test_transfer_embedded_references_stay_shortest(astar4):
    # Pre-model sanity: the embedded records' own solutions must grade
    # as ShortestMatch under the big vocabulary.
    vocab, records = astar4
    big_records, big_vocab = build_corpus("astar", 7, 1, seed=1)
    from mazelm.corpus import deserialize_record, serialize_instance
    from mazelm.mazes import derive_seed, embed_maze

    embedded = []
    for r in records:
        inner = deserialize_record(r, vocab)
        inst = embed_maze(inner, 7, derive_seed("embed", 0, r.id))
        embedded.append(serialize_instance(inst, big_vocab))
    preds = [list(r.tokens[r.sol_start : r.sol_end]) for r in embedded]
    rep = grade(embedded, preds, big_vocab)
    assert rep.histogram["ShortestMatch"] == rep.n


def test_transfer_unknown_mode_raises(dfs4):
    vocab, records = dfs4
    cfg, params = _model(vocab, seed=6)
    with pytest.raises(ValueError):
        transfer_eval(params, cfg, records[:1], vocab, vocab, "sideways")
