import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffdr.lexindex import ScoredDoc
from ffdr.ranker import (
    INIT_SCALE,
    TABLES,
    AdamWState,
    MiniCoilModel,
    SparseGrad,
    TrainConfig,
    adamw_step,
    cls_vector,
    contrastive_loss,
    extend_vocab,
    init_model,
    instance_loss,
    load_model,
    loss_and_gradients,
    lr_at,
    rerank,
    save_model,
    score,
    softmax_weights,
    train,
    vocab_coverage,
)
from ffdr.sampler import TrainingInstance

from oracles import fd_max_relative_error, random_instance

LN8 = 2.079441541679836


def model_from(vocab, q_tok, d_tok, q_cls, d_cls):
    return MiniCoilModel({t: i for i, t in enumerate(vocab)}, *(np.array(x, dtype=float) for x in (q_tok, d_tok, q_cls, d_cls)))


def hand_model():
    return model_from(["a"], [[1, 0]], [[2, 0]], [[1, 1]], [[1, 1]])


# ---------------------------------------------------------------- init


def test_init_model():
    a = init_model(["x", "y", "x"], 4, 3, seed=1)
    b = init_model(["x", "y"], 4, 3, seed=1)
    assert a.vocab == {"x": 0, "y": 1}
    for name in TABLES:
        np.testing.assert_array_equal(a.table(name), b.table(name))
        assert np.all(np.abs(a.table(name)) < INIT_SCALE)
    assert a.q_tok.shape == (2, 4) and a.q_cls.shape == (2, 3)
    assert init_model(["x"], 1, 1).n_t == 1
    assert not np.array_equal(init_model(["x"], 4, 4, 0).q_tok, init_model(["x"], 4, 4, 1).q_tok)
    with pytest.raises(ValueError):
        init_model([])
    with pytest.raises(ValueError):
        init_model(["x"], 0, 2)


def test_extend_vocab_keeps_rows():
    base = init_model(["x", "y"], 3, 3)
    ext = extend_vocab(base, ["y", "z"])
    assert ext.vocab == {"x": 0, "y": 1, "z": 2}
    np.testing.assert_array_equal(ext.q_tok[:2], base.q_tok)
    # a token's rows depend only on (seed, token)
    np.testing.assert_array_equal(ext.d_cls[2], init_model(["z"], 3, 3).d_cls[0])
    assert extend_vocab(base, ["x"]) is base


# ---------------------------------------------------------------- scoring


def test_cls_vector():
    m = model_from(["a", "b"], [[0], [0]], [[0], [0]], [[1, 2], [3, 6]], [[0, 0], [0, 0]])
    np.testing.assert_array_equal(cls_vector(m, ["a"], "query"), [1, 2])
    np.testing.assert_array_equal(cls_vector(m, [], "query"), [0, 0])
    np.testing.assert_array_equal(cls_vector(m, ["zz"], "doc"), [0, 0])
    np.testing.assert_array_equal(cls_vector(m, ["a", "b"], "query"), [2, 4])
    with pytest.raises(ValueError):
        cls_vector(m, ["a"], "both")


def test_score_hand_example():
    s = score(hand_model(), ["a"], ["a"])
    assert (s.match_score, s.cls_product, s.total) == (2.0, 2.0, 4.0)
    # duplicates in the query count once in the match term
    assert score(hand_model(), ["a", "a"], ["a"]).match_score == 2.0


def test_score_no_overlap():
    m = init_model(["a", "b"], 3, 3)
    s = score(m, ["a"], ["b"])
    assert s.match_score == 0.0
    assert s.total == s.cls_product


@settings(max_examples=50)
@given(st.lists(st.sampled_from("abcdz"), max_size=6), st.lists(st.sampled_from("abcdz"), max_size=10))
def test_total_is_exact_sum(q, d):
    m = init_model("abcd", 4, 4, 3)
    s = score(m, q, d)
    assert s.total == s.cls_product + s.match_score


# ---------------------------------------------------------------- loss


def test_loss_anchors():
    assert contrastive_loss(0.0, [0.0] * 7) == pytest.approx(LN8, abs=1e-9)
    assert contrastive_loss(3.3, [3.3] * 7) == pytest.approx(math.log(8), abs=1e-12)
    assert contrastive_loss(100.0, [0.0]) == pytest.approx(3.7200759760208356e-44, rel=1e-9)
    assert contrastive_loss(1.0, [0.0, 0.0]) == pytest.approx(0.551444713932051, abs=1e-12)
    assert contrastive_loss(-800.0, [800.0]) == pytest.approx(1600.0)


def test_loss_errors():
    with pytest.raises(ValueError):
        contrastive_loss(1.0, [])
    with pytest.raises(ValueError):
        contrastive_loss(float("nan"), [0.0])
    with pytest.raises(ValueError):
        contrastive_loss(0.0, [float("inf")])


finite = st.floats(-30, 30, allow_nan=False)


@settings(max_examples=200)
@given(finite, st.lists(finite, min_size=1, max_size=10), st.floats(-50, 50))
def test_loss_shift_invariance(pos, negs, c):
    base = contrastive_loss(pos, negs)
    assert base >= 0
    assert abs(contrastive_loss(pos + c, [n + c for n in negs]) - base) <= 1e-9


@settings(max_examples=50)
@given(st.lists(finite, min_size=2, max_size=9))
def test_softmax_identity(scores):
    w = softmax_weights(scores)
    coeff = w.copy()
    coeff[0] -= 1.0
    assert abs(coeff.sum()) < 1e-12
    assert w.sum() == pytest.approx(1.0)


# ---------------------------------------------------------------- gradients


def test_zero_instance_has_zero_gradients():
    m = model_from(["a", "b", "c"], np.ones((3, 2)), np.ones((3, 2)), np.zeros((3, 2)), np.zeros((3, 2)))
    loss, grads = loss_and_gradients(m, ["a"], [["b"], ["c"], ["b", "c"]])
    assert loss == pytest.approx(math.log(3))
    for g in grads.values():
        assert np.all(g.values == 0)
    assert len(grads["q_tok"].rows) == 0


def test_gradient_rows_are_touched_rows_only():
    m = init_model(["a", "b", "c", "d"], 3, 3)
    _, grads = loss_and_gradients(m, ["a"], [["a", "b"], ["c"]])
    assert list(grads["q_tok"].rows) == [0]
    assert list(grads["q_cls"].rows) == [0]
    assert list(grads["d_cls"].rows) == [0, 1, 2]
    assert m.vocab["d"] not in set(grads["d_cls"].rows)


def test_finite_differences_randomized():
    rng = np.random.default_rng(2024)
    worst = max(fd_max_relative_error(*random_instance(rng)) for _ in range(100))
    assert worst <= 1e-4


def test_finite_differences_at_init_scale():
    rng = np.random.default_rng(7)
    for _ in range(20):
        model, q, docs = random_instance(rng)
        for name in TABLES:
            model.table(name)[:] *= INIT_SCALE
        assert fd_max_relative_error(model, q, docs) <= 1e-4


# ---------------------------------------------------------------- optimiser


def scalar_model(theta):
    return model_from(["a"], [[theta]], [[0.0]], [[0.0]], [[0.0]])


def test_adamw_hand_step():
    cfg = TrainConfig(lr=0.1, weight_decay=0.01)
    m = scalar_model(0.5)
    state = AdamWState.zeros_like(m)
    adamw_step(m, state, {"q_tok": SparseGrad(np.array([0]), np.array([[1.0]]))}, 1, cfg)
    # m_hat = 1, v_hat = 1 after bias correction
    expected = 0.5 * (1 - 0.1 * 0.01) - 0.1 * 1.0 / (1.0 + 1e-8)
    assert m.q_tok[0, 0] == pytest.approx(expected, abs=1e-15)
    assert state.m["q_tok"][0, 0] == pytest.approx(0.1)
    assert state.v["q_tok"][0, 0] == pytest.approx(0.001)


def test_adamw_zero_gradient_no_decay():
    cfg = TrainConfig(weight_decay=0.0)
    m = init_model(["a", "b"], 3, 3)
    before = m.copy()
    state = AdamWState.zeros_like(m)
    zero = {n: SparseGrad(np.array([0, 1]), np.zeros((2, m.table(n).shape[1]))) for n in TABLES}
    adamw_step(m, state, zero, 1, cfg)
    for n in TABLES:
        np.testing.assert_array_equal(m.table(n), before.table(n))


def test_adamw_decay_touches_only_rows_in_gradient():
    cfg = TrainConfig(weight_decay=0.5, lr=0.1)
    m = init_model(["a", "b"], 2, 2)
    before = m.copy()
    adamw_step(m, AdamWState.zeros_like(m), {"q_tok": SparseGrad(np.array([0]), np.zeros((1, 2)))}, 1, cfg)
    np.testing.assert_allclose(m.q_tok[0], before.q_tok[0] * 0.95)
    np.testing.assert_array_equal(m.q_tok[1], before.q_tok[1])


def test_lr_schedule():
    cfg = TrainConfig(lr=1.0, warmup_ratio=0.1)
    assert lr_at(0, 100, cfg) == 0.0
    assert lr_at(5, 100, cfg) == pytest.approx(0.5)
    assert lr_at(10, 100, cfg) == pytest.approx(1.0)
    assert lr_at(55, 100, cfg) == pytest.approx(0.5)
    assert lr_at(100, 100, cfg) == 0.0
    no_warm = TrainConfig(lr=1.0, warmup_ratio=0.0)
    assert lr_at(1, 4, no_warm) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        TrainConfig(warmup_ratio=1.5)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)


# ---------------------------------------------------------------- training


def toy_task():
    docs = {
        "p": ["alpha", "beta", "gamma"],
        **{f"n{i}": [f"filler{i}", "delta", "beta"] for i in range(7)},
    }
    inst = TrainingInstance(["alpha", "beta"], "p", [f"n{i}" for i in range(7)], {"m": 7, "short": False})
    vocab = [t for toks in docs.values() for t in toks]
    return init_model(vocab, 8, 8, 0), [inst], docs


def test_zero_epochs_leaves_model_unchanged():
    model, data, docs = toy_task()
    res = train(model, data, docs, TrainConfig(epochs=0))
    assert res.loss_trace == []
    for n in TABLES:
        np.testing.assert_array_equal(res.model.table(n), model.table(n))


def test_training_converges_on_one_instance():
    model, data, docs = toy_task()
    start = instance_loss(model, data[0], docs)
    assert start == pytest.approx(LN8, abs=0.05)
    res = train(model, data, docs, TrainConfig(epochs=500))
    assert instance_loss(res.model, data[0], docs) < LN8 / 10
    assert len(res.loss_trace) == 500
    # the input model is not modified
    assert instance_loss(model, data[0], docs) == start


def test_training_is_deterministic():
    model, data, docs = toy_task()
    data = data * 4
    a = train(model, data, docs, TrainConfig(epochs=3, seed=5))
    b = train(model, data, docs, TrainConfig(epochs=3, seed=5))
    assert a.loss_trace == b.loss_trace
    for n in TABLES:
        np.testing.assert_array_equal(a.model.table(n), b.model.table(n))
    with pytest.raises(ValueError):
        train(model, [], docs)


# ---------------------------------------------------------------- rerank


def cands(*ids):
    return [ScoredDoc(d, 10.0 - i, i + 1) for i, d in enumerate(ids)]


def test_rerank_zero_model_sorts_by_id():
    m = model_from(["a"], [[0.0]], [[0.0]], [[0.0]], [[0.0]])
    docs = {"d3": ["a"], "d1": ["a"], "d2": []}
    out = rerank(m, ["a"], cands("d3", "d1", "d2"), 10, docs)
    assert [h.doc_id for h in out] == ["d1", "d2", "d3"]
    assert [h.rank for h in out] == [1, 2, 3]


def test_rerank_hand_case():
    # d1 scores 1*3 + 0 = 3, d2 scores 0 + 1*5 = 5
    m = model_from(["a", "b"], [[1.0], [0.0]], [[3.0], [0.0]], [[1.0], [0.0]], [[0.0], [5.0]])
    docs = {"d1": ["a"], "d2": ["b"]}
    out = rerank(m, ["a"], cands("d1", "d2"), 10, docs)
    assert [(h.doc_id, h.score) for h in out] == [("d2", 5.0), ("d1", 3.0)]
    assert [h.doc_id for h in rerank(m, ["a"], cands("d1", "d2"), 1, docs)] == ["d2"]
    with pytest.raises(ValueError):
        rerank(m, ["a"], cands("d1", "d1"), 1, docs)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from([f"d{i}" for i in range(12)]), unique=True, max_size=12), st.integers(1, 15))
def test_rerank_is_permutation_truncation(ids, k):
    m = init_model("abcdef", 3, 3, 1)
    rng = np.random.default_rng(len(ids))
    docs = {f"d{i}": list(rng.choice(list("abcdefg"), 4)) for i in range(12)}
    out = rerank(m, ["a", "c"], cands(*ids), k, docs)
    assert len(out) == min(k, len(ids))
    assert {h.doc_id for h in out} <= set(ids)
    scores = [h.score for h in out]
    assert scores == sorted(scores, reverse=True)


# ---------------------------------------------------------------- persistence


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = init_model([f"w{i}" for i in range(30)] + ["ünï"], 5, 4, 9)
    for n in TABLES:
        m.table(n)[:] = rng.standard_normal(m.table(n).shape)
    path = tmp_path / "m.dlmc"
    save_model(m, path)
    assert path.read_bytes().startswith(b"DLMC1\n")
    back = load_model(path)
    assert back.vocab == m.vocab
    for n in TABLES:
        np.testing.assert_array_equal(back.table(n), m.table(n))
    words = list(m.vocab) + ["oov"]
    for _ in range(50):
        q = list(rng.choice(words, 3))
        d = list(rng.choice(words, 8))
        assert score(back, q, d) == score(m, q, d)


def test_model_file_errors(tmp_path):
    path = tmp_path / "m.dlmc"
    save_model(init_model(["a", "b"], 3, 3), path)
    raw = path.read_bytes()
    for cut in (len(raw) - 1, len(raw) - 24, 10, 3):
        (tmp_path / "t.dlmc").write_bytes(raw[:cut])
        with pytest.raises(ValueError):
            load_model(tmp_path / "t.dlmc")
    (tmp_path / "x.dlmc").write_bytes(b"DLMC2\n" + raw[6:])
    with pytest.raises(ValueError, match="not a DLMC1"):
        load_model(tmp_path / "x.dlmc")
    (tmp_path / "v.dlmc").write_bytes(raw.replace(b'"version":1', b'"version":9'))
    with pytest.raises(ValueError, match="version"):
        load_model(tmp_path / "v.dlmc")


def test_vocab_coverage_warns(caplog):
    m = init_model(["a", "b"], 2, 2)
    with caplog.at_level(logging.WARNING):
        assert vocab_coverage(m, [["a", "zz"], ["b"]]) == (1, 3)
    assert "outside the model vocabulary" in caplog.text
    assert score(m, ["zz"], ["zz"]).total == 0.0
