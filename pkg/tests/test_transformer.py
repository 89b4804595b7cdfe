from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from textclf.errors import CorpusTooSmall, ShapeMismatch, UnknownToken
from textclf.fixtures import toy_sentences
from textclf.schedule import StlrSchedule
from textclf.transformer import (
    TransformerConfig,
    TransformerModel,
    WordPieceVocab,
    encode_batch,
    encode_sequence,
    make_nsp_pairs,
    mlm_mask,
    pretrain,
    train_wordpiece,
)
from textclf.transformer.model import (
    attention,
    attention_weights,
    embedding_analogy,
    forward,
    loss_and_grads,
    predict_proba,
    softmax,
)
from textclf.transformer.pretraining import make_pretraining_batch
from textclf.transformer.tokenization import CLS_ID, MASK_ID, PAD_ID, SEP_ID, SPECIAL_TOKENS

from tiny_model import sample_texts, tiny_model, tiny_vocab

GOLDEN = Path(__file__).parent / "data" / "golden_tiny.npz"


# ---------------------------------------------------------------- tokenization

def test_empty_text_encoding():
    enc = encode_sequence("", tiny_vocab(), 6)
    assert enc.input_ids[0].tolist() == [CLS_ID, SEP_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]
    assert enc.attention_mask[0].tolist() == [1, 1, 0, 0, 0, 0]


def test_single_word_encoding():
    v = tiny_vocab()
    enc = encode_sequence("film", v, 3)
    assert enc.input_ids[0].tolist() == [CLS_ID, v.id("film"), SEP_ID]


def test_pair_truncated_to_max_len():
    v = tiny_vocab()
    a = " ".join(["film"] * 20)
    b = " ".join(["harika"] * 7)
    enc = encode_sequence((a, b), v, 16)
    assert int(enc.attention_mask.sum()) == 16
    ids = enc.input_ids[0].tolist()
    assert ids.count(SEP_ID) == 2 and ids[0] == CLS_ID
    assert enc.segment_ids[0].tolist() == [0] * 8 + [1] * 8


def test_max_len_above_positions_rejected():
    with pytest.raises(ValueError):
        encode_sequence("film", tiny_vocab(), 600)


def test_wordpiece_training_and_segmentation(tmp_path):
    texts = ["filmler filmi film", "filmde harika"] * 3
    v = train_wordpiece(texts, vocab_size=40)
    assert v.tokens[:5] == list(SPECIAL_TOKENS)
    assert len(v) <= 40
    for word in ["filmler", "filmi", "harika"]:
        pieces = v.segment_word(word)
        assert "".join(p.removeprefix("##") for p in pieces) == word
    assert v.segment_word("xyz") == ["[UNK]"]
    v.save(tmp_path / "v.txt")
    assert WordPieceVocab.load(tmp_path / "v.txt") == v
    assert train_wordpiece(texts, vocab_size=40) == v


def test_longest_match_first():
    v = WordPieceVocab(list(SPECIAL_TOKENS) + ["f", "fi", "film", "##l", "##m", "##i", "##ler"])
    assert v.segment_word("filmler") == ["film", "##ler"]
    assert v.segment_word("fil") == ["fi", "##l"]


# ---------------------------------------------------------------- attention

def _oracle_attention(q, k):
    n, m = q.shape[0], k.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        scores = [sum(q[i, t] * k[j, t] for t in range(q.shape[1])) / np.sqrt(q.shape[1]) for j in range(m)]
        top = max(scores)
        e = [np.exp(s - top) for s in scores]
        out[i] = [x / sum(e) for x in e]
    return out


def test_attention_matches_dense_oracle(rng):
    q, k, v = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    out, w = attention(q, k, v, return_weights=True)
    np.testing.assert_allclose(w, _oracle_attention(q, k), atol=1e-6)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(out, w @ v, atol=1e-12)


def test_single_position_weight_is_one(rng):
    w = attention_weights(rng.normal(size=(1, 4)), rng.normal(size=(1, 4)))
    assert w[0, 0] == 1.0


def test_equal_scores_give_uniform_weights():
    q = np.array([[0.0, 1.0]])
    k = np.array([[1.0, 0.0], [2.0, 0.0], [-3.0, 0.0]])
    np.testing.assert_allclose(attention_weights(q, k), [[1 / 3] * 3], atol=1e-15)


def test_masked_keys_get_zero_weight(rng):
    q, k = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
    w = attention_weights(q, k, mask=[1, 0, 1])
    assert np.all(w[:, 1] == 0.0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(w[:, [0, 2]], _oracle_attention(q, k[[0, 2]]), atol=1e-6)
    with pytest.raises(ShapeMismatch):
        attention_weights(q, k, mask=[0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 6), m=st.integers(1, 6), scale=st.floats(0.1, 30))
def test_attention_rows_stochastic(seed, n, m, scale):
    r = np.random.default_rng(seed)
    w = attention_weights(scale * r.normal(size=(n, 4)), scale * r.normal(size=(m, 4)))
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 500))
def test_softmax_rows_sum_to_one(seed, scale):
    x = scale * np.random.default_rng(seed).normal(size=(5, 7))
    np.testing.assert_allclose(softmax(x).sum(axis=-1), 1.0, atol=1e-6)


# ---------------------------------------------------------------- forward

def test_class_probs_are_distributions():
    v = tiny_vocab()
    m = tiny_model(v, n_layers=2)
    out = forward(m, encode_batch(sample_texts(), v, 12))
    assert np.all(out.class_probs >= 0)
    np.testing.assert_allclose(out.class_probs.sum(axis=1), 1.0, atol=1e-6)


def test_zero_head_gives_uniform():
    v = tiny_vocab()
    cfg = TransformerConfig(vocab_size=len(v), max_positions=16, n_layers=1, hidden_size=8,
                            n_heads=2, n_classes=3)
    m = TransformerModel(cfg)
    m.zero_classifier_head()
    out = forward(m, encode_batch(sample_texts(), v, 12))
    np.testing.assert_allclose(out.class_probs, 1 / 3, atol=1e-15)


def test_golden_tensor():
    v = tiny_vocab()
    m = tiny_model(v, n_layers=2, seed=11)
    out = forward(m, encode_batch(sample_texts(), v, 12))
    golden = np.load(GOLDEN)
    np.testing.assert_allclose(out.class_probs, golden["class_probs"], atol=1e-6, rtol=0)
    np.testing.assert_allclose(out.mlm_logits, golden["mlm_logits"], atol=1e-6, rtol=0)
    np.testing.assert_allclose(out.nsp_logits, golden["nsp_logits"], atol=1e-6, rtol=0)


@pytest.mark.parametrize("extra", [1, 5])
def test_padding_invariance(extra):
    v = tiny_vocab()
    m = tiny_model(v, n_layers=2)
    batch = encode_batch(sample_texts(), v, 10)
    base = forward(m, batch).class_probs
    padded = forward(m, batch.padded_to(10 + extra)).class_probs
    np.testing.assert_allclose(padded, base, atol=1e-6, rtol=0)
    trimmed = forward(m, batch.trimmed()).class_probs
    np.testing.assert_allclose(trimmed, base, atol=1e-6, rtol=0)


def test_predict_proba_chunks_agree():
    v = tiny_vocab()
    m = tiny_model(v)
    batch = encode_batch(sample_texts() * 3, v, 12)
    np.testing.assert_allclose(predict_proba(m, batch, batch_size=5), forward(m, batch).class_probs,
                               atol=1e-12)


def test_bad_batches_rejected():
    v = tiny_vocab()
    m = tiny_model(v, max_positions=8)
    with pytest.raises(ShapeMismatch):
        forward(m, encode_batch(["film"], v, 12))
    big = encode_batch(["film"], v, 4)
    big.input_ids[0, 1] = len(v) + 3
    with pytest.raises(ShapeMismatch):
        forward(m, big)


def test_hidden_divisible_by_heads():
    with pytest.raises(ValueError):
        TransformerConfig(vocab_size=20, hidden_size=10, n_heads=3)


# ---------------------------------------------------------------- gradients

def _finite_difference_check(model, batch, objective, eps=1e-5):
    _, grads = loss_and_grads(model, batch, objective)
    worst = {}
    for name, param in model.params.items():
        flat = param.reshape(-1)
        g = grads[name].reshape(-1)
        errs = []
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up, _ = loss_and_grads(model, batch, objective, need_grads=False)
            flat[i] = old - eps
            down, _ = loss_and_grads(model, batch, objective, need_grads=False)
            flat[i] = old
            num = (up - down) / (2 * eps)
            errs.append(abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-6))
        worst[model.group_of(name)] = max(worst.get(model.group_of(name), 0.0), max(errs))
    return worst


def test_gradient_check_classification():
    v = tiny_vocab()
    m = tiny_model(v, n_layers=1, hidden=8, heads=2, max_positions=10)
    batch = encode_batch(sample_texts()[:3], v, 10, labels=[0, 1, 0])
    worst = _finite_difference_check(m, batch, "classify")
    assert set(worst) >= {"embeddings", "layer_0", "head"}
    assert max(worst.values()) < 1e-3, worst


def test_gradient_check_pretraining():
    v = tiny_vocab()
    m = tiny_model(v, n_layers=1, hidden=8, heads=2, max_positions=12)
    rng = np.random.default_rng(0)
    pairs = [("harika bir film", "çok güzel müzik", 1), ("kötü oyuncu", "berbat film .", 0)]
    batch = make_pretraining_batch(pairs, v, 12, 0.4, rng)
    assert (batch.mlm_targets >= 0).any()
    worst = _finite_difference_check(m, batch, "pretrain")
    assert set(worst) >= {"embeddings", "layer_0", "pretrain_heads"}
    assert max(worst.values()) < 1e-3, worst


# ---------------------------------------------------------------- pretraining objectives

def _long_batch(n_rows=100, seq=102):
    v = tiny_vocab()
    words = np.random.default_rng(1).choice(v.tokens[5:], size=(n_rows, seq - 2))
    return encode_batch([" ".join(w) for w in words], v, seq)


def test_mask_rate_zero_is_identity():
    b = _long_batch(5, 20)
    out = mlm_mask(b, 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(out.input_ids, b.input_ids)
    assert np.all(out.mlm_targets == -1)


def test_mask_rate_one_masks_every_real_token():
    b = encode_batch(["harika film", "kötü"], tiny_vocab(), 8)
    out = mlm_mask(b, 1.0, np.random.default_rng(0))
    real = (b.attention_mask == 1) & (b.input_ids >= len(SPECIAL_TOKENS))
    assert np.all(out.input_ids[real] == MASK_ID)
    np.testing.assert_array_equal(out.mlm_targets[real], b.input_ids[real])
    np.testing.assert_array_equal(out.input_ids[~real], b.input_ids[~real])


def test_mask_fraction_over_ten_thousand_positions():
    b = _long_batch(100, 102)
    eligible = (b.attention_mask == 1) & (b.input_ids >= len(SPECIAL_TOKENS))
    assert eligible.sum() == 10_000
    out = mlm_mask(b, 0.15, np.random.default_rng(2024))
    frac = (out.mlm_targets >= 0).sum() / eligible.sum()
    assert abs(frac - 0.15) <= 0.01


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), rate=st.floats(0, 1))
def test_mask_never_selects_special_positions(seed, rate):
    b = encode_batch(["harika bir film", ("kötü", "film ."), ""], tiny_vocab(), 10)
    out = mlm_mask(b, rate, np.random.default_rng(seed))
    special = np.isin(b.input_ids, [PAD_ID, CLS_ID, SEP_ID])
    assert np.all(out.mlm_targets[special] == -1)
    assert np.all(out.input_ids[special] == b.input_ids[special])


def test_nsp_pairs_reproducible():
    s = ["bir", "iki", "üç"]
    assert make_nsp_pairs(s, np.random.default_rng(5)) == make_nsp_pairs(s, np.random.default_rng(5))
    with pytest.raises(CorpusTooSmall):
        make_nsp_pairs(s[:2], np.random.default_rng(0))


def test_nsp_positive_rate_and_negatives():
    s = [f"cümle {i}" for i in range(1001)]
    pairs = make_nsp_pairs(s, np.random.default_rng(7))
    assert len(pairs) == 1000
    assert abs(np.mean([p[2] for p in pairs]) - 0.5) <= 0.05
    index = {t: i for i, t in enumerate(s)}
    for a, b, label in pairs:
        assert (index[b] == index[a] + 1) == (label == 1)


def _pretrain_setup():
    sentences = toy_sentences(20)
    vocab = train_wordpiece(sentences, 200)
    cfg = TransformerConfig(vocab_size=len(vocab), max_positions=64, n_layers=1, hidden_size=32,
                            n_heads=4, seed=0)
    return sentences, vocab, TransformerModel(cfg)


def test_pretrain_zero_steps_keeps_parameters():
    sentences, vocab, model = _pretrain_setup()
    before = {k: v.copy() for k, v in model.params.items()}
    _, losses = pretrain(model, vocab, sentences, 0, StlrSchedule(0.01, 10))
    assert losses == []
    for k in before:
        np.testing.assert_array_equal(model.params[k], before[k])


def test_pretrain_reduces_joint_loss():
    sentences, vocab, model = _pretrain_setup()
    rng = np.random.default_rng(99)
    probe = make_pretraining_batch(make_nsp_pairs(sentences, rng), vocab, 64, 0.15, rng)
    start, _ = loss_and_grads(model, probe, "pretrain", need_grads=False)
    _, losses = pretrain(model, vocab, sentences, 200, StlrSchedule(0.01, 200))
    end, _ = loss_and_grads(model, probe, "pretrain", need_grads=False)
    assert len(losses) == 200
    assert end < start
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


# ---------------------------------------------------------------- analogy

def _analogy_model(table, tokens):
    vocab = WordPieceVocab(list(SPECIAL_TOKENS) + tokens)
    cfg = TransformerConfig(vocab_size=len(vocab), max_positions=4, n_layers=1, hidden_size=table.shape[1],
                            n_heads=1)
    m = TransformerModel(cfg)
    m.params["tok_emb"][...] = table
    return m, vocab


def test_constructed_analogy_identity():
    tokens = ["aile", "cocuklar", "ebeveyn", "film"]
    table = np.zeros((9, 4))
    table[5:] = [[1.0, 1.0, 0, 0], [0, 1.0, 0, 0], [1.0, 0, 0, 0], [0, 0, 1.0, 0]]
    m, vocab = _analogy_model(table, tokens)
    assert embedding_analogy(m, vocab, ["aile"], ["cocuklar"]) == "ebeveyn"


def test_self_similarity():
    rng = np.random.default_rng(0)
    m, vocab = _analogy_model(rng.normal(size=(9, 4)), ["a", "b", "c", "d"])
    assert embedding_analogy(m, vocab, ["c"]) == "c"
    assert embedding_analogy(m, vocab, ["c"], exclude=["c"]) != "c"
    with pytest.raises(UnknownToken):
        embedding_analogy(m, vocab, ["zzz"])


def test_analogy_matches_exhaustive_scan():
    rng = np.random.default_rng(3)
    tokens = [f"t{i}" for i in range(15)]
    table = rng.normal(size=(20, 6))
    m, vocab = _analogy_model(table, tokens)
    for _ in range(10):
        a, b, c = rng.choice(tokens, 3, replace=False)
        q = table[vocab.id(a)] + table[vocab.id(b)] - table[vocab.id(c)]
        best, best_sim = None, -np.inf
        for i, tok in enumerate(vocab.tokens):
            if tok in (a, b, c):
                continue
            sim = table[i] @ q / (np.linalg.norm(table[i]) * np.linalg.norm(q))
            if sim > best_sim:
                best, best_sim = tok, sim
        assert embedding_analogy(m, vocab, [a, b], [c], exclude=[a, b, c]) == best
