"""Acceptance criteria 1-8, each checked at its stated tolerance and time budget.

Run under pytest (``pytest tests/test_acceptance.py -s`` shows the summary
lines) or directly with ``python tests/test_acceptance.py``.
"""

import contextlib
import io
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from test_features import _dense_tfidf  # noqa: E402
from test_gbdt import _exhaustive_tree, _walk  # noqa: E402
from test_transformer import _finite_difference_check, _long_batch, _pretrain_setup  # noqa: E402
from tiny_model import sample_texts, tiny_model, tiny_vocab  # noqa: E402

from textclf import artifact as af
from textclf.cli import main
from textclf.corpus import LabeledCorpus, SplitSpec, split, write_corpus
from textclf.features import SparseMatrix, build_vocabulary, count_vectorize, tfidf_transform
from textclf.fixtures import blobs, circles, keyword_corpus, moons, write_all
from textclf.gbdt import GbdtParams, build_tree, gbdt_predict, predict_margin, train_gbdt
from textclf.schedule import (
    DiscriminativePlan,
    FinetunePlan,
    StlrSchedule,
    UnfreezePlan,
    discriminative_lrs,
    finetune,
    stlr_lr,
    unfreeze_mask,
)
from textclf.svm import SvmParams, kkt_violation, svm_predict, train_binary_svm, train_svm
from textclf.transformer import (
    TransformerConfig,
    TransformerModel,
    encode_batch,
    make_nsp_pairs,
    mlm_mask,
    pretrain,
    train_wordpiece,
)
from textclf.transformer.model import attention_weights, forward, loss_and_grads, softmax
from textclf.transformer.pretraining import make_pretraining_batch

# toy fine-tuning set-up: momentum SGD from scratch needs a far larger step than 4e-5
TOY_PEAK_LR = 0.1
TOY_EPOCHS_PER_STAGE = 4


class Check:
    def __init__(self):
        self.failures = []

    def __call__(self, ok, what):
        if not ok:
            self.failures.append(what)


def report(number, title, check, elapsed, budget):
    if elapsed >= budget:
        check.failures.append(f"took {elapsed:.1f}s, budget {budget}s")
    status = "PASS" if not check.failures else "FAIL"
    detail = "; ".join(check.failures) if check.failures else f"{elapsed:.2f}s of {budget}s"
    print(f"criterion {number} {status}: {title} ({detail})")
    return not check.failures


# ---------------------------------------------------------------- criteria

def criterion_1():
    check, start = Check(), time.perf_counter()
    rng = np.random.default_rng(2024)
    words = [f"w{i}" for i in range(25)]
    docs = [" ".join(rng.choice(words, size=int(rng.integers(1, 15)))) for _ in range(20)]
    vocab = build_vocabulary(docs)
    got = tfidf_transform(count_vectorize(docs, vocab), vocab).to_dense()
    tokens, want = _dense_tfidf(docs)
    got = got[:, [vocab.token_to_index[t] for t in tokens]]
    check(np.max(np.abs(got - want)) <= 1e-9, f"max deviation {np.max(np.abs(got - want)):.2e}")
    return report(1, "TF-IDF equals dense oracle within 1e-9", check, time.perf_counter() - start, 1)


def criterion_2():
    check, start = Check(), time.perf_counter()
    rng = np.random.default_rng(0)
    overlap = rng.normal(size=(40, 3))
    datasets = [blobs(20, seed=1), circles(50, seed=2),
                (overlap, (overlap[:, 0] + 0.8 * rng.normal(size=40) > 0).astype(int))]
    params = SvmParams()
    for k, (pts, y) in enumerate(datasets):
        x = SparseMatrix.from_dense(pts)
        pm = np.where(y == 0, 1, -1)
        m = train_binary_svm(x, pm, params)
        kkt = kkt_violation(m, x, pm, params.c)
        check(m.converged and kkt <= params.tolerance, f"dataset {k} KKT residual {kkt:.2e}")
        check(abs(m.dual_coefficients.sum()) <= 1e-8, f"dataset {k} sum(alpha y) {m.dual_coefficients.sum():.2e}")
    pts, y = blobs(20)
    x = SparseMatrix.from_dense(pts)
    acc = np.mean(np.array(svm_predict(train_svm(x, y), x)) == y)
    check(acc == 1.0, f"blobs accuracy {acc}")
    pts, y = circles(50)
    x = SparseMatrix.from_dense(pts)
    acc = np.mean(np.array(svm_predict(train_svm(x, y, SvmParams(gamma="scale")), x)) == y)
    check(acc >= 0.95, f"circles accuracy {acc}")
    return report(2, "SVM KKT, equality constraint, blobs 100%, circles >= 95%", check,
                  time.perf_counter() - start, 10)


def criterion_3():
    check, start = Check(), time.perf_counter()
    pts, y = moons(200)
    model = train_gbdt(pts, y, GbdtParams())
    worst = max(abs(predict_margin(model, row[None]) -
                    (model.base_score + sum(model.learning_rate * _walk(t, row) for t in model.trees)))
                for row in pts)
    check(worst <= 1e-9, f"additivity deviation {worst:.2e}")
    acc = np.mean(np.array(gbdt_predict(model, pts)) == y)
    check(acc >= 0.95, f"moons training accuracy {acc}")
    for seed in range(3):
        r = np.random.default_rng(seed)
        x = r.normal(size=(30, 3))
        target = (x[:, 0] * x[:, 1] + 0.3 * x[:, 2] > 0).astype(float)
        p = np.full(30, target.mean())
        g, h = p - target, p * (1 - p)
        tp = GbdtParams(max_depth=4, min_child_weight=0.5, gamma=0.0)
        tree = build_tree(x, g, h, params=tp)
        ref = []
        _exhaustive_tree(x, g, h, list(range(30)), 0, tp, ref)
        same = (tree.feature.tolist() == [n["feature"] for n in ref]
                and np.allclose(tree.threshold, [n["threshold"] for n in ref], rtol=0, atol=1e-15)
                and np.allclose(tree.value, [n["value"] for n in ref], rtol=1e-12, atol=1e-15))
        check(same, f"greedy tree differs from exhaustive search (seed {seed})")
    return report(3, "GBDT additivity, exhaustive-tree equality, moons >= 95%", check,
                  time.perf_counter() - start, 30)


def criterion_4():
    check, start = Check(), time.perf_counter()
    rng = np.random.default_rng(4)
    x = rng.normal(scale=20, size=(50, 9))
    check(np.max(np.abs(softmax(x).sum(axis=1) - 1)) <= 1e-6, "softmax rows")
    w = attention_weights(rng.normal(size=(3, 7, 4)), rng.normal(size=(3, 9, 4)))
    check(np.all(w >= 0) and np.max(np.abs(w.sum(axis=-1) - 1)) <= 1e-6, "attention rows")
    vocab = tiny_vocab()
    m = tiny_model(vocab, n_layers=2)
    batch = encode_batch(sample_texts(), vocab, 10)
    diff = np.max(np.abs(forward(m, batch).class_probs - forward(m, batch.padded_to(15)).class_probs))
    check(diff <= 1e-6, f"padding changed outputs by {diff:.2e}")
    m = tiny_model(vocab, n_layers=1, hidden=8, heads=2, max_positions=10)
    ref = encode_batch(sample_texts()[:3], vocab, 10, labels=[0, 1, 0])
    worst = _finite_difference_check(m, ref, "classify")
    check(max(worst.values()) < 1e-3, f"gradient relative error {max(worst.values()):.2e}")
    return report(4, "transformer softmax, attention, padding, gradient check", check,
                  time.perf_counter() - start, 60)


def criterion_5():
    check, start = Check(), time.perf_counter()
    b = _long_batch(100, 102)
    eligible = (b.attention_mask == 1) & (b.input_ids >= 5)
    frac = (mlm_mask(b, 0.15, np.random.default_rng(11)).mlm_targets >= 0).sum() / eligible.sum()
    check(eligible.sum() == 10_000, "expected 10,000 maskable positions")
    check(abs(frac - 0.15) <= 0.01, f"mask fraction {frac:.4f}")
    pairs = make_nsp_pairs([f"cümle {i}" for i in range(1001)], np.random.default_rng(12))
    rate = np.mean([p[2] for p in pairs])
    check(len(pairs) == 1000 and abs(rate - 0.5) <= 0.05, f"NSP positive rate {rate:.3f}")
    sentences, vocab, model = _pretrain_setup()
    r = np.random.default_rng(99)
    probe = make_pretraining_batch(make_nsp_pairs(sentences, r), vocab, 64, 0.15, r)
    before, _ = loss_and_grads(model, probe, "pretrain", need_grads=False)
    pretrain(model, vocab, sentences, 200, StlrSchedule(0.01, 200))
    after, _ = loss_and_grads(model, probe, "pretrain", need_grads=False)
    check(after < before, f"joint loss {before:.3f} -> {after:.3f}")
    return report(5, "MLM rate, NSP balance, joint loss decreases", check, time.perf_counter() - start, 120)


def criterion_6():
    check, start = Check(), time.perf_counter()
    s = StlrSchedule(4e-5, 100)
    lrs = np.array([stlr_lr(s, t) for t in range(101)])
    check(np.flatnonzero(lrs == lrs.max()).tolist() == [s.cut] and lrs.max() == 4e-5, "unique peak 4e-5 at cut")
    check(abs(lrs[0] - 1.25e-6) < 1e-18 and abs(lrs[100] - 1.25e-6) < 1e-18, "floor 1.25e-6 at endpoints")
    check(np.all(np.diff(lrs[:11]) > 0) and np.all(np.diff(lrs[10:]) < 0), "monotone sides")
    check(np.allclose(np.diff(np.diff(lrs[:11])), 0, atol=1e-18)
          and np.allclose(np.diff(np.diff(lrs[10:])), 0, atol=1e-18), "piecewise linear")
    d = discriminative_lrs(DiscriminativePlan(4e-5, 6))
    check(all(abs(b / a - 2.6) <= 1e-12 for a, b in zip(d, d[1:])), "discriminative ratio")
    plan = UnfreezePlan(4)
    masks = [unfreeze_mask(plan, k) for k in plan.stages]
    check(masks[0] == [False] * 4 + [True] and masks[2] == [False, False, True, True, True], "mask order")
    check(all(all(b for a, b in zip(x, y) if a) for x, y in zip(masks, masks[1:])), "masks monotone")
    vocab = tiny_vocab()
    m = tiny_model(vocab, n_layers=2)
    corpus = LabeledCorpus.from_texts(sample_texts() * 2, ["p", "n", "p", "n"] * 2)
    fplan = FinetunePlan.for_model(m, len(corpus), peak_lr=0.05, batch_size=2, cut_frac=0.2)
    before = {k: v.copy() for k, v in m.params.items()}
    finetune(m, vocab, corpus, fplan, max_len=10, stages=[1])
    frozen = {"embeddings", "layer_0", "pretrain_heads"}
    check(all(np.array_equal(m.params[k], before[k]) for k in m.params if m.group_of(k) in frozen),
          "frozen parameters changed")
    return report(6, "STLR shape, discriminative ratio, unfreezing", check, time.perf_counter() - start, 1)


def _train(out, model, data, *extra):
    return main(["train", "--model", model, "--data", str(data), "-o", str(out), *map(str, extra)])


TRANSFORMER_FLAGS = ("--set", f"transformer.lr={TOY_PEAK_LR}",
                     "--set", f"transformer.epochs_per_stage={TOY_EPOCHS_PER_STAGE}")


def criterion_7(workdir: Path):
    check, start = Check(), time.perf_counter()
    corpus = keyword_corpus(200)
    vocab = train_wordpiece(corpus.texts, 2000)
    model = TransformerModel(TransformerConfig.preset("desk", len(vocab)))
    plan = FinetunePlan.for_model(model, len(corpus), peak_lr=TOY_PEAK_LR,
                                  epochs_per_stage=TOY_EPOCHS_PER_STAGE)
    result = finetune(model, vocab, corpus, plan)
    acc = result.epochs[-1]["train_acc"]
    check(acc >= 0.95, f"final training accuracy {acc:.3f}")

    write_all(workdir)
    data = workdir / "keyword.csv"
    held_out = workdir / "keyword_val.csv"
    write_corpus(split(keyword_corpus(200), SplitSpec())[1], held_out)
    paths = []
    for family, extra in [("lexicon", ()), ("svm", ()), ("gbdt", ()), ("transformer", TRANSFORMER_FLAGS)]:
        path = workdir / f"{family}.model"
        check(_train(path, family, data, *extra) == 0, f"train {family}")
        paths.append(str(path))
    tables = []
    for _ in range(2):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            check(main(["report", *paths, "--data", str(held_out)]) == 0, "report")
        tables.append(buf.getvalue())
    lines = tables[0].splitlines()[2:]
    accs = [float(line.rsplit("|", 1)[1]) for line in lines]
    names = {line.split("|")[0].strip() for line in lines}
    check(len(lines) == 4 and accs == sorted(accs), "leaderboard not ascending")
    check(names == {"Polarity Lexicon", "Support Vector Machine", "Extreme Gradient Boosting", "BERT"},
          f"leaderboard rows {sorted(names)}")
    check(tables[0] == tables[1], "report not reproducible")
    print(tables[0], end="")
    return report(7, "toy fine-tuning >= 95% and ascending leaderboard", check, time.perf_counter() - start, 300)


def criterion_8(workdir: Path):
    check, start = Check(), time.perf_counter()
    write_all(workdir)
    runs = [
        ("lexicon", "lexicon_labeled.csv", ()),
        ("svm", "keyword.csv", ()),
        ("svm", "circles.csv", ("--features", "count")),
        ("gbdt", "moons.csv", ()),
        ("transformer", "keyword.csv", TRANSFORMER_FLAGS),
    ]
    for family, data, extra in runs:
        blobs_ = []
        for k in range(2):
            out = workdir / f"{family}-{k}.model"
            with contextlib.redirect_stdout(io.StringIO()):
                check(_train(out, family, workdir / data, *extra) == 0, f"train {family}")
            blobs_.append(out.read_bytes())
        check(blobs_[0] == blobs_[1], f"{family} on {data} not byte-identical")
        check(af.dumps(af.loads(blobs_[0])) == blobs_[0], f"{family} save-load-save differs")
    return report(8, "train is byte-deterministic", check, time.perf_counter() - start, 300)


# ---------------------------------------------------------------- pytest entry points

@pytest.mark.parametrize("number", [1, 2, 3, 4, 5, 6])
def test_criterion(number, capsys):
    with capsys.disabled():
        print()
        ok = globals()[f"criterion_{number}"]()
    assert ok


@pytest.mark.parametrize("number", [7, 8])
def test_criterion_with_files(number, capsys, tmp_path):
    with capsys.disabled():
        print()
        ok = globals()[f"criterion_{number}"](tmp_path)
    assert ok


if __name__ == "__main__":
    import tempfile

    results = [globals()[f"criterion_{n}"]() for n in range(1, 7)]
    for n in (7, 8):
        with tempfile.TemporaryDirectory() as d:
            results.append(globals()[f"criterion_{n}"](Path(d)))
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
