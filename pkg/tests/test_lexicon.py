import math

import pytest
from hypothesis import given, settings, strategies as st

from textclf.corpus import Document, accuracy
from textclf.errors import LexiconMalformedRow, PolarityOutOfRange
from textclf.fixtures import lexicon_labeled_corpus
from textclf.lexicon import (
    NEGATIVE,
    POSITIVE,
    PolarityLexicon,
    demo_lexicon,
    lexicon_classify,
    load_lexicon,
    parse_lexicon,
    polarity_score,
)

WORDS = ["harika", "berbat", "film", "güzel", "kötü", "oyuncu", "sahne"]


def test_parse_two_rows():
    lex = parse_lexicon("harika\t0.9\nberbat\t-0.8\n")
    assert lex.polarity == {"harika": 0.9, "berbat": -0.8}


def test_out_of_range():
    with pytest.raises(PolarityOutOfRange):
        parse_lexicon("x\t1.5\n")


def test_malformed_row_code():
    with pytest.raises(LexiconMalformedRow) as err:
        parse_lexicon("harika 0.9\n")
    assert err.value.code == "lexicon.MalformedRow"


def test_fifty_row_fixture_matches_reference(tmp_path):
    rows = [(f"kelime{i}", round(math.sin(i) * 0.99, 4)) for i in range(50)]
    p = tmp_path / "lex.tsv"
    p.write_text("".join(f"{t}\t{v}\n" for t, v in rows), encoding="utf-8")
    ref = {}
    for line in p.read_text(encoding="utf-8").split("\n"):
        if line:
            tok, val = line.split("\t")
            ref[tok] = float(val)
    assert load_lexicon(p).polarity == ref


def test_mean_with_unknown_token():
    lex = PolarityLexicon({"harika": 0.9})
    assert polarity_score("harika film", lex) == pytest.approx(0.45, abs=1e-15)
    assert polarity_score(Document(0, "harika film"), lex) == pytest.approx(0.45, abs=1e-15)


def test_empty_document_scores_zero():
    assert polarity_score("", demo_lexicon()) == 0.0


def test_ten_token_hand_mean():
    lex = PolarityLexicon({"a": 0.5, "b": -0.25, "c": 1.0})
    # 0.5 + 0.5 - 0.25 + 1.0 + 0 * 6 = 1.75
    assert polarity_score("a a b c x y z w v u", lex) == pytest.approx(0.175, abs=1e-15)


def test_classify_examples():
    lex = PolarityLexicon({"harika": 0.9})
    assert lexicon_classify("harika film", lex, threshold=0.0) == POSITIVE
    assert lexicon_classify("harika film", lex, threshold=0.45) == POSITIVE
    assert lexicon_classify("harika film", lex, threshold=0.46) == NEGATIVE


def test_lexicon_generated_labels_are_recovered():
    lex = demo_lexicon()
    c = lexicon_labeled_corpus(n=100, lexicon=lex)
    pred = [lexicon_classify(t, lex) for t in c.texts]
    names = [c.label_names[l] for l in c.labels]
    want = ["pos" if p == POSITIVE else "neg" for p in pred]
    assert accuracy(want, names) == 1.0


tokens = st.lists(st.sampled_from(WORDS), min_size=1, max_size=15)


@settings(max_examples=100, deadline=None)
@given(toks=tokens, data=st.data())
def test_permutation_invariance(toks, data):
    lex = demo_lexicon()
    perm = data.draw(st.permutations(toks))
    assert polarity_score(" ".join(perm), lex) == polarity_score(" ".join(toks), lex)


@settings(max_examples=100, deadline=None)
@given(toks=tokens)
def test_negation(toks):
    lex = demo_lexicon()
    text = " ".join(toks)
    assert polarity_score(text, lex.negated()) == -polarity_score(text, lex)


@settings(max_examples=100, deadline=None)
@given(toks=tokens, threshold=st.floats(-1, 1))
def test_classify_depends_only_on_comparison(toks, threshold):
    lex = demo_lexicon()
    text = " ".join(toks)
    assert lexicon_classify(text, lex, threshold) == (
        POSITIVE if polarity_score(text, lex) >= threshold else NEGATIVE
    )
