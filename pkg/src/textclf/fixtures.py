"""Seeded synthetic datasets used by the tests, the acceptance suite and ``textclf fixtures``."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import LabeledCorpus, write_corpus
from .lexicon import PolarityLexicon, lexicon_classify, demo_lexicon

FILLER = (
    "film oyuncu sahne senaryo yönetmen müzik karakter hikaye final başlangıç "
    "salon bilet izledim gördüm dün akşam sinema kamera ışık diyalog"
).split()
POSITIVE_WORDS = ("harika", "mükemmel", "güzel", "başarılı", "eğlenceli")
NEGATIVE_WORDS = ("berbat", "kötü", "sıkıcı", "rezalet", "zayıf")


def blobs(n: int = 20, seed: int = 0, margin: float = 1.0):
    """Two Gaussian blobs with labels 0/1 and a gap of at least ``margin`` along x."""
    rng = np.random.default_rng(seed)
    half = n // 2
    pts = rng.normal(0.0, 0.5, size=(n, 2))
    pts[:, 0] = np.clip(pts[:, 0], -1.0, 1.0)
    pts[:half, 0] -= 1.0 + margin / 2
    pts[half:, 0] += 1.0 + margin / 2
    y = np.r_[np.zeros(half, dtype=int), np.ones(n - half, dtype=int)]
    return pts, y


def circles(n: int = 50, seed: int = 0, inner: float = 1.0, outer: float = 3.0):
    rng = np.random.default_rng(seed)
    half = n // 2
    radius = np.r_[np.full(half, inner), np.full(n - half, outer)]
    theta = rng.uniform(0.0, 2 * np.pi, n)
    pts = np.c_[radius * np.cos(theta), radius * np.sin(theta)]
    y = np.r_[np.zeros(half, dtype=int), np.ones(n - half, dtype=int)]
    return pts, y


def moons(n: int = 200, seed: int = 0, noise: float = 0.15):
    """Two interleaving half circles."""
    rng = np.random.default_rng(seed)
    half = n // 2
    t0 = rng.uniform(0.0, np.pi, half)
    t1 = rng.uniform(0.0, np.pi, n - half)
    upper = np.c_[np.cos(t0), np.sin(t0)]
    lower = np.c_[1.0 - np.cos(t1), 0.5 - np.sin(t1)]
    pts = np.r_[upper, lower] + rng.normal(0.0, noise, (n, 2))
    y = np.r_[np.zeros(half, dtype=int), np.ones(n - half, dtype=int)]
    return pts, y


def points_to_corpus(pts: np.ndarray, y: np.ndarray, bins: int = 24,
                     label_names=("a", "b")) -> LabeledCorpus:
    """Render 2-D points as text with thermometer tokens (``x5`` means the x bin is >= 5).

    A count vectorizer then recovers threshold features, so tree and kernel
    models see the geometry through the ordinary text pipeline.
    """
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    binned = np.clip(((pts - lo) / (hi - lo + 1e-12) * bins).astype(int), 0, bins - 1)
    texts = [
        " ".join([f"x{k}" for k in range(1, bx + 1)] + [f"y{k}" for k in range(1, by + 1)] + ["nokta"])
        for bx, by in binned
    ]
    return LabeledCorpus.from_texts(texts, [label_names[k] for k in y], label_names)


def keyword_corpus(n: int = 200, seed: int = 0, length: int = 6) -> LabeledCorpus:
    """Filler-word reviews where a single sentiment word fixes the label."""
    rng = np.random.default_rng(seed)
    texts, labels = [], []
    for i in range(n):
        positive = i % 2 == 0
        words = list(rng.choice(FILLER, size=length))
        key = rng.choice(POSITIVE_WORDS if positive else NEGATIVE_WORDS)
        words.insert(int(rng.integers(length + 1)), str(key))
        texts.append(" ".join(words))
        labels.append("pos" if positive else "neg")
    return LabeledCorpus.from_texts(texts, labels, ("pos", "neg"))


def lexicon_labeled_corpus(n: int = 100, seed: int = 0, lexicon: PolarityLexicon | None = None) -> LabeledCorpus:
    """Random mixes of lexicon and filler words, labeled by the lexicon rule itself."""
    lexicon = lexicon or demo_lexicon()
    rng = np.random.default_rng(seed)
    vocab = sorted(lexicon.polarity) + list(FILLER)
    texts = [" ".join(rng.choice(vocab, size=int(rng.integers(3, 9)))) for _ in range(n)]
    labels = ["pos" if lexicon_classify(t, lexicon) == 0 else "neg" for t in texts]
    return LabeledCorpus.from_texts(texts, labels, ("pos", "neg"))


def toy_sentences(n: int = 20, seed: int = 0) -> list[str]:
    """A short, memorizable story for pretraining."""
    subjects = ["ali", "ayşe", "mehmet", "zeynep", "can"]
    verbs = ["izledi", "sevdi", "anlattı", "buldu"]
    objects = ["filmi", "kitabı", "şarkıyı", "oyunu", "resmi"]
    rng = np.random.default_rng(seed)
    return [
        f"{subjects[i % 5]} {objects[int(rng.integers(5))]} {verbs[i % 4]} ."
        for i in range(n)
    ]


def write_all(out_dir: str | Path) -> list[Path]:
    """Write every fixture into ``out_dir`` and return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, corpus):
        path = out / name
        write_corpus(corpus, path)
        written.append(path)

    emit("blobs.csv", points_to_corpus(*blobs()))
    emit("circles.csv", points_to_corpus(*circles()))
    emit("moons.csv", points_to_corpus(*moons()))
    emit("keyword.csv", keyword_corpus())
    emit("lexicon_labeled.csv", lexicon_labeled_corpus())
    sentences = out / "sentences.txt"
    sentences.write_text("".join(s + "\n" for s in toy_sentences()), encoding="utf-8")
    written.append(sentences)
    return written
