"""WordPiece vocabulary training, segmentation, and sequence encoding."""

from __future__ import annotations

import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import MissingFile
from ..features import simple_lower

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
SPECIAL_TOKENS = (PAD, CLS, SEP, MASK, UNK)
PAD_ID, CLS_ID, SEP_ID, MASK_ID, UNK_ID = range(5)
MAX_WORD_CHARS = 100


def basic_tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and isolate punctuation characters."""
    words: list[str] = []
    current: list[str] = []
    for ch in simple_lower(text):
        if ch.isspace():
            if current:
                words.append("".join(current))
                current = []
        elif unicodedata.category(ch).startswith("P"):
            if current:
                words.append("".join(current))
                current = []
            words.append(ch)
        else:
            current.append(ch)
    if current:
        words.append("".join(current))
    return words


class WordPieceVocab:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:5]) != SPECIAL_TOKENS:
            raise ValueError(f"first five tokens must be {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate vocabulary entries")
        self.tokens = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, WordPieceVocab) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def segment_word(self, word: str) -> list[str]:
        """Greedy longest-match-first; a word with no full cover becomes [UNK]."""
        if len(word) > MAX_WORD_CHARS:
            return [UNK]
        pieces = []
        start = 0
        while start < len(word):
            end = len(word)
            piece = None
            while start < end:
                sub = word[start:end] if start == 0 else "##" + word[start:end]
                if sub in self.token_to_id:
                    piece = sub
                    break
                end -= 1
            if piece is None:
                return [UNK]
            pieces.append(piece)
            start = end
        return pieces

    def tokenize(self, text: str) -> list[str]:
        return [p for w in basic_tokenize(text) for p in self.segment_word(w)]

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id[p] for p in self.tokenize(text)]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "WordPieceVocab":
        path = Path(path)
        if not path.is_file():
            raise MissingFile(str(path))
        return cls(path.read_text(encoding="utf-8").splitlines())


def train_wordpiece(texts: Iterable[str], vocab_size: int = 2000) -> WordPieceVocab:
    """Learn a vocabulary by repeatedly merging the most frequent adjacent pair.

    Starts from the character alphabet (word-initial and ``##``-continuation
    forms). Ties go to the lexicographically smallest pair.
    """
    word_counts = Counter(w for text in texts for w in basic_tokenize(text))
    words = sorted(word_counts)
    splits = {w: [w[0]] + ["##" + c for c in w[1:]] for w in words}
    alphabet = sorted({p for s in splits.values() for p in s})
    tokens = list(SPECIAL_TOKENS) + [t for t in alphabet if t not in SPECIAL_TOKENS]
    seen = set(tokens)

    pair_counts: Counter = Counter()
    pair_words: dict[tuple[str, str], set[str]] = defaultdict(set)
    for w in words:
        s = splits[w]
        for pair in zip(s, s[1:]):
            pair_counts[pair] += word_counts[w]
            pair_words[pair].add(w)

    while len(tokens) < vocab_size and pair_counts:
        top = max(pair_counts.values())
        a, b = min(p for p, c in pair_counts.items() if c == top)
        merged = a + b[2:]
        if merged not in seen:
            tokens.append(merged)
            seen.add(merged)
        for w in sorted(pair_words.pop((a, b), ())):
            s = splits[w]
            for pair in zip(s, s[1:]):
                pair_counts[pair] -= word_counts[w]
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
            out = []
            i = 0
            while i < len(s):
                if i + 1 < len(s) and s[i] == a and s[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(s[i])
                    i += 1
            splits[w] = out
            for pair in zip(out, out[1:]):
                pair_counts[pair] += word_counts[w]
                pair_words[pair].add(w)
        pair_counts.pop((a, b), None)
    return WordPieceVocab(tokens)


@dataclass
class BatchEncoding:
    """Integer arrays of shape (batch, seq)."""

    input_ids: np.ndarray
    attention_mask: np.ndarray
    segment_ids: np.ndarray
    mlm_targets: Optional[np.ndarray] = None
    nsp_labels: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.input_ids = np.atleast_2d(np.asarray(self.input_ids, dtype=np.int64))
        self.attention_mask = np.atleast_2d(np.asarray(self.attention_mask, dtype=np.int64))
        self.segment_ids = np.atleast_2d(np.asarray(self.segment_ids, dtype=np.int64))
        if self.mlm_targets is not None:
            self.mlm_targets = np.atleast_2d(np.asarray(self.mlm_targets, dtype=np.int64))
        if self.nsp_labels is not None:
            self.nsp_labels = np.atleast_1d(np.asarray(self.nsp_labels, dtype=np.int64))
        if self.labels is not None:
            self.labels = np.atleast_1d(np.asarray(self.labels, dtype=np.int64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.input_ids.shape

    def __len__(self) -> int:
        return self.input_ids.shape[0]

    def with_labels(self, labels) -> "BatchEncoding":
        return replace(self, labels=np.atleast_1d(np.asarray(labels, dtype=np.int64)))

    def trimmed(self) -> "BatchEncoding":
        """Drop trailing columns that are padding in every row."""
        real = self.attention_mask.any(axis=0)
        width = int(np.flatnonzero(real).max()) + 1 if real.any() else 1

        def cut(a):
            return None if a is None else a[:, :width]

        return BatchEncoding(
            cut(self.input_ids), cut(self.attention_mask), cut(self.segment_ids),
            cut(self.mlm_targets), self.nsp_labels, self.labels,
        )

    def padded_to(self, width: int) -> "BatchEncoding":
        extra = width - self.shape[1]
        if extra < 0:
            raise ValueError("cannot pad to a shorter width")

        def pad(a, fill):
            return None if a is None else np.pad(a, ((0, 0), (0, extra)), constant_values=fill)

        return BatchEncoding(
            pad(self.input_ids, PAD_ID), pad(self.attention_mask, 0), pad(self.segment_ids, 0),
            pad(self.mlm_targets, -1), self.nsp_labels, self.labels,
        )


def stack(rows: Sequence[BatchEncoding]) -> BatchEncoding:
    def cat(name):
        parts = [getattr(r, name) for r in rows]
        if any(p is None for p in parts):
            return None
        return np.concatenate(parts, axis=0)

    return BatchEncoding(
        cat("input_ids"), cat("attention_mask"), cat("segment_ids"),
        cat("mlm_targets"), cat("nsp_labels"), cat("labels"),
    )


def _truncate_pair(a: list[int], b: list[int], budget: int) -> None:
    while len(a) + len(b) > budget:
        if len(a) >= len(b):
            a.pop()
        else:
            b.pop()


def encode_sequence(
    text: str | tuple[str, str] | list[str],
    vocab: WordPieceVocab,
    max_len: int,
    max_positions: int = 512,
) -> BatchEncoding:
    """Encode one text (or a pair) as ``[CLS] a [SEP] (b [SEP])`` padded to max_len."""
    if max_len > max_positions:
        raise ValueError(f"max_len {max_len} exceeds the {max_positions}-position limit")
    pair = not isinstance(text, str)
    if pair:
        first, second = text
        if max_len < 3:
            raise ValueError("a pair needs max_len >= 3")
        a, b = vocab.encode(first), vocab.encode(second)
        _truncate_pair(a, b, max_len - 3)
        ids = [CLS_ID] + a + [SEP_ID] + b + [SEP_ID]
        seg = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    else:
        if max_len < 2:
            raise ValueError("max_len must be >= 2")
        a = vocab.encode(text)[: max_len - 2]
        ids = [CLS_ID] + a + [SEP_ID]
        seg = [0] * len(ids)
    n_pad = max_len - len(ids)
    return BatchEncoding(
        np.array([ids + [PAD_ID] * n_pad]),
        np.array([[1] * len(ids) + [0] * n_pad]),
        np.array([seg + [0] * n_pad]),
    )


def encode_batch(texts: Sequence, vocab: WordPieceVocab, max_len: int, labels=None) -> BatchEncoding:
    batch = stack([encode_sequence(t, vocab, max_len) for t in texts])
    if labels is not None:
        batch = batch.with_labels(labels)
    return batch
