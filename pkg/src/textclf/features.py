"""Tokenization, vocabulary building, and count / TF-IDF featurization.

TF-IDF uses the smoothed inverse document frequency

    idf(t) = ln((1 + N) / (1 + df(t))) + 1

followed by L2 normalization of every non-empty row.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import LabeledCorpus
from .errors import DimensionMismatch, EmptyVocabulary, MissingFile

__all__ = [
    "TokenizerConfig",
    "Vocabulary",
    "SparseMatrix",
    "simple_lower",
    "tokenize",
    "load_stopwords",
    "builtin_stopwords",
    "build_vocabulary",
    "count_vectorize",
    "tfidf_transform",
]


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    stopwords: frozenset[str] = frozenset()
    min_token_len: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stopwords", frozenset(self.stopwords))
        if self.min_token_len < 1:
            raise ValueError("min_token_len must be >= 1")


def simple_lower(text: str) -> str:
    """Per-character lowercase using the one-to-one Unicode mapping.

    ``str.lower`` applies the full mapping, which turns Turkish dotted capital
    I into two code points; only the first of those is the simple mapping.
    """
    out = []
    for ch in text:
        low = ch.lower()
        out.append(low[0] if len(low) > 1 else low)
    return "".join(out)


def _is_boundary(ch: str) -> bool:
    return ch.isspace() or unicodedata.category(ch).startswith("P")


def tokenize(text: str, config: TokenizerConfig = TokenizerConfig()) -> list[str]:
    tokens = []
    current: list[str] = []
    for ch in text + " ":
        if _is_boundary(ch):
            if current:
                tokens.append("".join(current))
                current = []
        else:
            current.append(ch)
    if config.lowercase:
        tokens = [simple_lower(t) for t in tokens]
    return [
        t for t in tokens
        if len(t) >= config.min_token_len and t not in config.stopwords
    ]


def load_stopwords(path: str | Path) -> frozenset[str]:
    """One token per line; blank lines and ``#`` comments are ignored."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    words = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


def builtin_stopwords() -> frozenset[str]:
    """Small Turkish stop-word list shipped with the package."""
    with resources.as_file(resources.files("textclf") / "data" / "stopwords_tr.txt") as p:
        return load_stopwords(p)


@dataclass(frozen=True)
class Vocabulary:
    token_to_index: dict[str, int]
    document_frequency: np.ndarray
    n_documents: int
    tokens: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.tokens:
            ordered = sorted(self.token_to_index, key=self.token_to_index.__getitem__)
            object.__setattr__(self, "tokens", tuple(ordered))
        df = np.asarray(self.document_frequency, dtype=np.int64)
        df.setflags(write=False)
        object.__setattr__(self, "document_frequency", df)

    def __len__(self) -> int:
        return len(self.tokens)

    def idf(self) -> np.ndarray:
        return np.log((1.0 + self.n_documents) / (1.0 + self.document_frequency)) + 1.0


class SparseMatrix:
    """Row-compressed sparse matrix in canonical form.

    Column indices are strictly increasing within a row and no explicit
    zeros are stored.
    """

    __slots__ = ("n_rows", "n_cols", "indptr", "indices", "data")

    def __init__(self, n_rows: int, n_cols: int, indptr, indices, data):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        if self.indptr.shape != (self.n_rows + 1,) or self.indptr[0] != 0:
            raise ValueError("indptr must have n_rows + 1 entries starting at 0")
        if np.any(np.diff(self.indptr) < 0) or self.indptr[-1] != len(self.indices):
            raise ValueError("indptr must be non-decreasing and end at nnz")
        if len(self.indices) != len(self.data):
            raise ValueError("indices and data differ in length")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.n_cols):
            raise ValueError("column index out of range")
        if np.any(self.data == 0):
            raise ValueError("explicit zeros are not stored")
        for i in range(self.n_rows):
            cols = self.indices[self.indptr[i]:self.indptr[i + 1]]
            if np.any(np.diff(cols) <= 0):
                raise ValueError(f"row {i} column indices are not strictly increasing")
        for arr in (self.indptr, self.indices, self.data):
            arr.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.data)

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        dense = np.atleast_2d(np.asarray(dense, dtype=np.float64))
        rows, cols = np.nonzero(dense)
        indptr = np.zeros(dense.shape[0] + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return cls(dense.shape[0], dense.shape[1], np.cumsum(indptr), cols, dense[rows, cols])

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m, dtype=np.float64, copy=True)
        m.eliminate_zeros()
        m.sort_indices()
        m.sum_duplicates()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for i in range(self.n_rows):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            out[i, self.indices[lo:hi]] = self.data[lo:hi]
        return out

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def take_rows(self, rows: Sequence[int]) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy()[np.asarray(rows, dtype=np.int64)])

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self) -> str:
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def _texts(docs) -> list[str]:
    if isinstance(docs, LabeledCorpus):
        return docs.texts
    return [d if isinstance(d, str) else d.text for d in docs]


def build_vocabulary(corpus, config: TokenizerConfig = TokenizerConfig()) -> Vocabulary:
    """Index every surviving token in first-appearance order and count document frequency."""
    texts = _texts(corpus)
    index: dict[str, int] = {}
    df: list[int] = []
    for text in texts:
        for tok in dict.fromkeys(tokenize(text, config)):
            if tok not in index:
                index[tok] = len(df)
                df.append(0)
            df[index[tok]] += 1
    if not index:
        raise EmptyVocabulary("no token survived filtering")
    return Vocabulary(index, np.array(df, dtype=np.int64), len(texts))


def count_vectorize(docs, vocab: Vocabulary, config: TokenizerConfig = TokenizerConfig()) -> SparseMatrix:
    texts = _texts(docs)
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for text in texts:
        counts: dict[int, int] = {}
        for tok in tokenize(text, config):
            j = vocab.token_to_index.get(tok)
            if j is not None:
                counts[j] = counts.get(j, 0) + 1
        for j in sorted(counts):
            indices.append(j)
            data.append(float(counts[j]))
        indptr.append(len(indices))
    return SparseMatrix(len(texts), len(vocab), indptr, indices, data)


def tfidf_transform(counts: SparseMatrix, vocab: Vocabulary) -> SparseMatrix:
    if counts.n_cols != len(vocab):
        raise DimensionMismatch(f"{counts.n_cols} count columns for a vocabulary of {len(vocab)}")
    values = counts.data * vocab.idf()[counts.indices]
    out = np.empty_like(values)
    for i in range(counts.n_rows):
        lo, hi = counts.indptr[i], counts.indptr[i + 1]
        if hi > lo:
            row = values[lo:hi]
            out[lo:hi] = row / math.sqrt(float(np.dot(row, row)))
    return SparseMatrix(counts.n_rows, counts.n_cols, counts.indptr, counts.indices, out)
