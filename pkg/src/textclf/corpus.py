"""Dataset ingestion, label encoding, deterministic splitting and accuracy."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    EmptyCorpus,
    EmptyInput,
    LengthMismatch,
    MalformedRow,
    MissingFile,
    UnlabeledDocument,
)

__all__ = [
    "Document",
    "LabeledCorpus",
    "SplitSpec",
    "load_corpus",
    "write_corpus",
    "split",
    "split_indices",
    "accuracy",
]


@dataclass(frozen=True)
class Document:
    id: int
    text: str
    label: Optional[int] = None


@dataclass(frozen=True)
class LabeledCorpus:
    documents: tuple[Document, ...]
    label_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        object.__setattr__(self, "label_names", tuple(self.label_names))
        for i, doc in enumerate(self.documents):
            if doc.id != i:
                raise ValueError(f"document ids must be dense from 0, got {doc.id} at {i}")
            if doc.label is not None and not 0 <= doc.label < len(self.label_names):
                raise ValueError(f"label {doc.label} of document {i} has no name")

    @classmethod
    def from_texts(
        cls,
        texts: Iterable[str],
        labels: Optional[Iterable[Optional[str]]] = None,
        label_names: Sequence[str] = (),
    ) -> "LabeledCorpus":
        """Build a corpus from raw strings, encoding label names by first appearance.

        ``label_names`` seeds the encoding, so a corpus can be expressed in the
        label space of a trained model.
        """
        texts = list(texts)
        names = list(label_names)
        index = {name: i for i, name in enumerate(names)}
        codes: list[Optional[int]] = []
        for name in (labels if labels is not None else [None] * len(texts)):
            if name is None:
                codes.append(None)
                continue
            if name not in index:
                index[name] = len(names)
                names.append(name)
            codes.append(index[name])
        if len(codes) != len(texts):
            raise LengthMismatch(f"{len(texts)} texts but {len(codes)} labels")
        docs = tuple(Document(i, t, c) for i, (t, c) in enumerate(zip(texts, codes)))
        return cls(docs, tuple(names))

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def texts(self) -> list[str]:
        return [d.text for d in self.documents]

    @property
    def labels(self) -> list[Optional[int]]:
        return [d.label for d in self.documents]

    @property
    def is_labeled(self) -> bool:
        return all(d.label is not None for d in self.documents)

    def subset(self, indices: Sequence[int]) -> "LabeledCorpus":
        docs = tuple(
            Document(new, self.documents[old].text, self.documents[old].label)
            for new, old in enumerate(indices)
        )
        return LabeledCorpus(docs, self.label_names)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _decode(raw: bytes) -> str:
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        line = raw[: exc.start].count(b"\n") + 1
        raise MalformedRow(line, "invalid UTF-8") from None


def load_corpus(path: str | Path, format: str = "csv_text_label") -> LabeledCorpus:
    """Read an RFC 4180 CSV with header ``text,label`` (or ``text`` alone).

    Label names are encoded in order of first appearance. An empty label
    field leaves that document unlabeled.
    """
    if format != "csv_text_label":
        raise ValueError(f"unsupported corpus format {format!r}")
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    text = _decode(path.read_bytes())

    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyCorpus(str(path)) from None
    except csv.Error as exc:
        raise MalformedRow(1, str(exc)) from None
    header = [h.strip() for h in header]
    if header not in (["text", "label"], ["text"]):
        raise MalformedRow(1, f"expected header 'text,label' or 'text', got {header!r}")
    labeled = len(header) == 2

    texts: list[str] = []
    labels: list[Optional[str]] = []
    while True:
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            raise MalformedRow(reader.line_num, str(exc)) from None
        if not row:
            continue
        if len(row) != len(header):
            raise MalformedRow(reader.line_num, f"expected {len(header)} fields, got {len(row)}")
        texts.append(row[0])
        labels.append(row[1] if labeled and row[1] != "" else None)

    if not texts:
        raise EmptyCorpus(str(path))
    return LabeledCorpus.from_texts(texts, labels)


def write_corpus(corpus: LabeledCorpus, path: str | Path) -> None:
    labeled = any(d.label is not None for d in corpus.documents)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["text", "label"] if labeled else ["text"])
        for doc in corpus.documents:
            if labeled:
                name = "" if doc.label is None else corpus.label_names[doc.label]
                writer.writerow([doc.text, name])
            else:
                writer.writerow([doc.text])


def split_indices(corpus: LabeledCorpus, spec: SplitSpec) -> tuple[list[int], list[int]]:
    """Return (train, validation) document indices, each in ascending order.

    Each stratum contributes floor(train_fraction * n_k) documents; the few
    slots left until the global floor(train_fraction * n) are handed to
    strata picked by the seeded generator.
    """
    n = len(corpus)
    rng = np.random.default_rng(spec.seed)
    target = math.floor(spec.train_fraction * n)

    if not spec.stratified:
        order = rng.permutation(n)
        return sorted(order[:target].tolist()), sorted(order[target:].tolist())

    strata: dict[int, list[int]] = {}
    for doc in corpus.documents:
        if doc.label is None:
            raise UnlabeledDocument(f"document {doc.id} has no label")
        strata.setdefault(doc.label, []).append(doc.id)

    labels = sorted(strata)
    shuffled = {k: rng.permutation(strata[k]).tolist() for k in labels}
    take = {k: math.floor(spec.train_fraction * len(strata[k])) for k in labels}
    extra = target - sum(take.values())
    candidates = [k for k in labels if take[k] < spec.train_fraction * len(strata[k])]
    for k in rng.permutation(candidates).tolist()[:extra] if candidates else []:
        take[k] += 1

    train: list[int] = []
    val: list[int] = []
    for k in labels:
        train.extend(shuffled[k][: take[k]])
        val.extend(shuffled[k][take[k]:])
    return sorted(train), sorted(val)


def split(corpus: LabeledCorpus, spec: SplitSpec) -> tuple[LabeledCorpus, LabeledCorpus]:
    train, val = split_indices(corpus, spec)
    return corpus.subset(train), corpus.subset(val)


def accuracy(predicted: Sequence[int], actual: Sequence[int]) -> float:
    if len(predicted) != len(actual):
        raise LengthMismatch(f"{len(predicted)} predictions for {len(actual)} labels")
    if len(predicted) == 0:
        raise EmptyInput("accuracy of an empty list")
    hits = sum(1 for p, a in zip(predicted, actual) if p == a)
    return hits / len(predicted)
