"""Polarity-lexicon baseline: score a document by the mean polarity of its tokens."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .corpus import Document
from .errors import LexiconMalformedRow, MissingFile, PolarityOutOfRange
from .features import TokenizerConfig, tokenize

POSITIVE = 0
NEGATIVE = 1


@dataclass(frozen=True)
class PolarityLexicon:
    polarity: dict[str, float] = field(default_factory=dict)
    default_polarity: float = 0.0

    def __post_init__(self):
        for tok, value in self.polarity.items():
            if not -1.0 <= value <= 1.0:
                raise ValueError(f"polarity of {tok!r} outside [-1, 1]")

    def __len__(self) -> int:
        return len(self.polarity)

    def negated(self) -> "PolarityLexicon":
        return PolarityLexicon({t: -v for t, v in self.polarity.items()}, -self.default_polarity)


def parse_lexicon(text: str) -> PolarityLexicon:
    polarity: dict[str, float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\r").split("\t")
        if len(parts) != 2 or not parts[0]:
            raise LexiconMalformedRow(lineno, "expected token<TAB>polarity")
        try:
            value = float(parts[1])
        except ValueError:
            raise LexiconMalformedRow(lineno, f"polarity {parts[1]!r} is not a number") from None
        if not math.isfinite(value) or not -1.0 <= value <= 1.0:
            raise PolarityOutOfRange(lineno, value)
        polarity[parts[0]] = value
    return PolarityLexicon(polarity)


def load_lexicon(path: str | Path) -> PolarityLexicon:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise LexiconMalformedRow(0, "invalid UTF-8") from None
    return parse_lexicon(text)


def demo_lexicon() -> PolarityLexicon:
    with resources.as_file(resources.files("textclf") / "data" / "demo_lexicon.tsv") as p:
        return load_lexicon(p)


def _text(doc) -> str:
    return doc.text if isinstance(doc, Document) else doc


def polarity_score(doc, lex: PolarityLexicon, config: TokenizerConfig = TokenizerConfig()) -> float:
    tokens = tokenize(_text(doc), config)
    if not tokens:
        return 0.0
    return math.fsum(lex.polarity.get(t, lex.default_polarity) for t in tokens) / len(tokens)


def lexicon_classify(
    doc,
    lex: PolarityLexicon,
    threshold: float = 0.0,
    config: TokenizerConfig = TokenizerConfig(),
) -> int:
    """Return POSITIVE (0) when the score reaches the threshold, else NEGATIVE (1)."""
    return POSITIVE if polarity_score(doc, lex, config) >= threshold else NEGATIVE
