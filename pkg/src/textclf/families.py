"""Trainable text classifiers for each model family, and their persistence."""

from __future__ import annotations

import math

from dataclasses import asdict
from typing import Optional, Sequence

import numpy as np

from . import artifact as af
from .config import RunConfig
from .corpus import LabeledCorpus
from .errors import (
    ConfigInvalid,
    GbdtSingleClassInput,
    SingleClassInput,
    UnsupportedLabels,
)
from .features import (
    SparseMatrix,
    TokenizerConfig,
    Vocabulary,
    build_vocabulary,
    builtin_stopwords,
    count_vectorize,
    load_stopwords,
    tfidf_transform,
)
from .gbdt import GbdtEnsemble, GbdtParams, Tree, predict_proba as gbdt_proba, train_gbdt
from .lexicon import NEGATIVE, POSITIVE, PolarityLexicon, demo_lexicon, lexicon_classify, load_lexicon
from .schedule import FinetunePlan, finetune
from .svm import BinarySvm, SvmModel, SvmParams, svm_predict, train_svm
from .transformer import (
    TransformerConfig,
    TransformerModel,
    WordPieceVocab,
    basic_tokenize,
    encode_batch,
    predict_proba as transformer_proba,
    train_wordpiece,
)

DISPLAY_NAMES = {
    "lexicon": "Polarity Lexicon",
    "svm": "Support Vector Machine",
    "gbdt": "Extreme Gradient Boosting",
    "transformer": "BERT",
}


def resolve_stopwords(config: RunConfig) -> frozenset[str]:
    choice = config["stopwords"]
    if choice == "auto":
        choice = "builtin" if config.model in ("svm", "gbdt") else "none"
    if choice == "none":
        return frozenset()
    if choice == "builtin":
        return builtin_stopwords()
    return load_stopwords(choice)


def _tokenizer_json(cfg: TokenizerConfig) -> dict:
    return {"lowercase": cfg.lowercase, "min_token_len": cfg.min_token_len,
            "stopwords": sorted(cfg.stopwords)}


def _tokenizer_from(d: dict) -> TokenizerConfig:
    return TokenizerConfig(d["lowercase"], frozenset(d["stopwords"]), d["min_token_len"])


class Featurizer:
    """Tokenizer + vocabulary + count or TF-IDF weighting."""

    def __init__(self, tokenizer: TokenizerConfig, vocab: Vocabulary, mode: str):
        self.tokenizer = tokenizer
        self.vocab = vocab
        self.mode = mode

    @classmethod
    def fit(cls, texts: Sequence[str], tokenizer: TokenizerConfig, mode: str) -> "Featurizer":
        return cls(tokenizer, build_vocabulary(texts, tokenizer), mode)

    def transform(self, texts: Sequence[str]) -> SparseMatrix:
        counts = count_vectorize(texts, self.vocab, self.tokenizer)
        return tfidf_transform(counts, self.vocab) if self.mode == "tfidf" else counts

    def to_sections(self) -> dict[str, bytes]:
        return {
            "tokenizer.json": af.json_bytes(_tokenizer_json(self.tokenizer)),
            "vocabulary.json": af.json_bytes({
                "mode": self.mode,
                "tokens": list(self.vocab.tokens),
                "document_frequency": self.vocab.document_frequency.tolist(),
                "n_documents": self.vocab.n_documents,
            }),
        }

    @classmethod
    def from_sections(cls, sections: dict[str, bytes]) -> "Featurizer":
        tok = _tokenizer_from(af.read_json(sections["tokenizer.json"]))
        v = af.read_json(sections["vocabulary.json"])
        vocab = Vocabulary({t: i for i, t in enumerate(v["tokens"])},
                           np.array(v["document_frequency"], dtype=np.int64), v["n_documents"])
        return cls(tok, vocab, v["mode"])


class Classifier:
    family = ""

    def __init__(self, label_names: Sequence[str]):
        self.label_names = tuple(label_names)

    def predict(self, texts: Sequence[str]) -> list[int]:
        raise NotImplementedError

    def predict_proba(self, texts: Sequence[str]) -> Optional[np.ndarray]:
        return None

    def to_sections(self) -> dict[str, bytes]:
        raise NotImplementedError


class LexiconClassifier(Classifier):
    family = "lexicon"

    def __init__(self, label_names, lexicon: PolarityLexicon, threshold: float,
                 tokenizer: TokenizerConfig, positive: int, negative: int):
        super().__init__(label_names)
        self.lexicon = lexicon
        self.threshold = threshold
        self.tokenizer = tokenizer
        self.codes = {POSITIVE: positive, NEGATIVE: negative}

    @classmethod
    def fit(cls, corpus: LabeledCorpus, config: RunConfig) -> "LexiconClassifier":
        names = list(corpus.label_names)
        if len(names) < 2:
            raise SingleClassInput("the lexicon model maps scores onto two labels")

        def code(key: str, fallback: int) -> int:
            wanted = config[key]
            if not wanted:
                return fallback
            if wanted not in names:
                raise ConfigInvalid(f"{key}={wanted!r} is not a label of the corpus")
            return names.index(wanted)

        path = config["lexicon.path"]
        lex = demo_lexicon() if path == "builtin" else load_lexicon(path)
        tokenizer = TokenizerConfig(True, resolve_stopwords(config), config["min_token_len"])
        return cls(names, lex, config["lexicon.threshold"], tokenizer,
                   code("lexicon.positive_label", 0), code("lexicon.negative_label", 1))

    def predict(self, texts):
        return [self.codes[lexicon_classify(t, self.lexicon, self.threshold, self.tokenizer)]
                for t in texts]

    def to_sections(self):
        return {
            "tokenizer.json": af.json_bytes(_tokenizer_json(self.tokenizer)),
            "lexicon.json": af.json_bytes({
                "polarity": self.lexicon.polarity,
                "default_polarity": self.lexicon.default_polarity,
                "threshold": self.threshold,
                "positive": self.codes[POSITIVE],
                "negative": self.codes[NEGATIVE],
            }),
        }

    @classmethod
    def from_sections(cls, label_names, sections):
        d = af.read_json(sections["lexicon.json"])
        lex = PolarityLexicon(d["polarity"], d["default_polarity"])
        tok = _tokenizer_from(af.read_json(sections["tokenizer.json"]))
        return cls(label_names, lex, d["threshold"], tok, d["positive"], d["negative"])


def _csr_json(m: SparseMatrix) -> dict:
    return {"n_rows": m.n_rows, "n_cols": m.n_cols, "indptr": m.indptr.tolist(),
            "indices": m.indices.tolist(), "data": m.data.tolist()}


def _csr_from(d: dict) -> SparseMatrix:
    return SparseMatrix(d["n_rows"], d["n_cols"], d["indptr"], d["indices"], d["data"])


class SvmClassifier(Classifier):
    family = "svm"

    def __init__(self, label_names, featurizer: Featurizer, model: SvmModel):
        super().__init__(label_names)
        self.featurizer = featurizer
        self.model = model

    @classmethod
    def fit(cls, corpus: LabeledCorpus, config: RunConfig) -> "SvmClassifier":
        tokenizer = TokenizerConfig(True, resolve_stopwords(config), config["min_token_len"])
        feat = Featurizer.fit(corpus.texts, tokenizer, config["features"])
        params = SvmParams(config["svm.c"], config["svm.kernel"], config["svm.gamma"],
                           config["svm.tolerance"], config["svm.max_passes"], config["svm.cache_mb"])
        model = train_svm(feat.transform(corpus.texts), corpus.labels, params)
        return cls(corpus.label_names, feat, model)

    def predict(self, texts):
        return svm_predict(self.model, self.featurizer.transform(texts))

    def to_sections(self):
        m = self.model
        p = m.params
        payload = {
            "params": {"c": p.c, "kernel": p.kernel, "gamma": p.gamma, "tolerance": p.tolerance,
                       "max_passes": p.max_passes, "cache_mb": p.cache_mb},
            "classes": m.classes,
            "n_features": m.n_features,
            "models": [
                {
                    "bias": b.bias, "gamma_value": b.gamma_value, "kernel": b.kernel,
                    "converged": b.converged, "n_iterations": b.n_iterations,
                    "support_indices": b.support_indices.tolist(),
                    "dual_coefficients": b.dual_coefficients.tolist(),
                    "support_vectors": _csr_json(b.support_vectors),
                }
                for b in m.binary_models
            ],
        }
        return {**self.featurizer.to_sections(), "svm.json": af.json_bytes(payload)}

    @classmethod
    def from_sections(cls, label_names, sections):
        d = af.read_json(sections["svm.json"])
        models = [
            BinarySvm(_csr_from(b["support_vectors"]), np.array(b["dual_coefficients"], dtype=np.float64),
                      b["bias"], b["gamma_value"], b["kernel"],
                      np.array(b["support_indices"], dtype=np.int64), b["converged"], b["n_iterations"])
            for b in d["models"]
        ]
        model = SvmModel(d["classes"], models, d["n_features"], SvmParams(**d["params"]))
        return cls(label_names, Featurizer.from_sections(sections), model)


class GbdtClassifier(Classifier):
    family = "gbdt"

    def __init__(self, label_names, featurizer: Featurizer, model: GbdtEnsemble, params: GbdtParams):
        super().__init__(label_names)
        self.featurizer = featurizer
        self.model = model
        self.params = params

    @classmethod
    def fit(cls, corpus: LabeledCorpus, config: RunConfig) -> "GbdtClassifier":
        if len(corpus.label_names) > 2:
            raise UnsupportedLabels("boosting supports two labels only")
        labels = corpus.labels
        if len(set(labels)) < 2:
            raise GbdtSingleClassInput("both classes must be present")
        tokenizer = TokenizerConfig(True, resolve_stopwords(config), config["min_token_len"])
        feat = Featurizer.fit(corpus.texts, tokenizer, config["features"])
        params = GbdtParams(
            config["gbdt.n_rounds"], config["gbdt.learning_rate"], config["gbdt.max_depth"],
            config["gbdt.min_child_weight"], config["gbdt.gamma"], config["gbdt.subsample"],
            config["gbdt.colsample_bytree"], config["gbdt.reg_lambda"], config["seed"],
        )
        model = train_gbdt(feat.transform(corpus.texts), labels, params)
        return cls(corpus.label_names, feat, model, params)

    def _positive_proba(self, texts) -> np.ndarray:
        # A document with no known token carries no evidence and is scored by
        # the prior alone; trees would otherwise route it down the all-zero path.
        x = self.featurizer.transform(texts)
        p1 = gbdt_proba(self.model, x)
        empty = np.diff(x.indptr) == 0
        p1[empty] = 1.0 / (1.0 + math.exp(-self.model.base_score))
        return p1

    def predict_proba(self, texts):
        p1 = self._positive_proba(texts)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, texts):
        return [int(p >= 0.5) for p in self._positive_proba(texts)]

    def to_sections(self):
        m = self.model
        payload = {
            "params": asdict(self.params),
            "base_score": m.base_score,
            "learning_rate": m.learning_rate,
            "n_features": m.n_features,
            "trees": [t.to_dict() for t in m.trees],
        }
        return {**self.featurizer.to_sections(), "gbdt.json": af.json_bytes(payload)}

    @classmethod
    def from_sections(cls, label_names, sections):
        d = af.read_json(sections["gbdt.json"])
        model = GbdtEnsemble([Tree.from_dict(t) for t in d["trees"]], d["base_score"],
                             d["learning_rate"], d["n_features"])
        return cls(label_names, Featurizer.from_sections(sections), model, GbdtParams(**d["params"]))


class TransformerClassifier(Classifier):
    family = "transformer"

    def __init__(self, label_names, vocab: WordPieceVocab, model: TransformerModel,
                 max_len: int, stopwords: frozenset[str] = frozenset(), history=None):
        super().__init__(label_names)
        self.vocab = vocab
        self.model = model
        self.max_len = max_len
        self.stopwords = frozenset(stopwords)
        self.history = history or []

    def _prepare(self, texts):
        return _strip_stopwords(texts, self.stopwords)

    @classmethod
    def fit(cls, corpus: LabeledCorpus, config: RunConfig) -> "TransformerClassifier":
        stopwords = resolve_stopwords(config)
        n_classes = max(2, len(corpus.label_names))
        init = config["transformer.init"]
        texts = _strip_stopwords(corpus.texts, stopwords)
        if init:
            pre = load_classifier(af.load(init))
            if not isinstance(pre, TransformerClassifier):
                raise ConfigInvalid(f"{init} is not a transformer model file")
            vocab = pre.vocab
            model = _with_classes(pre.model, n_classes, config["seed"])
        else:
            vocab = train_wordpiece(texts, config["transformer.vocab_size"])
            tcfg = TransformerConfig(
                vocab_size=len(vocab),
                max_positions=512,
                n_layers=config["transformer.n_layers"],
                hidden_size=config["transformer.hidden_size"],
                n_heads=config["transformer.n_heads"],
                ffn_size=config["transformer.ffn_size"] or None,
                n_classes=n_classes,
                mask_rate=config["transformer.mask_rate"],
                seed=config["seed"],
                init_std=config["transformer.init_std"],
            )
            model = TransformerModel(tcfg)
        plan = FinetunePlan.for_model(
            model, len(corpus),
            peak_lr=config["transformer.lr"],
            batch_size=config["transformer.batch_size"],
            epochs_per_stage=config["transformer.epochs_per_stage"],
            cut_frac=config["transformer.cut_frac"],
            ratio=config["transformer.ratio"],
            decay_factor=config["transformer.decay_factor"],
        )
        prepared = LabeledCorpus.from_texts(texts, [corpus.label_names[c] for c in corpus.labels],
                                            corpus.label_names)
        result = finetune(model, vocab, prepared, plan, max_len=config["transformer.max_len"],
                          momentum=config["transformer.momentum"], seed=config["seed"])
        return cls(corpus.label_names, vocab, model, config["transformer.max_len"], stopwords,
                   result.epochs)

    def predict_proba(self, texts):
        batch = encode_batch(self._prepare(texts), self.vocab, min(self.max_len, self.model.config.max_positions))
        return transformer_proba(self.model, batch)

    def predict(self, texts):
        return np.argmax(self.predict_proba(texts), axis=1).tolist()

    def to_sections(self):
        cfg = self.model.config
        sections = {
            "transformer.json": af.json_bytes({
                "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
                "max_len": self.max_len,
                "stopwords": sorted(self.stopwords),
                "history": self.history,
            }),
            "wordpiece.txt": "".join(t + "\n" for t in self.vocab.tokens).encode("utf-8"),
        }
        for name, arr in self.model.params.items():
            sections[f"param/{name}"] = af.array_bytes(arr)
        return sections

    @classmethod
    def from_sections(cls, label_names, sections):
        d = af.read_json(sections["transformer.json"])
        cfg = TransformerConfig(**d["config"])
        params = {k[len("param/"):]: af.read_array(v).astype(np.float64, copy=True)
                  for k, v in sections.items() if k.startswith("param/")}
        vocab = WordPieceVocab(sections["wordpiece.txt"].decode("utf-8").splitlines())
        return cls(label_names, vocab, TransformerModel(cfg, params), d["max_len"],
                   frozenset(d["stopwords"]), d["history"])


def _strip_stopwords(texts, stopwords) -> list[str]:
    if not stopwords:
        return list(texts)
    return [" ".join(w for w in basic_tokenize(t) if w not in stopwords) for t in texts]


def _with_classes(model: TransformerModel, n_classes: int, seed: int) -> TransformerModel:
    """Reuse a pretrained encoder, re-initializing the classifier head if its width differs."""
    model = model.copy()
    if model.config.n_classes == n_classes:
        return model
    cfg = model.config
    new_cfg = TransformerConfig(**{**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
                                   "n_classes": n_classes})
    rng = np.random.default_rng(seed)
    params = dict(model.params)
    params["cls.w"] = rng.normal(0.0, cfg.init_std, (cfg.hidden_size, n_classes))
    params["cls.b"] = np.zeros(n_classes)
    return TransformerModel(new_cfg, params)


FAMILY_CLASSES = {
    "lexicon": LexiconClassifier,
    "svm": SvmClassifier,
    "gbdt": GbdtClassifier,
    "transformer": TransformerClassifier,
}


def fit_classifier(config: RunConfig, corpus: LabeledCorpus) -> Classifier:
    return FAMILY_CLASSES[config.model].fit(corpus, config)


def to_artifact(clf: Classifier, metadata: dict) -> af.ModelArtifact:
    meta = {"label_names": list(clf.label_names), **metadata}
    return af.ModelArtifact(clf.family, meta, clf.to_sections())


def load_classifier(artifact: af.ModelArtifact) -> Classifier:
    cls = FAMILY_CLASSES.get(artifact.family)
    if cls is None:
        raise af.ArtifactCorrupt(f"unknown model family {artifact.family!r}")
    try:
        return cls.from_sections(artifact.metadata["label_names"], artifact.sections)
    except KeyError as exc:
        raise af.ArtifactCorrupt(f"missing section or field {exc}") from None


def encode_labels(clf: Classifier, corpus: LabeledCorpus) -> list[int]:
    """Corpus labels expressed in the classifier's label space (-1 for unseen names)."""
    index = {name: i for i, name in enumerate(clf.label_names)}
    return [index.get(corpus.label_names[d.label], -1) for d in corpus.documents]
