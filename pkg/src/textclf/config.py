"""Run configuration: flat ``key=value`` files with command-line overrides.

Defaults mirror the hyperparameters reported for each model family where
those exist (SVM: C=1, RBF, "scale" gamma, cache 200; boosting: subsample
0.9, column sample 0.7, gamma 0.1, depth 6, min child weight 1, eta 0.3;
fine-tuning: batch 16, sequence length 500, rate 4e-5, decay 2.6).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from .errors import ConfigInvalid, MissingFile

FAMILIES = ("lexicon", "svm", "gbdt", "transformer")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"{text!r} not in {options}")
        return text
    return parse


def _gamma(text: str):
    return "scale" if text == "scale" else float(text)


# key -> (parser, default, description)
KEYS: dict[str, tuple[Any, Any, str]] = {
    "model": (_choice(*FAMILIES), None, "model family"),
    "features": (_choice("count", "tfidf"), "tfidf", "classical-model features"),
    "stopwords": (str, "auto", "auto | builtin | none | path to a stop-word file"),
    "train_fraction": (float, 0.9, "share of documents used for training"),
    "seed": (int, 0, "seed for splitting, sampling and initialization"),
    "stratified": (_bool, True, "stratify the split by label"),
    "min_token_len": (int, 1, "shortest token kept by the tokenizer"),
    "svm.c": (float, 1.0, "regularization parameter"),
    "svm.kernel": (_choice("rbf", "linear"), "rbf", "kernel"),
    "svm.gamma": (_gamma, "scale", "'scale' or a positive kernel coefficient"),
    "svm.tolerance": (float, 1e-3, "KKT stopping tolerance"),
    "svm.max_passes": (int, 1000, "iteration cap, in multiples of the row count"),
    "svm.cache_mb": (int, 200, "kernel row cache size in MB"),
    "gbdt.n_rounds": (int, 100, "boosting rounds"),
    "gbdt.learning_rate": (float, 0.3, "shrinkage"),
    "gbdt.max_depth": (int, 6, "maximum tree depth"),
    "gbdt.min_child_weight": (float, 1.0, "minimum hessian sum per child"),
    "gbdt.gamma": (float, 0.1, "minimum loss reduction"),
    "gbdt.subsample": (float, 0.9, "row sampling rate per tree"),
    "gbdt.colsample_bytree": (float, 0.7, "column sampling rate per tree"),
    "gbdt.reg_lambda": (float, 1.0, "L2 leaf regularization"),
    "lexicon.path": (str, "builtin", "builtin | path to a token<TAB>polarity file"),
    "lexicon.threshold": (float, 0.0, "score at or above which a document is positive"),
    "lexicon.positive_label": (str, "", "label name for positive documents; empty means the first label"),
    "lexicon.negative_label": (str, "", "label name for negative documents; empty means the second label"),
    "transformer.preset": (_choice("desk", "bert-base"), "desk", "architecture preset"),
    "transformer.n_layers": (int, 2, "encoder layers"),
    "transformer.hidden_size": (int, 64, "hidden width"),
    "transformer.n_heads": (int, 4, "attention heads"),
    "transformer.ffn_size": (int, 0, "feed-forward width (0 = 4 x hidden)"),
    "transformer.init_std": (float, 0.3, "initialization standard deviation"),
    "transformer.max_len": (int, 500, "maximum sequence length (hard cap 512)"),
    "transformer.vocab_size": (int, 2000, "wordpiece vocabulary size"),
    "transformer.batch_size": (int, 16, "fine-tuning batch size"),
    "transformer.lr": (float, 4e-5, "peak learning rate of the top group"),
    "transformer.cut_frac": (float, 0.1, "share of steps spent warming up"),
    "transformer.ratio": (float, 32.0, "peak / floor learning-rate ratio"),
    "transformer.decay_factor": (float, 2.6, "learning-rate ratio between adjacent groups"),
    "transformer.epochs_per_stage": (int, 1, "epochs per unfreezing stage"),
    "transformer.momentum": (float, 0.9, "SGD momentum"),
    "transformer.mask_rate": (float, 0.15, "masked-token selection rate"),
    "transformer.init": (str, "", "pretrained model file to start from"),
    "pretrain.steps": (int, 200, "pretraining updates"),
    "pretrain.lr": (float, 0.01, "pretraining peak learning rate"),
    "pretrain.batch_size": (int, 16, "pretraining batch size"),
    "pretrain.max_len": (int, 64, "pretraining pair length"),
}

PRESETS = {
    "bert-base": {
        "transformer.n_layers": 12,
        "transformer.hidden_size": 768,
        "transformer.n_heads": 12,
        "transformer.init_std": 0.02,
    },
}


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def model(self) -> str:
        return self.values["model"]

    def snapshot(self) -> dict[str, Any]:
        return dict(sorted(self.values.items()))

    @classmethod
    def build(
        cls,
        config_file: Optional[str | Path] = None,
        overrides: Iterable[str] = (),
        require_model: bool = True,
        **flags,
    ) -> "RunConfig":
        """Merge defaults, then the config file, then ``key=value`` overrides, then flags."""
        raw: dict[str, str] = {}
        if config_file:
            path = Path(config_file)
            if not path.is_file():
                raise MissingFile(str(path))
            for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ConfigInvalid(f"{path}:{lineno}: expected key=value")
                raw[key.strip()] = value.strip()
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigInvalid(f"override {item!r} is not key=value")
            raw[key.strip()] = value.strip()
        for key, value in flags.items():
            if value is not None:
                raw[key.replace("__", ".")] = str(value)

        values = {}
        for key, text in raw.items():
            if key not in KEYS:
                raise ConfigInvalid(f"unknown config key {key!r}")
            try:
                values[key] = KEYS[key][0](text)
            except ValueError as exc:
                raise ConfigInvalid(f"{key}: {exc}") from None
        preset = PRESETS.get(values.get("transformer.preset", "desk"), {})
        for key, (_, default, _) in KEYS.items():
            values.setdefault(key, preset.get(key, default))
        if require_model and values["model"] is None:
            raise ConfigInvalid("no model family given (model=lexicon|svm|gbdt|transformer)")
        if not 0.0 < values["train_fraction"] < 1.0:
            raise ConfigInvalid("train_fraction must lie strictly between 0 and 1")
        if not 0 <= values["seed"] < 2**64:
            raise ConfigInvalid("seed must be a 64-bit unsigned integer")
        if values["transformer.max_len"] > 512:
            raise ConfigInvalid("transformer.max_len is capped at 512 positions")
        return cls(values)


def describe_keys() -> str:
    width = max(len(k) for k in KEYS)
    return "\n".join(
        f"  {k:<{width}}  {d}  (default: {default})" for k, (_, default, d) in KEYS.items()
    )
