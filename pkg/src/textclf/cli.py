"""Command line: train / eval / predict / pretrain / report / schedule-dump / fixtures.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import artifact as af
from . import fixtures
from .config import RunConfig, describe_keys
from .corpus import LabeledCorpus, SplitSpec, accuracy, load_corpus, split
from .errors import CONFIG_ERROR, ConfigInvalid, EmptyInput, MissingFile, TextClfError
from .families import (
    DISPLAY_NAMES,
    TransformerClassifier,
    encode_labels,
    fit_classifier,
    load_classifier,
    to_artifact,
)
from .schedule import FinetunePlan, StlrSchedule, lr_table
from .transformer import TransformerConfig, TransformerModel, pretrain, train_wordpiece


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def _config(args, require_model=True) -> RunConfig:
    return RunConfig.build(
        args.config, args.set or (), require_model=require_model,
        model=getattr(args, "model", None),
        features=getattr(args, "features", None),
        stopwords=getattr(args, "stopwords", None),
        seed=getattr(args, "seed", None),
    )


def _accuracy(clf, corpus: LabeledCorpus) -> float:
    if len(corpus) == 0:
        return float("nan")
    if not corpus.is_labeled:
        raise EmptyInput("evaluation data must be labeled")
    return accuracy(clf.predict(corpus.texts), encode_labels(clf, corpus))


def cmd_train(args) -> int:
    config = _config(args)
    corpus = load_corpus(args.data)
    spec = SplitSpec(config["train_fraction"], config["seed"], config["stratified"])
    train, val = split(corpus, spec)
    clf = fit_classifier(config, train)
    train_acc = _accuracy(clf, train)
    val_acc = _accuracy(clf, val)
    meta = {
        "config": config.snapshot(),
        "train_acc": train_acc if not math.isnan(train_acc) else None,
        "val_acc": val_acc if not math.isnan(val_acc) else None,
        "n_train": len(train),
        "n_val": len(val),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    af.save(to_artifact(clf, meta), out)
    print(f"train_acc={_fmt(train_acc)} val_acc={_fmt(val_acc)}")
    return 0


def cmd_eval(args) -> int:
    clf = load_classifier(af.load(args.artifact))
    corpus = load_corpus(args.data)
    print(f"accuracy={_fmt(_accuracy(clf, corpus))} n={len(corpus)}")
    return 0


def _read_inputs(args) -> list[str]:
    if args.input:
        return load_corpus(args.input).texts
    if args.text:
        return list(args.text)
    return [line.rstrip("\n") for line in sys.stdin]


def cmd_predict(args) -> int:
    clf = load_classifier(af.load(args.artifact))
    texts = _read_inputs(args)
    if not texts:
        return 0
    labels = clf.predict(texts)
    probs = clf.predict_proba(texts)
    for i, label in enumerate(labels):
        parts = [f"label={clf.label_names[label]}"]
        if probs is not None:
            parts.append(f"probability={probs[i, label]:.10g}")
            parts += [f"p_{name}={probs[i, k]:.10g}" for k, name in enumerate(clf.label_names)]
        print(" ".join(parts))
    return 0


def _read_sentences(path: str) -> list[str]:
    if path.endswith(".csv"):
        return load_corpus(path).texts
    p = Path(path)
    if not p.is_file():
        raise MissingFile(path)
    return [line.strip() for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def cmd_pretrain(args) -> int:
    config = _config(args, require_model=False)
    sentences = _read_sentences(args.data)
    vocab = train_wordpiece(sentences, config["transformer.vocab_size"])
    tcfg = TransformerConfig(
        vocab_size=len(vocab), max_positions=512,
        n_layers=config["transformer.n_layers"], hidden_size=config["transformer.hidden_size"],
        n_heads=config["transformer.n_heads"], ffn_size=config["transformer.ffn_size"] or None,
        mask_rate=config["transformer.mask_rate"], seed=config["seed"],
        init_std=config["transformer.init_std"],
    )
    model = TransformerModel(tcfg)
    steps = config["pretrain.steps"]
    schedule = StlrSchedule(config["pretrain.lr"], max(steps, 1),
                            config["transformer.cut_frac"], config["transformer.ratio"])
    model, losses = pretrain(
        model, vocab, sentences, steps, schedule,
        batch_size=config["pretrain.batch_size"], max_len=config["pretrain.max_len"],
        momentum=config["transformer.momentum"], seed=config["seed"],
    )
    clf = TransformerClassifier(("label_0", "label_1"), vocab, model, config["transformer.max_len"])
    head = float(np.mean(losses[:10])) if losses else float("nan")
    tail = float(np.mean(losses[-10:])) if losses else float("nan")
    meta = {"config": config.snapshot(), "kind": "pretrained", "steps": steps,
            "initial_loss": None if math.isnan(head) else head,
            "final_loss": None if math.isnan(tail) else tail}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    af.save(to_artifact(clf, meta), out)
    print(f"initial_loss={_fmt(head)} final_loss={_fmt(tail)} steps={steps}")
    return 0


def render_report(rows: Sequence[tuple[str, float]]) -> str:
    """Two-column leaderboard, ascending by accuracy (ties by name)."""
    rows = sorted(rows, key=lambda r: (r[1], r[0]))
    header = ("Model Name", "Validation Accuracy(Percentage)")
    width = max([len(header[0])] + [len(name) for name, _ in rows])
    lines = [f"{header[0]:<{width}} | {header[1]}", f"{'-' * width}-+-{'-' * len(header[1])}"]
    lines += [f"{name:<{width}} | {100 * acc:.1f}" for name, acc in rows]
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    corpus = load_corpus(args.data)
    rows = []
    for path in args.artifacts:
        clf = load_classifier(af.load(path))
        rows.append((DISPLAY_NAMES[clf.family], _accuracy(clf, corpus)))
    sys.stdout.write(render_report(rows))
    return 0


def cmd_schedule_dump(args) -> int:
    config = _config(args, require_model=False)
    if args.n_train is not None:
        n_train = args.n_train
    elif args.data:
        corpus = load_corpus(args.data)
        train, _ = split(corpus, SplitSpec(config["train_fraction"], config["seed"], config["stratified"]))
        n_train = len(train)
    else:
        raise ConfigInvalid("schedule-dump needs --n-train or --data")
    # only the group layout matters here, so a tiny vocabulary suffices
    shape = TransformerConfig(vocab_size=8, max_positions=1, n_layers=config["transformer.n_layers"],
                              hidden_size=config["transformer.n_heads"], n_heads=config["transformer.n_heads"],
                              ffn_size=1)
    model = TransformerModel(shape)
    groups = model.layer_groups
    plan = FinetunePlan.for_model(
        model, n_train,
        peak_lr=config["transformer.lr"], batch_size=config["transformer.batch_size"],
        epochs_per_stage=config["transformer.epochs_per_stage"], cut_frac=config["transformer.cut_frac"],
        ratio=config["transformer.ratio"], decay_factor=config["transformer.decay_factor"],
    )
    out = ["step,group,lr"]
    out += [f"{t},{groups[g]},{lr!r}" for t, g, lr in lr_table(plan)]
    sys.stdout.write("\n".join(out) + "\n")
    return 0


def cmd_fixtures(args) -> int:
    for path in fixtures.write_all(args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        "textclf", description=__doc__,
        epilog="config keys:\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("-c", "--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int)
        return p

    p = with_config(sub.add_parser("train", help="train a model and write a model file"))
    p.add_argument("--data", required=True, help="CSV with header text,label")
    p.add_argument("--model", choices=("lexicon", "svm", "gbdt", "transformer"))
    p.add_argument("--features", choices=("count", "tfidf"))
    p.add_argument("--stopwords", help="auto | builtin | none | path")
    p.add_argument("-o", "--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a model file on labeled data")
    p.add_argument("artifact")
    p.add_argument("data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="label texts given as arguments, a CSV, or stdin lines")
    p.add_argument("artifact")
    p.add_argument("text", nargs="*")
    p.add_argument("--input", help="CSV with a text column")
    p.set_defaults(func=cmd_predict)

    p = with_config(sub.add_parser("pretrain", help="masked-token + next-sentence pretraining"))
    p.add_argument("--data", required=True, help="one sentence per line (or a CSV with text)")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("report", help="leaderboard of model files on one dataset")
    p.add_argument("artifacts", nargs="+")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_report)

    p = with_config(sub.add_parser("schedule-dump", help="per-step, per-group learning rates as CSV"))
    p.add_argument("--n-train", type=int)
    p.add_argument("--data")
    p.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("fixtures", help="write the synthetic datasets")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            status = args.func(args)
        for w in caught:
            print(f"warning: {getattr(w.category, 'code', w.category.__name__)}: {w.message}",
                  file=sys.stderr)
        return status
    except TextClfError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: cli.ConfigInvalid: {exc}", file=sys.stderr)
        return CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
