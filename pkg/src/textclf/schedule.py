"""Fine-tuning schedules: slanted triangular learning rates, discriminative
per-group rates, gradual unfreezing, and the loop that combines them.

The triangular shape (``cut_frac`` 0.1, ``ratio`` 32) follows the usual
ULMFiT defaults. The nominal rate of 4e-5 is taken as the peak of the
triangle for the topmost group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import LabeledCorpus, accuracy
from .errors import EmptyTrainingSet, StageOutOfRange, StepOutOfRange
from .transformer import (
    MomentumSGD,
    TransformerModel,
    WordPieceVocab,
    encode_batch,
    loss_and_grads,
    predict_proba,
)
from .transformer.tokenization import BatchEncoding


@dataclass(frozen=True)
class StlrSchedule:
    peak_lr: float = 4e-5
    total_steps: int = 100
    cut_frac: float = 0.1
    ratio: float = 32.0

    def __post_init__(self):
        if not self.peak_lr > 0 or self.total_steps < 1:
            raise ValueError("peak_lr and total_steps must be positive")
        if not 0 < self.cut_frac < 1 or not self.ratio > 1:
            raise ValueError("need 0 < cut_frac < 1 and ratio > 1")
        if self.cut < 1:
            raise ValueError(f"cut = floor({self.cut_frac} * {self.total_steps}) must be >= 1")

    @property
    def cut(self) -> int:
        return math.floor(self.cut_frac * self.total_steps)

    @property
    def floor_lr(self) -> float:
        return self.peak_lr / self.ratio

    def lr(self, step: int) -> float:
        return stlr_lr(self, step)


def stlr_lr(schedule: StlrSchedule, step: int) -> float:
    """Linear rise from peak/ratio to peak at the cut, then linear decay back."""
    t, cut, total = step, schedule.cut, schedule.total_steps
    if not 0 <= t <= total:
        raise StepOutOfRange(f"step {t} outside [0, {total}]")
    if t == cut:
        return schedule.peak_lr
    if t == 0 or t == total:
        return schedule.floor_lr
    frac = t / cut if t < cut else 1.0 - (t - cut) / (total - cut)
    return schedule.floor_lr + frac * (schedule.peak_lr - schedule.floor_lr)


@dataclass(frozen=True)
class DiscriminativePlan:
    last_layer_lr: float = 4e-5
    n_groups: int = 1
    decay_factor: float = 2.6

    def __post_init__(self):
        if not self.last_layer_lr > 0 or self.n_groups < 1 or not self.decay_factor > 1:
            raise ValueError("need a positive rate, n_groups >= 1 and decay_factor > 1")


def discriminative_lrs(plan: DiscriminativePlan) -> list[float]:
    """Per-group rates, earliest group first; each group gets its successor's rate / decay."""
    lrs = [plan.last_layer_lr]
    for _ in range(plan.n_groups - 1):
        lrs.append(lrs[-1] / plan.decay_factor)
    return lrs[::-1]


@dataclass(frozen=True)
class UnfreezePlan:
    n_groups: int = 1
    epochs_per_stage: int = 1

    def __post_init__(self):
        if self.n_groups < 1 or self.epochs_per_stage < 1:
            raise ValueError("n_groups and epochs_per_stage must be positive")

    @property
    def stages(self) -> range:
        return range(self.n_groups + 1)


def unfreeze_mask(plan: UnfreezePlan, stage: int) -> list[bool]:
    """Trainable flags for ``n_groups`` layer groups followed by the head.

    Stage 0 trains only the head; stage k adds the top k groups.
    """
    if not 0 <= stage <= plan.n_groups:
        raise StageOutOfRange(f"stage {stage} outside [0, {plan.n_groups}]")
    return [g >= plan.n_groups - stage for g in range(plan.n_groups)] + [True]


@dataclass(frozen=True)
class FinetunePlan:
    stlr: StlrSchedule
    discriminative: DiscriminativePlan
    unfreeze: UnfreezePlan
    batch_size: int = 16

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.discriminative.n_groups != self.unfreeze.n_groups + 1:
            raise ValueError("discriminative groups must be the unfreeze groups plus the head")
        if self.stlr.peak_lr != self.discriminative.last_layer_lr:
            raise ValueError("the triangle peak must equal the top group's rate")

    @classmethod
    def for_model(
        cls,
        model: TransformerModel,
        n_train: int,
        *,
        peak_lr: float = 4e-5,
        batch_size: int = 16,
        epochs_per_stage: int = 1,
        cut_frac: float = 0.1,
        ratio: float = 32.0,
        decay_factor: float = 2.6,
    ) -> "FinetunePlan":
        """Size every component for ``model`` and a training set of ``n_train`` documents."""
        n_groups = len(model.layer_groups) - 1
        steps_per_epoch = math.ceil(n_train / batch_size)
        total = (n_groups + 1) * epochs_per_stage * steps_per_epoch
        return cls(
            StlrSchedule(peak_lr, total, cut_frac, ratio),
            DiscriminativePlan(peak_lr, n_groups + 1, decay_factor),
            UnfreezePlan(n_groups, epochs_per_stage),
            batch_size,
        )

    @property
    def total_steps(self) -> int:
        return self.stlr.total_steps


def lr_table(plan: FinetunePlan) -> list[tuple[int, int, float]]:
    """(step, group, lr) for every step of the triangle and every group."""
    lrs = discriminative_lrs(plan.discriminative)
    top = plan.discriminative.last_layer_lr
    return [
        (t, g, stlr_lr(plan.stlr, t) * (lrs[g] / top))
        for t in range(plan.stlr.total_steps + 1)
        for g in range(len(lrs))
    ]


@dataclass
class FinetuneResult:
    model: TransformerModel
    epochs: list[dict] = field(default_factory=list)
    lr_trace: list[dict[str, float]] = field(default_factory=list)


def _accuracy_on(model: TransformerModel, batch: BatchEncoding) -> float:
    probs = predict_proba(model, batch)
    return accuracy(np.argmax(probs, axis=1).tolist(), batch.labels.tolist())


def finetune(
    model: TransformerModel,
    vocab: WordPieceVocab,
    train: LabeledCorpus,
    plan: FinetunePlan,
    *,
    max_len: int = 500,
    momentum: float = 0.9,
    seed: int = 0,
    validation: Optional[LabeledCorpus] = None,
    stages: Optional[list[int]] = None,
) -> FinetuneResult:
    """Gradually unfreeze ``model`` while training the sequence classifier.

    Stages run in order, ``epochs_per_stage`` epochs each. At triangle step t,
    group g moves with rate ``stlr_lr(t) * lrs[g] / lrs[-1]``; frozen groups
    are not touched at all. One triangle spans the whole run. Each epoch
    records training (and validation) accuracy.
    """
    if len(train) == 0:
        raise EmptyTrainingSet("no training documents")
    if not train.is_labeled:
        raise EmptyTrainingSet("training documents must all be labeled")
    groups = model.layer_groups
    if plan.unfreeze.n_groups != len(groups) - 1:
        raise ValueError(f"plan has {plan.unfreeze.n_groups} groups, model has {len(groups) - 1}")
    max_len = min(max_len, model.config.max_positions)

    data = encode_batch(train.texts, vocab, max_len, train.labels)
    val = None
    if validation is not None and len(validation):
        val = encode_batch(validation.texts, vocab, max_len, validation.labels)

    lrs = discriminative_lrs(plan.discriminative)
    top = plan.discriminative.last_layer_lr
    factors = {group: lrs[g] / top for g, group in enumerate(groups)}
    rng = np.random.default_rng(seed)
    opt = MomentumSGD(momentum)
    result = FinetuneResult(model)
    step = 0
    n = len(train)

    for stage in (plan.unfreeze.stages if stages is None else stages):
        model.set_trainable(unfreeze_mask(plan.unfreeze, stage))
        active = [grp for grp in groups if model.trainable[grp]]
        names = [k for k in model.params if model.group_of(k) in active]
        for epoch in range(plan.unfreeze.epochs_per_stage):
            order = rng.permutation(n)
            losses = []
            for start in range(0, n, plan.batch_size):
                idx = order[start:start + plan.batch_size]
                batch = BatchEncoding(
                    data.input_ids[idx], data.attention_mask[idx], data.segment_ids[idx],
                    labels=data.labels[idx],
                ).trimmed()
                loss, grads = loss_and_grads(model, batch, "classify")
                base = stlr_lr(plan.stlr, min(step, plan.stlr.total_steps))
                rates = {grp: base * factors[grp] for grp in active}
                opt.step(model.params, grads, {k: rates[model.group_of(k)] for k in names})
                result.lr_trace.append({"step": step, **rates})
                losses.append(loss)
                step += 1
            record = {
                "stage": stage,
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "train_acc": _accuracy_on(model, data),
            }
            if val is not None:
                record["val_acc"] = _accuracy_on(model, val)
            result.epochs.append(record)
    model.set_trainable([True] * len(groups))
    return result
