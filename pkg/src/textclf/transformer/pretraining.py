"""Masked-token and next-sentence objectives, and the joint pretraining loop.

Selected tokens are always replaced by ``[MASK]``; BERT's 80/10/10
replacement split is not used.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from ..errors import CorpusTooSmall, EmptyTrainingSet
from .model import MomentumSGD, TransformerModel, loss_and_grads
from .tokenization import MASK_ID, SPECIAL_TOKENS, BatchEncoding, WordPieceVocab, encode_sequence, stack

N_SPECIAL = len(SPECIAL_TOKENS)


def mlm_mask(encoding: BatchEncoding, rate: float, rng: np.random.Generator) -> BatchEncoding:
    """Independently select each real, non-special token with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    ids = encoding.input_ids
    eligible = (encoding.attention_mask == 1) & (ids >= N_SPECIAL)
    chosen = (rng.random(ids.shape) < rate) & eligible
    targets = np.where(chosen, ids, -1)
    return replace(encoding, input_ids=np.where(chosen, MASK_ID, ids), mlm_targets=targets)


def make_nsp_pairs(sentences: Sequence[str], rng: np.random.Generator) -> list[tuple[str, str, int]]:
    """One pair per sentence but the last: the true successor or, with
    probability 1/2, a random sentence other than the successor."""
    n = len(sentences)
    if n < 3:
        raise CorpusTooSmall(f"need at least 3 sentences, got {n}")
    pairs = []
    for i in range(n - 1):
        if rng.random() < 0.5:
            pairs.append((sentences[i], sentences[i + 1], 1))
        else:
            j = int(rng.integers(n - 1))
            if j >= i + 1:
                j += 1
            pairs.append((sentences[i], sentences[j], 0))
    return pairs


def make_pretraining_batch(pairs, vocab: WordPieceVocab, max_len: int, rate: float,
                           rng: np.random.Generator, max_positions: int = 512) -> BatchEncoding:
    rows = [mlm_mask(encode_sequence((a, b), vocab, max_len, max_positions), rate, rng) for a, b, _ in pairs]
    batch = stack(rows)
    return replace(batch, nsp_labels=np.array([label for _, _, label in pairs])).trimmed()


def pretrain(
    model: TransformerModel,
    vocab: WordPieceVocab,
    sentences: Sequence[str],
    steps: int,
    schedule,
    *,
    batch_size: int = 16,
    max_len: int = 64,
    momentum: float = 0.9,
    seed: int = 0,
) -> tuple[TransformerModel, list[float]]:
    """Train MLM + NSP jointly for ``steps`` updates; return the model and per-step losses.

    ``schedule`` is anything with ``lr(step)``, normally a ``StlrSchedule``.
    All parameter groups train regardless of their trainable flag.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    rng = np.random.default_rng(seed)
    pairs: list = []
    if len(sentences) < 3:
        raise CorpusTooSmall(f"need at least 3 sentences, got {len(sentences)}")
    opt = MomentumSGD(momentum)
    losses = []
    for step in range(steps):
        if len(pairs) < batch_size:
            fresh = make_nsp_pairs(sentences, rng)
            pairs.extend(fresh[i] for i in rng.permutation(len(fresh)))
            if not pairs:
                raise EmptyTrainingSet("corpus yields no batch")
        chunk, pairs = pairs[:batch_size], pairs[batch_size:]
        batch = make_pretraining_batch(chunk, vocab, max_len, model.config.mask_rate, rng,
                                       model.config.max_positions)
        loss, grads = loss_and_grads(model, batch, "pretrain")
        lr = schedule.lr(step)
        opt.step(model.params, grads, {k: lr for k in model.params})
        losses.append(loss)
    return model, losses
