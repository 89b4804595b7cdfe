"""Small BERT-style encoder: tokenization, model, and pretraining objectives."""

from .model import (
    ForwardOutput,
    MomentumSGD,
    TransformerConfig,
    TransformerModel,
    attention,
    attention_weights,
    embedding_analogy,
    forward,
    loss_and_grads,
    predict_proba,
)
from .pretraining import make_nsp_pairs, make_pretraining_batch, mlm_mask, pretrain
from .tokenization import (
    SPECIAL_TOKENS,
    BatchEncoding,
    WordPieceVocab,
    basic_tokenize,
    encode_batch,
    encode_sequence,
    stack,
    train_wordpiece,
)

__all__ = [
    "BatchEncoding",
    "ForwardOutput",
    "MomentumSGD",
    "SPECIAL_TOKENS",
    "TransformerConfig",
    "TransformerModel",
    "WordPieceVocab",
    "attention",
    "attention_weights",
    "basic_tokenize",
    "embedding_analogy",
    "encode_batch",
    "encode_sequence",
    "forward",
    "loss_and_grads",
    "make_nsp_pairs",
    "make_pretraining_batch",
    "mlm_mask",
    "predict_proba",
    "pretrain",
    "stack",
    "train_wordpiece",
]
