"""Shared tiny-model builders for the transformer and schedule tests."""

from textclf.transformer import TransformerConfig, TransformerModel, WordPieceVocab
from textclf.transformer.tokenization import SPECIAL_TOKENS

WORDS = ["film", "harika", "berbat", "güzel", "kötü", "oyuncu", "sahne", "müzik", "bir", "çok"]


def tiny_vocab():
    return WordPieceVocab(list(SPECIAL_TOKENS) + WORDS + [".", ","])


def tiny_model(vocab=None, n_layers=1, hidden=8, heads=2, seed=3, init_std=0.5, max_positions=16):
    vocab = vocab or tiny_vocab()
    cfg = TransformerConfig(vocab_size=len(vocab), max_positions=max_positions, n_layers=n_layers,
                            hidden_size=hidden, n_heads=heads, seed=seed, init_std=init_std)
    return TransformerModel(cfg)


def sample_texts():
    return ["harika bir film", "berbat film .", "çok güzel müzik , harika oyuncu", "kötü"]
