"""Text classification toolkit: polarity lexicon, TF-IDF + kernel SVM, boosted trees, and a small BERT-style encoder."""

__version__ = "0.1.0"
