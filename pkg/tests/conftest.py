import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_docs(rng, n_docs=20, vocab_size=15, max_len=12):
    words = [f"w{i}" for i in range(vocab_size)]
    docs = []
    for _ in range(n_docs):
        k = int(rng.integers(0, max_len + 1))
        docs.append(" ".join(rng.choice(words, size=k)))
    return docs
