import numpy as np
import pytest

from scd.core_math import RngState
from scd.encoder import SentenceBatch


def random_batch(gen, n=4, width=6, vocab=20):
    lengths = gen.integers(1, width + 1, size=n)
    lengths[0] = width
    ids = gen.integers(3, vocab, size=(n, width))
    ids[np.arange(width)[None, :] >= lengths[:, None]] = 0
    return SentenceBatch(ids, lengths)


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


@pytest.fixture
def rng():
    return RngState(7)
