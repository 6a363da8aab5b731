import numpy as np
import pytest

from sentdenoise.model import ModelConfig
from sentdenoise.textdata import count_tokens, vocab_from_counts
from sentdenoise.toydata import template_corpus


@pytest.fixture(scope="session")
def toy_corpus():
    return template_corpus(300, seed=11)


@pytest.fixture(scope="session")
def toy_vocab(toy_corpus):
    return vocab_from_counts(count_tokens(toy_corpus))


@pytest.fixture
def small_config(toy_vocab):
    return ModelConfig(V=len(toy_vocab), d=16, enc_layers=1, dec_layers=1, enc_heads=2, dec_heads=1, L=16)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)
