import numpy as np
import pytest

from softsum.corpus import Vocab, SPECIAL_TOKENS
from softsum.model import ModelConfig, ModelParams
from softsum.objectives import RegularizerConfig


def tiny_config(mode="baseline", vocab_size=12, seed=0, dtype="float64", **kw):
    return ModelConfig(vocab_size=vocab_size, embedding_size=5, hidden_size=6,
                       mode=mode, seed=seed, dtype=dtype,
                       regularizer=RegularizerConfig(tau=2.0, alpha=1.0), **kw)


def tiny_params(mode="baseline", vocab_size=12, seed=0, dtype="float64", **kw):
    return ModelParams.init(tiny_config(mode, vocab_size, seed, dtype, **kw))


def widen_params(params, seed, low=-1.0, high=1.0):
    """Overwrite every parameter with a generic wider draw.

    At the standard small init some gradients sit below finite
    difference noise; a unit-scale draw keeps every coordinate of the
    check well conditioned.
    """
    rng = np.random.default_rng(seed)
    for key in params.keys():
        node = params[key]
        node.value = rng.uniform(low, high, size=node.value.shape).astype(node.value.dtype)
    return params


def toy_vocab(n_content=8, policy="whitespace"):
    tokens = list(SPECIAL_TOKENS) + [f"w{i:03d}" for i in range(n_content)]
    return Vocab(tokens=tokens, policy=policy)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
