import numpy as np
import pytest

from addsep.mlp import Layer, Mlp


def make_net(*layers):
    """Build an Mlp from (weights, bias) pairs given as nested lists."""
    return Mlp(tuple(Layer(np.array(w, dtype=float), np.array(b, dtype=float)) for w, b in layers))


@pytest.fixture
def sum_net():
    # softplus(x1 + x2)
    return make_net(([[1.0, 1.0]], [0.0]), ([[1.0]], [0.0]))


@pytest.fixture
def split_net():
    # softplus(x1) + softplus(x2)
    return make_net(([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]), ([[1.0, 1.0]], [0.0]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
