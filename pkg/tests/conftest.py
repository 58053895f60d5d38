import numpy as np
import pytest

from soc_ensemble.data import toy_generate
from soc_ensemble.ensemble import EnsembleConfig
from soc_ensemble.nn_core import LayerSpec


@pytest.fixture
def toy_small():
    return toy_generate(200, seed=3)


@pytest.fixture
def fast_config():
    # small enough to train in well under a second
    return EnsembleConfig(m_members=3, batch_size=32, iterations=150, lr=0.01,
                          layer_spec=LayerSpec(1, (16,)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
