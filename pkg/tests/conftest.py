"""Shared fixtures: a small planted-phrase corpus and a config factory."""

import pytest

from protolens.config import TrainConfig
from protolens.data import generate_synthetic

TINY_PHRASES = [["truly awful plot"], ["absolutely stunning visuals"]]


@pytest.fixture(scope="session")
def make_config():
    def _make(**overrides):
        base = dict(
            K=2,
            M=2,
            n_gram=2,
            d=8,
            hash_dim=64,
            T_max=16,
            batch_size=4,
            epochs=2,
            learning_rate=1e-4,
            seed=3,
        )
        base.update(overrides)
        return TrainConfig(**base)

    return _make


@pytest.fixture(scope="session")
def tiny_corpus():
    """24 train / 8 test instances, 2 classes, short noise, fixed seed."""
    return generate_synthetic(24, 8, 40, TINY_PHRASES, 10, seed=3)
