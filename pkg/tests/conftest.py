from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from advnids.data import ClipBox, SplitSpec, SynthConfig, split, synth_gen
from advnids.net import Architecture, MlpModel, TrainConfig, init_model, train

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# training recipe shared by the desk-scale checks
DESK_TRAIN = TrainConfig(epochs=50, batch_size=64, learning_rate=1e-3, seed=0)


@pytest.fixture
def toy():
    """Single logistic unit, weights [2, -1], bias 0."""
    return MlpModel.from_arrays([np.array([2.0, -1.0])], [0.0])


@pytest.fixture
def wide_box():
    return ClipBox(-10.0, 10.0, strict=True)


@pytest.fixture(scope="session")
def desk_split():
    data = synth_gen(SynthConfig())
    return split(data, SplitSpec(test_fraction=0.4, validation_fraction=0.25, seed=0))


@pytest.fixture(scope="session")
def desk_model(desk_split):
    tr, va, _ = desk_split
    model, _ = train(init_model(Architecture(tr.n_features), 0), tr, va, DESK_TRAIN)
    return model


@pytest.fixture(scope="session")
def desk_box(desk_split):
    return ClipBox.from_data(desk_split[0].features)


def random_model(seed: int, d: int = 6, hidden=(5, 4), l2: float = 1e-4) -> MlpModel:
    """He-initialised net with small random biases so ReLUs are not all aligned."""
    m = init_model(Architecture(d, tuple(hidden), l2), seed)
    rng = np.random.default_rng(seed + 10_000)
    for b in m.biases:
        b += 0.1 * rng.standard_normal(b.shape)
    return m
