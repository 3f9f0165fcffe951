from __future__ import annotations

import numpy as np
import pytest

from lumacurve.model import ModelConfig, ModelWeights
from lumacurve.synth import generate_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 rendered 64x64 images: 2 scenes x 2 illuminants x 2 positions."""
    root = tmp_path_factory.mktemp("tinyset")
    manifest = generate_dataset(
        root, seed=7, n_scenes=2, n_illuminants=2, n_positions=2, resolution=64
    )
    return root, manifest


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """64 rendered images for short end-to-end training runs."""
    root = tmp_path_factory.mktemp("smallset")
    manifest = generate_dataset(
        root, seed=5, n_scenes=8, n_illuminants=2, n_positions=4, resolution=64
    )
    return root, manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture()
def model_weights():
    return ModelWeights.init(ModelConfig(), seed=3)


@pytest.fixture()
def flat_response_weights():
    """Weights whose output ignores the input: every upstream path is dead.

    All conv and projection weights are zero, so features are exactly zero
    and the illuminant head emits a constant positive vector. Useful for
    exercising zero-gradient code paths deterministically.
    """
    weights = ModelWeights.init(ModelConfig(), seed=0)
    for name, arr in weights.arrays.items():
        if name == "head_b":
            weights.arrays[name] = np.full_like(arr, 0.5)
        else:
            weights.arrays[name] = np.zeros_like(arr)
    return weights
