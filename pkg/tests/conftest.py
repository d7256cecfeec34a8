import numpy as np
import pytest

from mixmap.fmap import FeatureMap, FeatureMapSet, Layer


def make_sample(rng, sample_id, label, tag="net", layer_specs=((1, 2, 3, 4), (2, 3, 2, 2))):
    """Random FeatureMapSet; layer_specs entries are (layer_id, maps, h, w)."""
    layers = []
    for layer_id, m, h, w in layer_specs:
        maps = tuple(
            FeatureMap(layer_id, i, rng.normal(size=(h, w)).astype(np.float32))
            for i in range(1, m + 1)
        )
        layers.append(Layer(layer_id, maps))
    return FeatureMapSet(sample_id, label, tag, tuple(layers))


def make_sets(rng, n, tag="net", layer_specs=((1, 2, 3, 4), (2, 3, 2, 2))):
    return [
        make_sample(rng, f"s{i:03d}", i % 2, tag, layer_specs) for i in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(20240731)
