import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conceptforge import corpus as cm


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_tensor(image_id="img0", grid=4, channels=6, seed=0, layer=None,
                viewpoint="unknown"):
    """Small random tensor with unit-norm cells."""
    r = np.random.default_rng(seed)
    data = r.standard_normal((grid, grid, channels))
    data /= np.linalg.norm(data, axis=2, keepdims=True)
    layer = layer or cm.LayerSpec("synth", channels=channels, stride=16,
                                  rf_size=100)
    meta = cm.ImageMeta(image_id=image_id, object_class="test",
                        crop_width=grid * 16, crop_height=grid * 16,
                        viewpoint_bin=viewpoint)
    return cm.FeatureTensor(image_id, layer, data.astype(np.float32), meta)


@pytest.fixture(scope="session")
def tiny_corpus():
    """20-image planted corpus small enough for fast unit tests."""
    spec = cm.SyntheticSpec(n_images=20, grid_w=6, grid_h=6, channels=32,
                            n_planted_concepts=4, placements_per_image=4,
                            noise_sigma=0.0)
    return cm.generate_synthetic_corpus(spec, seed=7)
