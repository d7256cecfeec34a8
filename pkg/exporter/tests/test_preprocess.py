import numpy as np
import pytest
import torch
from PIL import Image

from mapexport.preprocess import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    PreprocessError,
    preprocess_image,
    to_network_input,
)
from tests.conftest import noise_image


def test_uniform_white_stays_255():
    img = Image.new("L", (100, 80), color=255)
    out = preprocess_image(img)
    assert out.shape == (256, 256)
    assert np.all(out == 255.0)


def test_checkerboard_resize_range():
    tile = np.indices((512, 512)).sum(axis=0) % 2 * 255
    img = Image.fromarray(tile.astype(np.uint8), mode="L")
    out = preprocess_image(img)
    assert out.shape == (256, 256)
    assert out.min() >= 0.0 and out.max() <= 255.0


def test_deterministic():
    img = noise_image(3, (90, 120))
    a = preprocess_image(img)
    b = preprocess_image(img)
    assert a.tobytes() == b.tobytes()


def test_rgb_input_is_grayscaled():
    rgb = Image.merge("RGB", [noise_image(s, (40, 40)) for s in (1, 2, 3)])
    out = preprocess_image(rgb)
    assert out.shape == (256, 256)


def test_undecodable_file_rejected(tmp_path):
    bogus = tmp_path / "not_an_image.png"
    bogus.write_text("hello")
    with pytest.raises(PreprocessError, match="cannot decode"):
        preprocess_image(bogus)


def test_zero_dimension_rejected():
    with pytest.raises(PreprocessError, match="zero-dimension"):
        preprocess_image(Image.new("L", (0, 0)))


def test_network_input_darknet_scales_to_unit():
    gray = np.full((256, 256), 255.0, dtype=np.float32)
    x = to_network_input(gray, "darknet19")
    assert x.shape == (1, 3, 256, 256)
    assert torch.allclose(x, torch.ones_like(x))


def test_network_input_resnet_applies_imagenet_stats():
    gray = np.full((256, 256), 255.0, dtype=np.float32)
    x = to_network_input(gray, "resnet50")
    for c in range(3):
        expected = (1.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c]
        assert float(x[0, c, 0, 0]) == pytest.approx(expected, rel=1e-5)
