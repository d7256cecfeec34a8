import numpy as np
import pytest
from PIL import Image


def noise_image(seed, size=(64, 64)):
    rng = np.random.default_rng(seed)
    return Image.fromarray(
        rng.integers(0, 256, size=size, dtype=np.uint8), mode="L"
    )


@pytest.fixture
def image_dir(tmp_path):
    """Eight labeled noise images plus the filename,label CSV."""
    img_root = tmp_path / "images"
    img_root.mkdir()
    rows = ["filename,label"]
    for i in range(8):
        name = f"img{i}.png"
        noise_image(i).save(img_root / name)
        rows.append(f"{name},{i % 2}")
    labels = tmp_path / "labels.csv"
    labels.write_text("\n".join(rows) + "\n")
    return img_root, labels
