"""Image preprocessing: grayscale, bilinear resize, [0, 255] range, then
per-network input normalization applied just before inference."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class PreprocessError(Exception):
    """Undecodable or degenerate input image."""


def preprocess_image(source, size: int = 256) -> np.ndarray:
    """Decode, grayscale, and bilinearly resize to (size, size) in [0, 255].

    Accepts a path, file object, or PIL image. Deterministic: the same
    input always yields the same array.
    """
    if isinstance(source, Image.Image):
        img = source
    else:
        try:
            img = Image.open(source)
        except Exception as err:
            raise PreprocessError(f"cannot decode image {source!r}: {err}") from err
    if img.width == 0 or img.height == 0:
        raise PreprocessError(f"zero-dimension image {source!r}")
    gray = img.convert("L").resize((size, size), Image.BILINEAR)
    return np.asarray(gray, dtype=np.float32)


def to_network_input(gray: np.ndarray, model_name: str) -> torch.Tensor:
    """Replicate the grey channel to three and apply the network's own
    input statistics (pretrained weights assume them)."""
    if gray.ndim != 2:
        raise PreprocessError(f"expected a 2-D grayscale array, got shape {gray.shape}")
    scaled = torch.from_numpy(np.ascontiguousarray(gray, dtype=np.float32)) / 255.0
    x = scaled.unsqueeze(0).repeat(3, 1, 1)
    if model_name == "resnet50":
        mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
        x = (x - mean) / std
    return x.unsqueeze(0)
