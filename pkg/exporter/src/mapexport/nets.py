"""Network construction and tap-point resolution.

Tap points are post-nonlinearity: each DarkNet-19 conv block ends in
LeakyReLU, ResNet50 taps sit on the stem relu and the residual stage
outputs, and "fc" is the first fully-connected output (the logits
vector, stored downstream as one map of height 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torchvision.models import resnet50


class TapError(Exception):
    """Unknown model or unresolvable tap identifier."""


_DARKNET_LAYOUT = (
    ("conv1", 32, 3), "pool",
    ("conv2", 64, 3), "pool",
    ("conv3", 128, 3), ("conv4", 64, 1), ("conv5", 128, 3), "pool",
    ("conv6", 256, 3), ("conv7", 128, 1), ("conv8", 256, 3), "pool",
    ("conv9", 512, 3), ("conv10", 256, 1), ("conv11", 512, 3),
    ("conv12", 256, 1), ("conv13", 512, 3), "pool",
    ("conv14", 1024, 3), ("conv15", 512, 1), ("conv16", 1024, 3),
    ("conv17", 512, 1), ("conv18", 1024, 3),
)


class DarkNet19(nn.Module):
    """Feed-forward classifier backbone: 18 conv-BN-LeakyReLU blocks with
    five 2x2 max-pools, a 1x1 classifier conv, and global average pooling."""

    def __init__(self, num_classes: int = 1000):
        super().__init__()
        self.blocks = nn.ModuleDict()
        self.sequence: list[str] = []
        c_in = 3
        pools = 0
        for entry in _DARKNET_LAYOUT:
            if entry == "pool":
                pools += 1
                name = f"pool{pools}"
                self.blocks[name] = nn.MaxPool2d(2, 2)
            else:
                name, c_out, kernel = entry
                self.blocks[name] = nn.Sequential(
                    nn.Conv2d(c_in, c_out, kernel, padding=kernel // 2, bias=False),
                    nn.BatchNorm2d(c_out),
                    nn.LeakyReLU(0.1),
                )
                c_in = c_out
            self.sequence.append(name)
        self.classifier = nn.Conv2d(c_in, num_classes, 1)

    def forward(self, x):
        for name in self.sequence:
            x = self.blocks[name](x)
        x = self.classifier(x)
        return x.mean(dim=(2, 3))


MODEL_NAMES = ("darknet19", "resnet50")

DEFAULT_TAPS = {
    "darknet19": ("conv1", "conv2", "conv5", "conv8", "conv13", "conv18", "fc"),
    "resnet50": ("conv1", "layer1", "layer2", "layer3", "layer4", "fc"),
}

FULL_TAPS = {
    "darknet19": tuple(f"conv{i}" for i in range(1, 19)) + ("fc",),
    "resnet50": ("conv1", "layer1", "layer2", "layer3", "layer4", "fc"),
}


@dataclass(frozen=True)
class TapSpec:
    """Which network to run and which post-activation points to export."""

    model_name: str
    taps: tuple[str, ...]
    image_size: int = 256

    def __post_init__(self):
        if self.model_name not in MODEL_NAMES:
            raise TapError(f"unknown model {self.model_name!r}; choose from {MODEL_NAMES}")
        if not self.taps:
            raise TapError("tap list must be non-empty")
        valid = FULL_TAPS[self.model_name]
        unknown = [t for t in self.taps if t not in valid]
        if unknown:
            raise TapError(
                f"tap(s) {unknown} not resolvable for {self.model_name}; valid: {valid}"
            )
        if len(set(self.taps)) != len(self.taps):
            raise TapError("duplicate tap identifiers")
        if self.image_size < 32:
            raise TapError("image_size must be >= 32")


def parse_taps(model_name: str, text: str | None) -> TapSpec:
    if text is None or text == "default":
        taps = DEFAULT_TAPS[model_name]
    elif text == "all":
        taps = FULL_TAPS[model_name]
    else:
        taps = tuple(t.strip() for t in text.split(",") if t.strip())
    return TapSpec(model_name, taps)


def build_model(model_name: str, weights_path=None, seed: int = 0) -> nn.Module:
    """Construct the network in eval mode.

    With weights_path the checkpoint is loaded; otherwise parameters come
    from a seeded initialization so repeated builds are identical.
    """
    torch.manual_seed(seed)
    if model_name == "resnet50":
        model = resnet50(weights=None)
    elif model_name == "darknet19":
        model = DarkNet19()
    else:
        raise TapError(f"unknown model {model_name!r}")
    if weights_path is not None:
        try:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
        except Exception as err:
            raise TapError(f"cannot load weights from {weights_path!r}: {err}") from err
        model.load_state_dict(state)
    model.eval()
    return model


def tap_module(model: nn.Module, model_name: str, tap: str) -> nn.Module:
    """Module whose forward output realizes the tap (fc taps the model itself)."""
    if tap == "fc":
        return model if model_name == "darknet19" else model.fc
    if model_name == "darknet19":
        return model.blocks[tap]
    if tap == "conv1":
        return model.relu
    return getattr(model, tap)
