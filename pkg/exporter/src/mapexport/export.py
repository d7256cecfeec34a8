"""Run a network over labeled images and write the tapped activations as
an FMAP container (the byte format consumed by the mixmap toolkit).

All integers little-endian; values float32. One container holds one
network; tapped layers are numbered 1..n in tap order, and the
fully-connected tap becomes a single map of height 1.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Mapping, Sequence

import numpy as np
import torch

from .nets import TapError, TapSpec, build_model, tap_module
from .preprocess import preprocess_image, to_network_input

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
DEFAULT_CLASS_NAMES = ("non-covid", "covid")


class ExportError(Exception):
    """Export failed: bad labels, non-finite activations, or IO trouble."""


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ExportError(f"string too long for container ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def write_fmap(
    samples: Sequence[tuple[str, int, Sequence[tuple[int, np.ndarray]]]],
    destination: BinaryIO,
    network_tag: str,
    class_names: Sequence[str] = DEFAULT_CLASS_NAMES,
) -> None:
    """Serialize samples as (sample_id, label, [(layer_id, (m, h, w) block)])."""
    destination.write(FMAP_MAGIC)
    destination.write(struct.pack("<I", FMAP_VERSION))
    destination.write(_pack_str(network_tag))
    destination.write(struct.pack("<H", len(class_names)))
    for name in class_names:
        destination.write(_pack_str(name))
    destination.write(struct.pack("<Q", len(samples)))
    for sample_id, label, layers in samples:
        if label not in (0, 1):
            raise ExportError(f"sample {sample_id!r}: label must be 0/1, got {label!r}")
        destination.write(_pack_str(sample_id))
        destination.write(struct.pack("<B", label))
        destination.write(struct.pack("<H", len(layers)))
        for layer_id, block in layers:
            arr = np.ascontiguousarray(block, dtype=np.float32)
            if arr.ndim != 3:
                raise ExportError(
                    f"sample {sample_id!r} layer {layer_id}: block must be (maps, h, w)"
                )
            if not np.all(np.isfinite(arr)):
                raise ExportError(
                    f"sample {sample_id!r} layer {layer_id}: non-finite activation"
                )
            m, h, w = arr.shape
            destination.write(struct.pack("<HIII", layer_id, m, h, w))
            destination.write(arr.astype("<f4", copy=False).tobytes())


class _TapRecorder:
    """Forward hooks that stash each tapped module's output per pass."""

    def __init__(self, model, spec: TapSpec):
        self.outputs: dict[str, torch.Tensor] = {}
        self.handles = []
        for tap in spec.taps:
            module = tap_module(model, spec.model_name, tap)
            self.handles.append(
                module.register_forward_hook(self._make_hook(tap))
            )

    def _make_hook(self, tap):
        def hook(_module, _inputs, output):
            self.outputs[tap] = output.detach()

        return hook

    def close(self):
        for handle in self.handles:
            handle.remove()


def _tap_to_block(tensor: torch.Tensor, tap: str) -> np.ndarray:
    if tensor.ndim == 4:  # (1, C, H, W): one map per channel
        return tensor[0].cpu().numpy()
    if tensor.ndim == 2:  # (1, units): single map of height 1
        return tensor[0].cpu().numpy().reshape(1, 1, -1)
    raise ExportError(f"tap {tap!r} produced unsupported shape {tuple(tensor.shape)}")


def compute_tap_blocks(model, spec: TapSpec, batch: torch.Tensor):
    recorder = _TapRecorder(model, spec)
    try:
        with torch.no_grad():
            model(batch)
        missing = [t for t in spec.taps if t not in recorder.outputs]
        if missing:
            raise TapError(f"tap(s) {missing} never fired during the forward pass")
        return [
            (idx, _tap_to_block(recorder.outputs[tap], tap))
            for idx, tap in enumerate(spec.taps, start=1)
        ]
    finally:
        recorder.close()


def export_maps(
    images: Sequence[tuple[str, object]],
    labels: Mapping[str, int],
    tap: TapSpec,
    destination: BinaryIO,
    *,
    weights_path=None,
    seed: int = 0,
    network_tag: str | None = None,
    class_names: Sequence[str] = DEFAULT_CLASS_NAMES,
) -> int:
    """Run inference over (sample_id, image source) pairs and write FMAP.

    Deterministic in evaluation mode: the same images, tap spec, weights
    (or seed, when falling back to seeded initialization) produce
    byte-identical containers.
    """
    for sample_id, _ in images:
        if sample_id not in labels:
            raise ExportError(f"no label for sample {sample_id!r}")
    model = build_model(tap.model_name, weights_path, seed)
    samples = []
    for sample_id, source in images:
        gray = preprocess_image(source, tap.image_size)
        batch = to_network_input(gray, tap.model_name)
        samples.append((sample_id, int(labels[sample_id]), compute_tap_blocks(model, tap, batch)))
    write_fmap(samples, destination, network_tag or tap.model_name, class_names)
    return len(samples)
