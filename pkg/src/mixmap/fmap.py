"""FMAP binary containers: labeled per-layer CNN feature maps on disk.

One container holds the feature maps of one network for many samples.
All integers are little-endian, activation values are float32. Decoded
objects are immutable and safe to share across parallel workers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"FMAP"
FORMAT_VERSION = 1
DEFAULT_CLASS_NAMES = ("negative", "positive")

_MAX_STR = 0xFFFF


class FmapError(Exception):
    """Base error for container validation and IO failures."""


class FmapFormatError(FmapError):
    """Malformed stream: bad magic, bad version, inconsistent lengths."""


class FmapTruncatedError(FmapFormatError):
    """Stream ended before the declared payload was complete."""


class FmapSchemaError(FmapError):
    """Samples disagree with their network's layer schema."""


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """One channel's 2-D activation grid. Fully-connected outputs use height 1."""

    layer_id: int
    map_index: int
    values: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 2:
            raise FmapError(f"map values must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise FmapError(f"map dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise FmapError(
                f"non-finite value in layer {self.layer_id} map {self.map_index}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if self.layer_id < 1 or self.map_index < 1:
            raise FmapError("layer_id and map_index are 1-based ordinals")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class Layer:
    """All maps of one tapped layer; maps share a spatial size."""

    layer_id: int
    maps: tuple[FeatureMap, ...]

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if not self.maps:
            raise FmapError(f"layer {self.layer_id} has no maps")
        shape = self.maps[0].values.shape
        for i, fmap in enumerate(self.maps, start=1):
            if fmap.layer_id != self.layer_id:
                raise FmapError(
                    f"map tagged layer {fmap.layer_id} inside layer {self.layer_id}"
                )
            if fmap.map_index != i:
                raise FmapError(
                    f"layer {self.layer_id}: map_index must run 1..m without gaps, "
                    f"got {fmap.map_index} at position {i}"
                )
            if fmap.values.shape != shape:
                raise FmapError(
                    f"layer {self.layer_id}: map {i} shape {fmap.values.shape} "
                    f"differs from {shape}"
                )

    @property
    def map_count(self) -> int:
        return len(self.maps)

    @property
    def height(self) -> int:
        return self.maps[0].height

    @property
    def width(self) -> int:
        return self.maps[0].width


@dataclass(frozen=True, eq=False)
class FeatureMapSet:
    """One sample's labeled collection of per-layer activation maps."""

    sample_id: str
    label: int
    network_tag: str
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.label not in (0, 1):
            raise FmapError(f"label must be 0 or 1, got {self.label!r}")
        if not self.layers:
            raise FmapError(f"sample {self.sample_id!r} has no layers")
        ids = [layer.layer_id for layer in self.layers]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise FmapError(
                f"sample {self.sample_id!r}: layer_ids must be strictly increasing, got {ids}"
            )

    def layer_schema(self) -> tuple[tuple[int, int, int, int], ...]:
        """(layer_id, map_count, height, width) per layer, in layer order."""
        return tuple(
            (ly.layer_id, ly.map_count, ly.height, ly.width) for ly in self.layers
        )


@dataclass(frozen=True)
class Manifest:
    """Container-level schema every enclosed sample must conform to."""

    format_version: int
    network_tag: str
    class_names: tuple[str, ...]
    sample_count: int
    layer_schema: tuple[tuple[int, int, int, int], ...]


def build_manifest(
    sets: Sequence[FeatureMapSet],
    network_tag: str | None = None,
    class_names: Sequence[str] = DEFAULT_CLASS_NAMES,
) -> Manifest:
    """Derive the shared manifest, rejecting schema drift between samples."""
    if sets:
        tag = sets[0].network_tag
        if network_tag is not None and network_tag != tag:
            raise FmapSchemaError(
                f"network_tag {network_tag!r} does not match samples ({tag!r})"
            )
        schema = sets[0].layer_schema()
        for s in sets:
            if s.network_tag != tag:
                raise FmapSchemaError(
                    f"sample {s.sample_id!r} has network_tag {s.network_tag!r}, "
                    f"container holds {tag!r}"
                )
            if s.layer_schema() != schema:
                raise FmapSchemaError(
                    f"sample {s.sample_id!r} does not conform to the container "
                    f"layer schema"
                )
    else:
        tag = network_tag if network_tag is not None else ""
        schema = ()
    return Manifest(FORMAT_VERSION, tag, tuple(class_names), len(sets), schema)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > _MAX_STR:
        raise FmapError(f"string too long for container ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def write_container(
    sets: Sequence[FeatureMapSet],
    destination: BinaryIO,
    *,
    network_tag: str | None = None,
    class_names: Sequence[str] = DEFAULT_CLASS_NAMES,
) -> Manifest:
    """Write samples as one FMAP container; bit-exact for identical input.

    Samples are written in the given order. All samples must share one
    network_tag and one layer schema; violations raise FmapSchemaError
    before any byte is emitted.
    """
    manifest = build_manifest(sets, network_tag, class_names)
    destination.write(MAGIC)
    destination.write(struct.pack("<I", FORMAT_VERSION))
    destination.write(_pack_str(manifest.network_tag))
    destination.write(struct.pack("<H", len(manifest.class_names)))
    for name in manifest.class_names:
        destination.write(_pack_str(name))
    destination.write(struct.pack("<Q", len(sets)))
    for s in sets:
        destination.write(_pack_str(s.sample_id))
        destination.write(struct.pack("<B", s.label))
        destination.write(struct.pack("<H", len(s.layers)))
        for layer in s.layers:
            destination.write(
                struct.pack(
                    "<HIII", layer.layer_id, layer.map_count, layer.height, layer.width
                )
            )
            stacked = np.stack([m.values for m in layer.maps])
            destination.write(stacked.astype("<f4", copy=False).tobytes())
    return manifest


class _Reader:
    def __init__(self, source: BinaryIO):
        self.source = source
        self.context = "header"

    def take(self, n: int) -> bytes:
        chunk = self.source.read(n)
        if len(chunk) != n:
            raise FmapTruncatedError(
                f"stream truncated while reading {self.context} "
                f"(wanted {n} bytes, got {len(chunk)})"
            )
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        n = self.u16()
        return self.take(n).decode("utf-8")


def read_container(source: BinaryIO) -> list[FeatureMapSet]:
    """Decode a full FMAP stream, validating every invariant before returning.

    Inverse of write_container: read(write(x)) == x with bit-exact values.
    """
    r = _Reader(source)
    magic = r.take(4)
    if magic != MAGIC:
        raise FmapFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FmapFormatError(f"unsupported container version {version}")
    network_tag = r.string()
    class_count = r.u16()
    for _ in range(class_count):
        r.string()
    sample_count = r.u64()

    sets: list[FeatureMapSet] = []
    schema: tuple | None = None
    for s_idx in range(sample_count):
        r.context = f"sample {s_idx + 1}/{sample_count}"
        sample_id = r.string()
        r.context = f"sample {sample_id!r}"
        label = r.u8()
        if label > 1:
            raise FmapFormatError(f"sample {sample_id!r}: label byte {label} not 0/1")
        layer_count = r.u16()
        if layer_count < 1:
            raise FmapFormatError(f"sample {sample_id!r}: zero layers declared")
        layers = []
        for _ in range(layer_count):
            layer_id = r.u16()
            map_count = r.u32()
            height = r.u32()
            width = r.u32()
            if map_count < 1 or height < 1 or width < 1:
                raise FmapFormatError(
                    f"sample {sample_id!r} layer {layer_id}: dimensions "
                    f"({map_count}, {height}, {width}) are not all positive"
                )
            r.context = f"sample {sample_id!r} layer {layer_id}"
            raw = r.take(map_count * height * width * 4)
            block = np.frombuffer(raw, dtype="<f4").reshape(map_count, height, width)
            try:
                maps = tuple(
                    FeatureMap(layer_id, i + 1, block[i]) for i in range(map_count)
                )
                layers.append(Layer(layer_id, maps))
            except FmapError as err:
                raise FmapFormatError(f"sample {sample_id!r}: {err}") from err
        try:
            decoded = FeatureMapSet(sample_id, label, network_tag, tuple(layers))
        except FmapError as err:
            raise FmapFormatError(str(err)) from err
        if schema is None:
            schema = decoded.layer_schema()
        elif decoded.layer_schema() != schema:
            raise FmapSchemaError(
                f"sample {sample_id!r} does not conform to the container layer schema"
            )
        sets.append(decoded)
    r.context = "end of stream"
    if source.read(1):
        raise FmapFormatError("trailing data after final sample")
    return sets


def read_container_file(path) -> list[FeatureMapSet]:
    with open(path, "rb") as fh:
        return read_container(fh)


def write_container_file(sets: Sequence[FeatureMapSet], path, **kwargs) -> Manifest:
    with open(path, "wb") as fh:
        return write_container(sets, fh, **kwargs)


def sets_equal(a: FeatureMapSet, b: FeatureMapSet) -> bool:
    """Structural equality with bit-exact value comparison, for tests and checks."""
    if (a.sample_id, a.label, a.network_tag) != (b.sample_id, b.label, b.network_tag):
        return False
    if a.layer_schema() != b.layer_schema():
        return False
    for la, lb in zip(a.layers, b.layers):
        for ma, mb in zip(la.maps, lb.maps):
            if ma.values.tobytes() != mb.values.tobytes():
                return False
    return True
