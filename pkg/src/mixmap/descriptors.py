"""Descriptor assembly and feature-matrix IO.

A descriptor is the flat per-sample feature vector with a named schema:
mixture encodings emit (mu, sigma, weight) per component per map, giving
3 * k * sum(m_l) entries per network; multi-network rows concatenate the
per-network descriptors in declared order.
"""

from __future__ import annotations

import csv
import functools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fmap import FeatureMapSet
from .gmm import EmConfig, fit_gmm_em
from .parallel import pmap_ordered


class EncodeError(Exception):
    """Encoding failed: bad fit input or misaligned networks."""


@dataclass(frozen=True, eq=False)
class Descriptor:
    """Flat real vector plus one schema name per entry."""

    values: np.ndarray
    schema: tuple[str, ...]

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "schema", tuple(self.schema))
        if arr.ndim != 1 or len(self.schema) != arr.size:
            raise EncodeError(
                f"schema length {len(self.schema)} != value count {arr.size}"
            )
        if len(set(self.schema)) != len(self.schema):
            raise EncodeError("schema names must be unique")


def gmm_schema(sample: FeatureMapSet, k: int) -> tuple[str, ...]:
    names = []
    for layer in sample.layers:
        for fmap in layer.maps:
            stem = f"{sample.network_tag}/layer{layer.layer_id}/map{fmap.map_index}"
            for j in range(1, k + 1):
                names.extend(
                    (f"{stem}/comp{j}/mu", f"{stem}/comp{j}/sigma", f"{stem}/comp{j}/weight")
                )
    return tuple(names)


def encode_sample(sample: FeatureMapSet, config: EmConfig) -> Descriptor:
    """Fit one mixture per map and emit (mu, sigma, weight) per sorted component.

    Maps are visited layer-major, map-minor; sigma is the standard
    deviation, not the variance. Total length is 3 * k * sum(m_l).
    """
    chunks = []
    for layer in sample.layers:
        for fmap in layer.maps:
            try:
                model = fit_gmm_em(fmap.values.ravel(), config)
            except ValueError as err:
                raise EncodeError(
                    f"sample {sample.sample_id!r} layer {layer.layer_id} "
                    f"map {fmap.map_index}: {err}"
                ) from err
            for comp in model.components:
                chunks.extend((comp.mean, np.sqrt(comp.variance), comp.weight))
    return Descriptor(np.array(chunks), gmm_schema(sample, config.k))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Row-per-sample feature matrix with aligned labels and schema."""

    matrix: np.ndarray
    labels: np.ndarray
    sample_ids: tuple[str, ...]
    schema: tuple[str, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "schema", tuple(self.schema))
        if m.ndim != 2 or m.shape[0] != y.size or m.shape[0] != len(self.sample_ids):
            raise EncodeError("matrix, labels and sample_ids sizes disagree")
        if m.shape[1] != len(self.schema):
            raise EncodeError("matrix width does not match schema length")


def _check_alignment(networks: Sequence[Sequence[FeatureMapSet]]):
    if not networks:
        raise EncodeError("need at least one network to encode")
    tags = []
    for samples in networks:
        if not samples:
            raise EncodeError("a network has no samples")
        tag = samples[0].network_tag
        for s in samples:
            if s.network_tag != tag:
                raise EncodeError(
                    f"mixed network_tags in one container: {tag!r} vs {s.network_tag!r}"
                )
        tags.append(tag)
    if len(set(tags)) != len(tags):
        raise EncodeError(f"duplicate network_tags across networks: {tags}")

    by_tag = []
    labels: dict[str, int] = {}
    for tag, samples in zip(tags, networks):
        mapping = {}
        for s in samples:
            if s.sample_id in mapping:
                raise EncodeError(f"duplicate sample_id {s.sample_id!r} in {tag!r}")
            mapping[s.sample_id] = s
            if s.sample_id in labels and labels[s.sample_id] != s.label:
                raise EncodeError(
                    f"conflicting labels for sample {s.sample_id!r} across networks"
                )
            labels[s.sample_id] = s.label
        by_tag.append(mapping)

    ids = sorted(labels)
    for tag, mapping in zip(tags, by_tag):
        for sid in ids:
            if sid not in mapping:
                raise EncodeError(f"sample_id {sid!r} missing from network {tag!r}")
    return ids, by_tag, labels


def build_matrix(
    networks: Sequence[Sequence[FeatureMapSet]],
    encode_fn,
    *,
    workers: int | None = None,
) -> FeatureMatrix:
    """Encode each network with encode_fn(network_index, sample) and stack rows.

    Rows are ordered by ascending sample_id; columns concatenate the
    per-network descriptors in declared network order.
    """
    ids, by_tag, labels = _check_alignment(networks)
    # each job carries only its own sample so pool tasks stay small
    jobs = [
        (n_idx, by_tag[n_idx][sid]) for sid in ids for n_idx in range(len(networks))
    ]
    fn = functools.partial(_encode_job, encode_fn=encode_fn)
    descriptors = pmap_ordered(fn, jobs, workers)

    schema: list[str] = []
    per_net = len(networks)
    for n_idx in range(per_net):
        schema.extend(descriptors[n_idx].schema)
    rows = []
    for r, sid in enumerate(ids):
        parts = descriptors[r * per_net : (r + 1) * per_net]
        row = np.concatenate([d.values for d in parts])
        got = [name for d in parts for name in d.schema]
        if got != schema:
            raise EncodeError(f"sample {sid!r} produced a mismatched schema")
        rows.append(row)
    return FeatureMatrix(
        np.vstack(rows), np.array([labels[sid] for sid in ids]), tuple(ids), tuple(schema)
    )


def _encode_job(job, *, encode_fn):
    n_idx, sample = job
    return encode_fn(n_idx, sample)


def encode_dataset(
    networks: Sequence[Sequence[FeatureMapSet]],
    config: EmConfig,
    *,
    workers: int | None = None,
) -> FeatureMatrix:
    """Mixture-encode every sample of every network into one aligned matrix."""
    fn = functools.partial(_gmm_encode_job, config=config)
    return build_matrix(networks, fn, workers=workers)


def _gmm_encode_job(_n_idx, sample, *, config):
    return encode_sample(sample, config)


def write_matrix_csv(fm: FeatureMatrix, path) -> None:
    """Emit the matrix as CSV: schema columns then sample_id,label; 17 sig digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(fm.schema) + ["sample_id", "label"])
        for row, sid, label in zip(fm.matrix, fm.sample_ids, fm.labels):
            writer.writerow([f"{v:.17g}" for v in row] + [sid, str(int(label))])


def read_matrix_csv(path) -> FeatureMatrix:
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 3 or header[-2:] != ["sample_id", "label"]:
            raise EncodeError(f"{path}: not a feature-matrix CSV")
        schema = tuple(header[:-2])
        rows, ids, labels = [], [], []
        for rec in reader:
            if len(rec) != len(header):
                raise EncodeError(f"{path}: ragged row with {len(rec)} fields")
            rows.append([float(v) for v in rec[:-2]])
            ids.append(rec[-2])
            labels.append(int(rec[-1]))
    return FeatureMatrix(np.array(rows, dtype=np.float64), labels, tuple(ids), schema)


def write_sidecar(path, payload: dict) -> None:
    """Reproducibility sidecar: encoder settings and network order as JSON."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
