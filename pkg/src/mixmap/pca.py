"""Per-layer principal-component bases for the projection baseline.

A layer's basis is fitted on every flattened map of every training
sample, pooled across channels. The Gram (dual) eigensolve is used when
there are fewer observations than pixels; otherwise a deflated power
iteration on the implicit covariance operator, so the covariance matrix
is never materialized.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from typing import BinaryIO, Mapping, Sequence

import numpy as np

from .descriptors import Descriptor
from .fmap import FeatureMapSet

_POWER_TOL = 1e-12
_POWER_MAX_ITER = 200_000


class PcaError(Exception):
    """Basis fitting or projection failed."""


@dataclass(frozen=True, eq=False)
class PcaBasis:
    """Orthonormal component rows and their explained variances for one layer."""

    layer_id: int
    mean_vector: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean_vector, dtype=np.float64)
        comp = np.asarray(self.components, dtype=np.float64)
        ev = np.asarray(self.explained_variance, dtype=np.float64)
        for arr in (mean, comp, ev):
            arr.setflags(write=False)
        object.__setattr__(self, "mean_vector", mean)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "explained_variance", ev)
        if comp.ndim != 2 or comp.shape[1] != mean.size or ev.size != comp.shape[0]:
            raise PcaError("inconsistent basis shapes")
        gram = comp @ comp.T
        if not np.allclose(gram, np.eye(comp.shape[0]), atol=1e-8):
            raise PcaError("components are not orthonormal within 1e-8")
        if np.any(ev < -1e-12) or np.any(np.diff(ev) > 1e-12):
            raise PcaError("explained variances must be non-negative and non-increasing")

    @property
    def pc_count(self) -> int:
        return self.components.shape[0]


def _fix_sign(v: np.ndarray) -> np.ndarray:
    # Deterministic orientation: largest-magnitude entry is positive.
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def _power_components(xc: np.ndarray, pc_count: int) -> tuple[np.ndarray, np.ndarray]:
    s, d = xc.shape
    scale = 1.0 / (s - 1)
    row_norms = np.einsum("ij,ij->i", xc, xc)

    def matvec(v):
        return scale * (xc.T @ (xc @ v))

    comps: list[np.ndarray] = []
    vals: list[float] = []
    for _ in range(pc_count):
        start = xc[int(np.argmax(row_norms))].copy()
        v = _orthogonalize(start, comps)
        if v is None:
            v = _fallback_start(d, comps)
        # Anything at roundoff scale of the top eigenvalue is treated as rank exhausted.
        noise_floor = max(1e-300, 1e-14 * (vals[0] if vals else 0.0))
        dead = False
        for _ in range(_POWER_MAX_ITER):
            w = matvec(v)
            for u, lu in zip(comps, vals):
                w -= lu * (u @ v) * u
            w = _orthogonalize(w, comps, renorm=False)
            nw = np.linalg.norm(w)
            if nw <= noise_floor:
                dead = True
                break
            v_new = w / nw
            if v_new @ v < 0:
                v_new = -v_new
            delta = np.max(np.abs(v_new - v))
            v = v_new
            if delta < _POWER_TOL:
                break
        v = _fix_sign(v)
        if dead:
            lam = 0.0
        else:
            av = matvec(v)
            lam = float(v @ av) - sum(lu * float(u @ v) ** 2 for u, lu in zip(comps, vals))
        comps.append(v)
        vals.append(max(lam, 0.0))
    return np.array(comps), np.array(vals)


def _orthogonalize(w, basis, renorm=True):
    # Two passes: one Gram-Schmidt sweep leaves O(1) relative error when the
    # input is nearly inside span(basis).
    norm0 = np.linalg.norm(w)
    for _ in range(2):
        for u in basis:
            w = w - (u @ w) * u
    if not renorm:
        return w
    n = np.linalg.norm(w)
    if n <= 1e-10 * max(norm0, 1e-300):
        return None
    return w / n


def _fallback_start(d, comps):
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        v = _orthogonalize(e, comps)
        if v is not None:
            return v
    raise PcaError("could not build a start vector orthogonal to found components")


def _gram_components(xc: np.ndarray, pc_count: int) -> tuple[np.ndarray, np.ndarray]:
    s = xc.shape[0]
    gram = (xc @ xc.T) / (s - 1)
    eigvals, eigvecs = np.linalg.eigh(gram)
    order = np.argsort(eigvals)[::-1][:pc_count]
    comps = []
    vals = []
    for idx in order:
        lam = float(max(eigvals[idx], 0.0))
        u = eigvecs[:, idx]
        w = xc.T @ u
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            comps.append(_fallback_start(xc.shape[1], comps))
            vals.append(0.0)
            continue
        comps.append(_fix_sign(w / norm))
        vals.append(lam)
    return np.array(comps), np.array(vals)


def fit_pca(
    observations: Sequence[np.ndarray] | np.ndarray,
    pc_count: int,
    *,
    layer_id: int = 0,
) -> PcaBasis:
    """Fit the top principal components of pooled flattened maps for one layer.

    Requires at least two observations and pc_count <= min(S - 1, D).
    Component orientation is deterministic (largest-magnitude entry
    positive); explained variances use the 1/(S-1) normalization.
    """
    x = np.asarray(observations, dtype=np.float64)
    if x.ndim != 2:
        raise PcaError(f"observations must be 2-D (S, D), got shape {x.shape}")
    s, d = x.shape
    if s < 2:
        raise PcaError(f"need at least 2 observations, got {s}")
    if not 1 <= pc_count <= min(s - 1, d):
        raise PcaError(
            f"pc_count {pc_count} outside valid range 1..{min(s - 1, d)} for {s}x{d} data"
        )
    if not np.all(np.isfinite(x)):
        raise PcaError("non-finite observation value")
    mean = x.mean(axis=0)
    xc = x - mean
    if s < d:
        comps, vals = _gram_components(xc, pc_count)
    else:
        comps, vals = _power_components(xc, pc_count)
    order = np.argsort(-vals, kind="stable")
    return PcaBasis(layer_id, mean, comps[order], vals[order])


def layer_observations(
    samples: Sequence[FeatureMapSet],
) -> dict[int, np.ndarray]:
    """Pool every map of every sample per layer into (S, H*W) observation blocks."""
    blocks: dict[int, list[np.ndarray]] = {}
    for sample in samples:
        for layer in sample.layers:
            rows = [m.values.ravel().astype(np.float64) for m in layer.maps]
            blocks.setdefault(layer.layer_id, []).extend(rows)
    return {lid: np.vstack(rows) for lid, rows in blocks.items()}


def fit_layer_bases(
    samples: Sequence[FeatureMapSet], pc_count: int
) -> dict[int, PcaBasis]:
    """Fit one basis per layer from a training set of samples."""
    return {
        lid: fit_pca(obs, pc_count, layer_id=lid)
        for lid, obs in sorted(layer_observations(samples).items())
    }


def pca_encode(sample: FeatureMapSet, bases: Mapping[int, PcaBasis]) -> Descriptor:
    """Project each map onto its layer basis; descriptor length PC * sum(m_l)."""
    values: list[float] = []
    names: list[str] = []
    for layer in sample.layers:
        basis = bases.get(layer.layer_id)
        if basis is None:
            raise PcaError(
                f"sample {sample.sample_id!r}: no basis for layer {layer.layer_id}"
            )
        for fmap in layer.maps:
            flat = fmap.values.ravel().astype(np.float64)
            if flat.size != basis.mean_vector.size:
                raise PcaError(
                    f"sample {sample.sample_id!r} layer {layer.layer_id}: map size "
                    f"{flat.size} != basis dimension {basis.mean_vector.size}"
                )
            coeff = basis.components @ (flat - basis.mean_vector)
            values.extend(coeff)
            stem = f"{sample.network_tag}/layer{layer.layer_id}/map{fmap.map_index}"
            names.extend(f"{stem}/pc{p}" for p in range(1, basis.pc_count + 1))
    return Descriptor(np.array(values), tuple(names))


def pca_encode_dataset(
    networks: Sequence[Sequence[FeatureMapSet]],
    bases_per_network: Sequence[Mapping[int, PcaBasis]],
    *,
    workers: int | None = None,
):
    """Project every sample of every network into one aligned matrix."""
    from .descriptors import build_matrix

    if len(bases_per_network) != len(networks):
        raise PcaError("need one basis mapping per network")
    fn = functools.partial(_pca_encode_job, bases_per_network=list(bases_per_network))
    return build_matrix(networks, fn, workers=workers)


def _pca_encode_job(n_idx, sample, *, bases_per_network):
    return pca_encode(sample, bases_per_network[n_idx])


BASIS_MAGIC = b"PCAB"
BASIS_VERSION = 1


def write_bases(bases: Mapping[int, PcaBasis], destination: BinaryIO, network_tag: str = "") -> None:
    """Persist fitted bases; little-endian, float64 payload."""
    tag = network_tag.encode("utf-8")
    destination.write(BASIS_MAGIC)
    destination.write(struct.pack("<I", BASIS_VERSION))
    destination.write(struct.pack("<H", len(tag)))
    destination.write(tag)
    destination.write(struct.pack("<H", len(bases)))
    for lid in sorted(bases):
        b = bases[lid]
        destination.write(struct.pack("<HII", lid, b.mean_vector.size, b.pc_count))
        destination.write(b.mean_vector.astype("<f8").tobytes())
        destination.write(b.explained_variance.astype("<f8").tobytes())
        destination.write(b.components.astype("<f8").tobytes())


def read_bases(source: BinaryIO) -> tuple[dict[int, PcaBasis], str]:
    magic = source.read(4)
    if magic != BASIS_MAGIC:
        raise PcaError(f"bad basis magic {magic!r}")
    (version,) = struct.unpack("<I", source.read(4))
    if version != BASIS_VERSION:
        raise PcaError(f"unsupported basis version {version}")
    (tag_len,) = struct.unpack("<H", source.read(2))
    tag = source.read(tag_len).decode("utf-8")
    (count,) = struct.unpack("<H", source.read(2))
    bases = {}
    for _ in range(count):
        lid, dim, pc = struct.unpack("<HII", source.read(10))
        mean = np.frombuffer(source.read(8 * dim), dtype="<f8")
        ev = np.frombuffer(source.read(8 * pc), dtype="<f8")
        comps = np.frombuffer(source.read(8 * pc * dim), dtype="<f8").reshape(pc, dim)
        bases[lid] = PcaBasis(lid, mean, comps, ev)
    return bases, tag
