"""Feature vectors, labeled datasets, the FSET1 file format, and the
synthetic Gaussian generator that stands in for frozen-encoder embeddings.

FSET1 layout (all little-endian, no padding, no footer):

    magic   4 bytes ASCII "FSET"
    version u32 = 1
    dim     u32
    classes u32
    count   u64
    records count x (class u32, domain u32, dim x f32)

Features are stored as 32-bit floats on disk and widened to float64 in
memory. To keep write -> read an exact identity, feature values are
quantized to float32 precision when a FeatureSet is constructed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, FormatError, ValidationError
from .rng import Xoshiro256StarStar, derive_seed

_MAGIC = b"FSET"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")  # magic, version, dim, num_classes, count


@dataclass(frozen=True)
class Example:
    """One labeled feature vector."""

    features: np.ndarray
    class_label: int
    domain_label: int


class FeatureSet:
    """Immutable collection of (feature vector, class label, domain label) records.

    Storage is columnar: an (n, dim) float64 feature matrix plus label arrays.
    """

    def __init__(
        self,
        dim: int,
        num_classes: int,
        features: np.ndarray,
        class_labels: np.ndarray,
        domain_labels: np.ndarray,
    ):
        if dim < 1 or num_classes < 1:
            raise ValidationError("dim and num_classes must be positive")
        features = np.asarray(features, dtype=np.float64).reshape(-1, dim)
        # Quantize to f32 so in-memory values match the file representation.
        features = features.astype(np.float32).astype(np.float64)
        class_labels = np.asarray(class_labels, dtype=np.int64)
        domain_labels = np.asarray(domain_labels, dtype=np.int64)
        n = features.shape[0]
        if class_labels.shape != (n,) or domain_labels.shape != (n,):
            raise ValidationError("label arrays must match the number of feature rows")
        if not np.all(np.isfinite(features)):
            raise ValidationError("feature values must be finite")
        if n and (class_labels.min() < 0 or class_labels.max() >= num_classes):
            raise ValidationError("class labels must lie in [0, num_classes)")
        if n and domain_labels.min() < 0:
            raise ValidationError("domain labels must be non-negative")
        self.dim = dim
        self.num_classes = num_classes
        self.features = features
        self.class_labels = class_labels
        self.domain_labels = domain_labels
        self.features.setflags(write=False)
        self.class_labels.setflags(write=False)
        self.domain_labels.setflags(write=False)

    def __len__(self) -> int:
        return self.features.shape[0]

    def example(self, i: int) -> Example:
        return Example(self.features[i], int(self.class_labels[i]), int(self.domain_labels[i]))

    def __iter__(self):
        return (self.example(i) for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.class_labels, other.class_labels)
            and np.array_equal(self.domain_labels, other.domain_labels)
        )

    def __repr__(self) -> str:
        return (
            f"FeatureSet(dim={self.dim}, num_classes={self.num_classes}, "
            f"n={len(self)})"
        )

    def observed_classes(self) -> np.ndarray:
        return np.unique(self.class_labels)

    def observed_domains(self) -> np.ndarray:
        return np.unique(self.domain_labels)

    def take(self, indices: np.ndarray) -> "FeatureSet":
        """New FeatureSet holding the given rows, metadata preserved."""
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureSet(
            self.dim,
            self.num_classes,
            self.features[indices],
            self.class_labels[indices],
            self.domain_labels[indices],
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the Gaussian class/mode generator.

    Classes play the role of categories; modes play the role of the
    environment/object annotation that drives domain drift, so one generator
    feeds all three scenario kinds.
    """

    num_classes: int
    modes_per_class: int
    dim: int
    center_scale: float
    stddev: float
    train_per_mode: int
    test_per_mode: int
    seed: int

    def validate(self) -> None:
        for name in ("num_classes", "modes_per_class", "dim", "train_per_mode", "test_per_mode"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.center_scale <= 0:
            raise ValidationError("center_scale must be > 0")
        if self.stddev <= 0:
            raise ValidationError("stddev must be > 0")


def generate_synthetic(spec: SyntheticSpec) -> tuple[FeatureSet, FeatureSet]:
    """Draw (train, test) sets from one Gaussian cluster per (class, mode).

    Cluster centers are drawn once from N(0, center_scale^2 I); samples from
    N(center, stddev^2 I). Train and test come from the same clusters but
    from disjoint, independently-seeded sample streams. domain_label = mode.
    """
    spec.validate()
    center_rng = Xoshiro256StarStar(derive_seed(spec.seed, "centers"))
    centers = {}
    for c in range(spec.num_classes):
        for m in range(spec.modes_per_class):
            centers[(c, m)] = spec.center_scale * center_rng.normals(spec.dim)

    def draw(split: str, per_mode: int) -> FeatureSet:
        rows = []
        class_labels = []
        domain_labels = []
        for c in range(spec.num_classes):
            for m in range(spec.modes_per_class):
                rng = Xoshiro256StarStar(derive_seed(spec.seed, split, c, m))
                noise = rng.normals(per_mode * spec.dim).reshape(per_mode, spec.dim)
                rows.append(centers[(c, m)] + spec.stddev * noise)
                class_labels.extend([c] * per_mode)
                domain_labels.extend([m] * per_mode)
        return FeatureSet(
            spec.dim,
            spec.num_classes,
            np.concatenate(rows, axis=0),
            np.array(class_labels),
            np.array(domain_labels),
        )

    return draw("train", spec.train_per_mode), draw("test", spec.test_per_mode)


def write_feature_file(feature_set: FeatureSet, path) -> None:
    """Write the FSET1 binary representation of *feature_set* to *path*."""
    n = len(feature_set)
    header = _HEADER.pack(_MAGIC, _VERSION, feature_set.dim, feature_set.num_classes, n)
    body = np.empty(n, dtype=_record_dtype(feature_set.dim))
    body["class"] = feature_set.class_labels.astype(np.uint32)
    body["domain"] = feature_set.domain_labels.astype(np.uint32)
    body["features"] = feature_set.features.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_feature_file(path) -> FeatureSet:
    """Read an FSET1 file; inverse of :func:`write_feature_file`.

    Raises FormatError on bad magic/version, CorruptionError when the record
    count disagrees with the file length, ValidationError on non-finite
    feature values.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the FSET1 header")
    magic, version, dim, num_classes, count = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    dtype = _record_dtype(dim)
    expected = _HEADER.size + count * dtype.itemsize
    if len(raw) != expected:
        raise CorruptionError(
            f"{path}: header declares {count} records ({expected} bytes), file has {len(raw)} bytes"
        )
    body = np.frombuffer(raw, dtype=dtype, count=count, offset=_HEADER.size)
    features = body["features"].astype(np.float64).reshape(count, dim)
    if not np.all(np.isfinite(features)):
        raise ValidationError(f"{path}: non-finite feature values")
    return FeatureSet(
        dim,
        num_classes,
        features,
        body["class"].astype(np.int64),
        body["domain"].astype(np.int64),
    )


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [("class", "<u4"), ("domain", "<u4"), ("features", "<f4", (dim,))]
    )
