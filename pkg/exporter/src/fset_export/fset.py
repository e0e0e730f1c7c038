"""Minimal FSET1 writer.

Format (little-endian, no padding): magic "FSET", version u32=1, dim u32,
num_classes u32, count u64, then count records of (class u32, domain u32,
dim x f32). This is the file contract consumed by the training lab; its
reader is the validation oracle for everything written here.
"""

from __future__ import annotations

import struct

import numpy as np

_HEADER = struct.Struct("<4sIIIQ")


def write_fset(path, dim: int, num_classes: int, features: np.ndarray,
               class_labels: np.ndarray, domain_labels: np.ndarray) -> None:
    features = np.asarray(features, dtype=np.float32).reshape(-1, dim)
    n = features.shape[0]
    if not np.all(np.isfinite(features)):
        raise ValueError("refusing to write non-finite feature values")
    record = np.dtype([("class", "<u4"), ("domain", "<u4"), ("features", "<f4", (dim,))])
    body = np.empty(n, dtype=record)
    body["class"] = np.asarray(class_labels, dtype=np.uint32)
    body["domain"] = np.asarray(domain_labels, dtype=np.uint32)
    body["features"] = features
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"FSET", 1, dim, num_classes, n))
        fh.write(body.tobytes())
