"""HEAD checkpoint files: one little-endian envelope for every head family.

    magic   4 bytes ASCII "HEAD"
    version u32 = 1
    kind    u8
    mask    u8
    N       u32   (number of classes)
    h       u32   (feature dimension)
    payload       (kind-specific, f64 throughout)

Gradient heads (kinds 0-4) store A row-major, then b, then gamma. Kind bytes
16+ are reserved for gradient-free heads; their payloads carry the state
needed to resume observation. Optimizer velocity is not checkpointed.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CorruptionError, FormatError
from .gradient_heads import GradientHead, HeadKind, MaskMode
from .similarity_heads import KnnState, PrototypeState, SldaState

_MAGIC = b"HEAD"
_VERSION = 1
_HEADER = struct.Struct("<4sIBBII")

_KIND_BYTES = {
    HeadKind.LINEAR: 0,
    HeadKind.LINEAR_NO_BIAS: 1,
    HeadKind.WEIGHT_NORM: 2,
    HeadKind.COS_LAYER: 3,
    HeadKind.ORIGINAL_WEIGHT_NORM: 4,
}
_KIND_FROM_BYTE = {v: k for k, v in _KIND_BYTES.items()}

KIND_KNN = 16
KIND_MEAN = 17
KIND_MEDIAN = 18
KIND_SLDA = 19

_MASK_BYTES = {MaskMode.NONE: 0, MaskMode.SINGLE: 1, MaskMode.GROUP: 2}
_MASK_FROM_BYTE = {v: k for k, v in _MASK_BYTES.items()}

AnyHead = GradientHead | KnnState | PrototypeState | SldaState


def save_head(head: AnyHead, path) -> None:
    if isinstance(head, GradientHead):
        kind_byte = _KIND_BYTES[head.kind]
        mask_byte = _MASK_BYTES[head.mask]
        n, h = head.num_classes, head.dim
        payload = (
            head.A.astype("<f8").tobytes()
            + head.b.astype("<f8").tobytes()
            + head.gamma.astype("<f8").tobytes()
        )
    elif isinstance(head, KnnState):
        kind_byte, mask_byte = KIND_KNN, 0
        n, h = head.num_classes, head.dim
        stored = np.asarray(head._features, dtype=np.float64).reshape(len(head), h)
        labels = np.asarray(head._labels, dtype=np.uint32)
        payload = (
            struct.pack("<IQ", head.k, len(head))
            + labels.astype("<u4").tobytes()
            + stored.astype("<f8").tobytes()
        )
    elif isinstance(head, PrototypeState):
        n, h = head.num_classes, head.dim
        mask_byte = 0
        if head.mode == PrototypeState.MEAN:
            kind_byte = KIND_MEAN
            payload = head.counts.astype("<u8").tobytes() + head.means.astype("<f8").tobytes()
        else:
            kind_byte = KIND_MEDIAN
            labels = np.concatenate(
                [np.full(len(v), c, dtype=np.uint32) for c, v in enumerate(head._stored)]
                or [np.empty(0, dtype=np.uint32)]
            )
            stored = np.concatenate(
                [np.asarray(v).reshape(-1, h) for v in head._stored if v]
                or [np.empty((0, h))]
            )
            payload = (
                struct.pack("<Q", len(labels))
                + labels.astype("<u4").tobytes()
                + stored.astype("<f8").tobytes()
            )
    elif isinstance(head, SldaState):
        kind_byte, mask_byte = KIND_SLDA, 0
        n, h = head.num_classes, head.dim
        payload = (
            struct.pack("<Q", head.total)
            + head.counts.astype("<u8").tobytes()
            + head.means.astype("<f8").tobytes()
            + head.sigma.astype("<f8").tobytes()
        )
    else:
        raise TypeError(f"cannot checkpoint {type(head).__name__}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, kind_byte, mask_byte, n, h))
        fh.write(payload)


def load_head(path) -> AnyHead:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the HEAD header")
    magic, version, kind_byte, mask_byte, n, h = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size :]

    if kind_byte in _KIND_FROM_BYTE:
        expected = 8 * (n * h + 2 * n)
        if len(body) != expected:
            raise CorruptionError(f"{path}: expected {expected} payload bytes, got {len(body)}")
        A = np.frombuffer(body, dtype="<f8", count=n * h).reshape(n, h)
        b = np.frombuffer(body, dtype="<f8", count=n, offset=8 * n * h)
        gamma = np.frombuffer(body, dtype="<f8", count=n, offset=8 * (n * h + n))
        return GradientHead(
            _KIND_FROM_BYTE[kind_byte], A.copy(), b.copy(), gamma.copy(),
            _MASK_FROM_BYTE[mask_byte],
        )

    if kind_byte == KIND_KNN:
        k, count = struct.unpack_from("<IQ", body)
        offset = struct.calcsize("<IQ")
        if len(body) != offset + 4 * count + 8 * count * h:
            raise CorruptionError(f"{path}: knn payload length mismatch")
        labels = np.frombuffer(body, dtype="<u4", count=count, offset=offset)
        stored = np.frombuffer(
            body, dtype="<f8", count=count * h, offset=offset + 4 * count
        ).reshape(count, h)
        state = KnnState(k, n, h)
        for z, y in zip(stored, labels):
            state.observe(z, int(y))
        return state

    if kind_byte in (KIND_MEAN, KIND_MEDIAN):
        state = PrototypeState(
            PrototypeState.MEAN if kind_byte == KIND_MEAN else PrototypeState.MEDIAN, n, h
        )
        if kind_byte == KIND_MEAN:
            if len(body) != 8 * n + 8 * n * h:
                raise CorruptionError(f"{path}: mean payload length mismatch")
            state.counts = np.frombuffer(body, dtype="<u8", count=n).astype(np.int64)
            state.means = np.frombuffer(body, dtype="<f8", count=n * h, offset=8 * n).reshape(n, h).copy()
            return state
        (count,) = struct.unpack_from("<Q", body)
        offset = 8
        if len(body) != offset + 4 * count + 8 * count * h:
            raise CorruptionError(f"{path}: median payload length mismatch")
        labels = np.frombuffer(body, dtype="<u4", count=count, offset=offset)
        stored = np.frombuffer(
            body, dtype="<f8", count=count * h, offset=offset + 4 * count
        ).reshape(count, h)
        for z, y in zip(stored, labels):
            state.observe(z, int(y))
        return state

    if kind_byte == KIND_SLDA:
        (total,) = struct.unpack_from("<Q", body)
        offset = 8
        if len(body) != offset + 8 * n + 8 * n * h + 8 * h * h:
            raise CorruptionError(f"{path}: slda payload length mismatch")
        state = SldaState(n, h)
        state.total = total
        state.counts = np.frombuffer(body, dtype="<u8", count=n, offset=offset).astype(np.int64)
        offset += 8 * n
        state.means = np.frombuffer(body, dtype="<f8", count=n * h, offset=offset).reshape(n, h).copy()
        offset += 8 * n * h
        state.sigma = np.frombuffer(body, dtype="<f8", count=h * h, offset=offset).reshape(h, h).copy()
        return state

    raise FormatError(f"{path}: unknown head kind byte {kind_byte}")
