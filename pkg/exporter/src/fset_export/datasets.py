"""Image sources for export: torchvision CIFAR datasets and Core50-style
directory trees.

Core50-style layout (the canonical archive structure):

    root/s<session>/o<object>/<frames>.png|jpg|jpeg

Sessions are environments; objects carry the class annotation. Class labels
come from the object id (``object`` mode, object-1) or its category
(``category`` mode, (object-1)//5, five objects per category). Domain labels
are the session id by default (lifelong-style drift) or the object id
(mixed-style drift). The canonical test split is sessions {3, 7, 10}.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

DEFAULT_TEST_SESSIONS = frozenset({3, 7, 10})
OBJECTS_PER_CATEGORY = 5

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class DatasetUnavailableError(RuntimeError):
    """Dataset could not be obtained (download failed); retryable."""


@dataclass(frozen=True)
class ImageRecord:
    path: Path
    class_label: int
    domain_label: int


@dataclass
class ImageSource:
    """A materialized split: per-record labels plus a pixel loader."""

    name: str
    num_classes: int
    records: list
    _arrays: np.ndarray | None = None  # (n, H, W, 3) uint8 for in-memory sets

    def __len__(self) -> int:
        return len(self.records)

    def class_labels(self) -> np.ndarray:
        return np.array([r.class_label for r in self.records], dtype=np.int64)

    def domain_labels(self) -> np.ndarray:
        return np.array([r.domain_label for r in self.records], dtype=np.int64)

    def load_batch(self, start: int, stop: int) -> torch.Tensor:
        """Float tensor (B, 3, H, W) in [0, 1]."""
        if self._arrays is not None:
            block = self._arrays[start:stop]
        else:
            block = np.stack([
                np.asarray(Image.open(r.path).convert("RGB"))
                for r in self.records[start:stop]
            ])
        return torch.from_numpy(block).permute(0, 3, 1, 2).float() / 255.0


def load_core50_directory(
    root,
    labels: str = "category",
    domains: str = "session",
    split: str = "train",
    test_sessions: frozenset = DEFAULT_TEST_SESSIONS,
) -> ImageSource:
    root = Path(root)
    if labels not in ("category", "object"):
        raise ValueError(f"labels must be 'category' or 'object', got {labels!r}")
    if domains not in ("session", "object"):
        raise ValueError(f"domains must be 'session' or 'object', got {domains!r}")
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    if not root.is_dir():
        raise DatasetUnavailableError(f"{root}: not a directory")

    records = []
    max_object = 0
    for session_dir in sorted(root.glob("s*")):
        match = re.fullmatch(r"s(\d+)", session_dir.name)
        if match is None or not session_dir.is_dir():
            continue
        session = int(match.group(1))
        in_test = session in test_sessions
        if (split == "test") != in_test:
            continue
        for object_dir in sorted(session_dir.glob("o*")):
            obj_match = re.fullmatch(r"o(\d+)", object_dir.name)
            if obj_match is None or not object_dir.is_dir():
                continue
            obj = int(obj_match.group(1))
            max_object = max(max_object, obj)
            if labels == "object":
                class_label = obj - 1
            else:
                class_label = (obj - 1) // OBJECTS_PER_CATEGORY
            domain_label = (session - 1) if domains == "session" else (obj - 1)
            for frame in sorted(object_dir.iterdir()):
                if frame.suffix.lower() in _IMAGE_SUFFIXES:
                    records.append(ImageRecord(frame, class_label, domain_label))
    if not records:
        raise DatasetUnavailableError(f"{root}: no s*/o*/ images found for split {split!r}")
    if labels == "object":
        num_classes = max_object
    else:
        num_classes = (max_object + OBJECTS_PER_CATEGORY - 1) // OBJECTS_PER_CATEGORY
    return ImageSource(name=f"core50:{root}", num_classes=num_classes, records=records)


def load_cifar(name: str, root, split: str) -> ImageSource:
    """CIFAR10/CIFAR100 via torchvision; downloads into *root* if needed."""
    from torchvision import datasets as tv_datasets

    cls = {"cifar10": tv_datasets.CIFAR10, "cifar100": tv_datasets.CIFAR100}[name]
    try:
        ds = cls(root=str(root), train=(split == "train"), download=True)
    except Exception as exc:
        raise DatasetUnavailableError(f"could not obtain {name} ({exc}); retry later") from exc
    arrays = ds.data  # (n, 32, 32, 3) uint8
    labels = np.asarray(ds.targets, dtype=np.int64)
    records = [ImageRecord(Path(""), int(y), 0) for y in labels]
    return ImageSource(
        name=name,
        num_classes=10 if name == "cifar10" else 100,
        records=records,
        _arrays=arrays,
    )
