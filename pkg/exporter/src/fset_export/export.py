"""The export operation: frozen backbone forward passes into an FSET1 file."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbones import (
    DECLARED_DIMS,
    PRETRAINING_DATASET,
    DimensionMismatchError,
    build_backbone,
    extract_features,
)
from .datasets import DEFAULT_TEST_SESSIONS, ImageSource, load_cifar, load_core50_directory
from .fset import write_fset


@dataclass(frozen=True)
class ExportSpec:
    dataset: str              # "cifar10" | "cifar100" | path to a core50-style directory
    backbone: str             # "resnet" | "googlenet" | "vgg16"
    split: str = "train"
    batch_size: int = 64
    device: str = "cpu"
    out: str = "features.fset"
    pretrained: bool = True
    labels: str = "category"  # core50-style only
    domains: str = "session"  # core50-style only
    data_root: str = "datasets"

    def declared_dim(self) -> int:
        if self.backbone not in DECLARED_DIMS:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        return DECLARED_DIMS[self.backbone]


def load_source(spec: ExportSpec) -> ImageSource:
    if spec.dataset in ("cifar10", "cifar100"):
        return load_cifar(spec.dataset, spec.data_root, spec.split)
    return load_core50_directory(
        spec.dataset, labels=spec.labels, domains=spec.domains,
        split=spec.split, test_sessions=DEFAULT_TEST_SESSIONS,
    )


def export(spec: ExportSpec) -> Path:
    """Run the frozen backbone over the dataset split and write FSET1.

    Aborts with DimensionMismatchError when the backbone's actual
    penultimate dimension disagrees with the declared mapping. Never
    computes gradients; backbone parameters are untouched.
    """
    declared = spec.declared_dim()
    if spec.pretrained and PRETRAINING_DATASET == spec.dataset:
        warnings.warn(
            f"backbone pre-trained on {PRETRAINING_DATASET!r} is being exported over the "
            f"same dataset; downstream accuracy will be optimistic",
            stacklevel=2,
        )
    source = load_source(spec)
    model = build_backbone(spec.backbone, pretrained=spec.pretrained).to(spec.device)

    chunks = []
    for start in range(0, len(source), spec.batch_size):
        stop = min(start + spec.batch_size, len(source))
        images = source.load_batch(start, stop).to(spec.device)
        feats = extract_features(model, images)
        if feats.shape[1] != declared:
            raise DimensionMismatchError(
                f"{spec.backbone} produced {feats.shape[1]}-d activations, "
                f"declared {declared}; aborting export"
            )
        chunks.append(feats.cpu().numpy().astype(np.float32))
    features = np.concatenate(chunks, axis=0)

    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fset(
        out, declared, source.num_classes, features,
        source.class_labels(), source.domain_labels(),
    )
    return out


def state_fingerprint(model: torch.nn.Module) -> bytes:
    """Byte-level digest of all parameters and buffers (order-stable)."""
    import hashlib

    digest = hashlib.blake2b(digest_size=16)
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.cpu().numpy().tobytes())
    return digest.digest()
