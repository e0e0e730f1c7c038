"""Frozen vision backbones and their penultimate-layer extraction.

The declared latent dimension per backbone is part of the export contract:
a backbone whose actual penultimate activation size disagrees with its
declaration aborts the export. "Penultimate" means the input of the final
fully-connected classifier; for the conv backbones here that is the
global-pooled feature vector, obtained by swapping the final classifier
layer for an identity.

Note: stock torchvision vgg16's penultimate activation is 4096-d, which
does not match the declared 2048; vgg16 exports therefore abort by
construction (see README).
"""

from __future__ import annotations

import torch
from torch import nn
from torchvision import models
from torchvision.transforms import functional as TF

DECLARED_DIMS = {"resnet": 512, "googlenet": 1024, "vgg16": 2048}

# All supplied weights are ImageNet pre-trainings.
PRETRAINING_DATASET = "imagenet"

IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]


class WeightsUnavailableError(RuntimeError):
    """Backbone weights could not be obtained (download failed); retryable."""


class DimensionMismatchError(RuntimeError):
    """Actual penultimate dimension disagrees with the declared mapping."""


def build_backbone(name: str, pretrained: bool = True) -> nn.Module:
    """Classifier-stripped backbone in eval mode with frozen parameters.

    With pretrained=False the weights are randomly initialized from a fixed
    torch seed, so even untrained exports are deterministic.
    """
    if name not in DECLARED_DIMS:
        raise ValueError(f"unknown backbone {name!r}; choose from {sorted(DECLARED_DIMS)}")
    if not pretrained:
        torch.manual_seed(0)
    try:
        if name == "resnet":
            model = models.resnet18(weights=models.ResNet18_Weights.IMAGENET1K_V1 if pretrained else None)
            model.fc = nn.Identity()
        elif name == "googlenet":
            model = models.googlenet(
                weights=models.GoogLeNet_Weights.IMAGENET1K_V1 if pretrained else None,
                aux_logits=pretrained,  # torchvision requires aux heads when loading weights
                init_weights=not pretrained,
            )
            model.aux_logits = False
            model.aux1 = None
            model.aux2 = None
            model.fc = nn.Identity()
        else:  # vgg16
            model = models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1 if pretrained else None)
            model.classifier[-1] = nn.Identity()
    except Exception as exc:
        if pretrained and _looks_like_download_failure(exc):
            raise WeightsUnavailableError(
                f"could not obtain {name} weights ({exc}); retry with network access "
                f"or pass --no-pretrained"
            ) from exc
        raise
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)
    return model


def _looks_like_download_failure(exc: Exception) -> bool:
    text = f"{type(exc).__name__}: {exc}".lower()
    return any(token in text for token in ("url", "download", "http", "connection", "resolve", "timed out"))


def preprocess(images: torch.Tensor) -> torch.Tensor:
    """Canonical eval transform: resize 256, center-crop 224, normalize.

    Takes a float batch in [0, 1], shape (B, 3, H, W). No augmentation,
    fully deterministic.
    """
    images = TF.resize(images, [256], antialias=True)
    images = TF.center_crop(images, [224])
    return TF.normalize(images, IMAGENET_MEAN, IMAGENET_STD)


@torch.no_grad()
def extract_features(model: nn.Module, images: torch.Tensor) -> torch.Tensor:
    """Penultimate activations for a preprocessed batch; no gradients."""
    return model(preprocess(images))
