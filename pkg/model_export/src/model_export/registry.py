"""Catalog of exportable vision backbones.

Each entry pins everything the exporter needs to produce a portable
embedding graph: how to construct the torch module, what tensor geometry
it expects, which normalization constants its checkpoint was trained
with, and how spatial features are pooled into a single vector.  The
preprocessing values are copied verbatim into ``preprocess.json`` so a
consumer never has to guess them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

__all__ = [
    "BackboneSpec",
    "ExportError",
    "ExportWarning",
    "REGISTRY",
    "get_backbone",
    "list_backbones",
]


class ExportError(ValueError):
    """Raised when an export cannot be performed or fails verification."""


class ExportWarning(UserWarning):
    """Non-fatal export findings, e.g. a re-export that changed bytes."""


# Channel statistics shared by every ImageNet-trained checkpoint here.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class BackboneSpec:
    """Recipe for one exportable backbone.

    ``build`` takes a ``pretrained`` flag and returns an eval-mode module
    mapping a normalized float32 batch ``(N, 3, input_size, input_size)``
    to embeddings ``(N, embedding_dim)``.  Pooling is part of the module,
    not something the consumer applies afterwards.
    """

    name: str
    description: str
    source: str
    embedding_dim: int
    input_size: int
    resize_short_side: int
    norm_mean: tuple[float, float, float]
    norm_std: tuple[float, float, float]
    pooling: str  # "class_token" or "mean_pool"
    requires_download: bool
    build: Callable[[bool], "object"]


def _build_dinov2_vitl14(pretrained: bool):
    import torch

    if not pretrained:
        raise ExportError(
            "dinov2-vitl14 has no offline constructor; its weights must be "
            "fetched from torch hub (omit --random-weights)"
        )
    try:
        module = torch.hub.load("facebookresearch/dinov2", "dinov2_vitl14")
    except Exception as exc:
        raise ExportError(
            f"could not fetch dinov2-vitl14 from torch hub: {exc}"
        ) from exc
    # forward() returns the final-norm class token, already (N, 1024)
    return module.eval()


def _build_resnet50(pretrained: bool):
    import torch
    from torchvision.models import ResNet50_Weights, resnet50

    weights = ResNet50_Weights.IMAGENET1K_V2 if pretrained else None
    module = resnet50(weights=weights)
    # drop the classifier; forward() now ends at the 2048-d pooled features
    module.fc = torch.nn.Identity()
    return module.eval()


def _build_vit_b16(pretrained: bool):
    import torch
    from torchvision.models import ViT_B_16_Weights, vit_b_16

    weights = ViT_B_16_Weights.IMAGENET1K_V1 if pretrained else None
    module = vit_b_16(weights=weights)
    # drop the classification heads; forward() now returns the class token
    module.heads = torch.nn.Identity()
    return module.eval()


def _build_tiny(pretrained: bool):
    """Seeded toy CNN for exercising the export pipeline offline.

    The ``pretrained`` flag is ignored: weights always come from a fixed
    generator, so every build (and therefore every export) is identical.
    """
    import torch

    gen = torch.Generator().manual_seed(0)
    conv = torch.nn.Conv2d(3, 8, kernel_size=3, stride=2, padding=1)
    linear = torch.nn.Linear(8, 32)
    with torch.no_grad():
        for param in (conv.weight, conv.bias, linear.weight, linear.bias):
            param.copy_(torch.randn(param.shape, generator=gen) * 0.2)
    module = torch.nn.Sequential(
        conv,
        torch.nn.ReLU(),
        torch.nn.AdaptiveAvgPool2d(1),
        torch.nn.Flatten(),
        linear,
    )
    return module.eval()


_SPECS = (
    BackboneSpec(
        name="dinov2-vitl14",
        description="DINOv2 ViT-L/14 self-supervised features (class token)",
        source="torch.hub facebookresearch/dinov2 dinov2_vitl14",
        embedding_dim=1024,
        input_size=224,
        resize_short_side=256,
        norm_mean=IMAGENET_MEAN,
        norm_std=IMAGENET_STD,
        pooling="class_token",
        requires_download=True,
        build=_build_dinov2_vitl14,
    ),
    BackboneSpec(
        name="resnet50",
        description="torchvision ResNet-50 with the classifier removed "
        "(global-average-pooled features)",
        source="torchvision resnet50 IMAGENET1K_V2",
        embedding_dim=2048,
        input_size=224,
        resize_short_side=256,
        norm_mean=IMAGENET_MEAN,
        norm_std=IMAGENET_STD,
        pooling="mean_pool",
        requires_download=True,
        build=_build_resnet50,
    ),
    BackboneSpec(
        name="vit-b16",
        description="torchvision ViT-B/16 with the classification heads "
        "removed (class token)",
        source="torchvision vit_b_16 IMAGENET1K_V1",
        embedding_dim=768,
        input_size=224,
        resize_short_side=256,
        norm_mean=IMAGENET_MEAN,
        norm_std=IMAGENET_STD,
        pooling="class_token",
        requires_download=True,
        build=_build_vit_b16,
    ),
    BackboneSpec(
        name="tiny",
        description="seeded toy CNN for offline pipeline tests",
        source="seeded local construction (no checkpoint)",
        embedding_dim=32,
        input_size=16,
        resize_short_side=16,
        norm_mean=(0.5, 0.5, 0.5),
        norm_std=(0.25, 0.25, 0.25),
        pooling="mean_pool",
        requires_download=False,
        build=_build_tiny,
    ),
)

REGISTRY: dict[str, BackboneSpec] = {spec.name: spec for spec in _SPECS}


def get_backbone(name: str) -> BackboneSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        available = ", ".join(sorted(REGISTRY))
        raise ExportError(
            f"unknown backbone {name!r} (available: {available})"
        ) from None


def list_backbones() -> tuple[BackboneSpec, ...]:
    return _SPECS
