"""Supported visual encoders and their published interface contracts.

Each entry records the encoder's training regime (CVL / SUP / SSL), its
published embedding dimension, input resolution, and default
preprocessing, plus a builder that instantiates the architecture
locally. Weights are loaded from the hub when `pretrained=True`; the
default is a seeded random initialization so the extractor stays fully
functional offline (format, shapes, and determinism are unaffected by
the weights).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class ModelError(ValueError):
    """Raised when a model name cannot be resolved or built."""


@dataclass(frozen=True)
class ModelSpec:
    name: str
    regime: str  # CVL | SUP | SSL
    dim: int
    resolution: int
    resize_side: int
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    @property
    def preprocessing_fingerprint(self) -> str:
        mean = ",".join(f"{v:.4f}" for v in self.mean)
        std = ",".join(f"{v:.4f}" for v in self.std)
        return f"resize{self.resize_side}-crop{self.resolution}-mean{mean}-std{std}"


def _build_clip_vit_b32(pretrained: bool):
    from transformers import CLIPVisionConfig, CLIPVisionModelWithProjection

    if pretrained:
        model = CLIPVisionModelWithProjection.from_pretrained("openai/clip-vit-base-patch32")
    else:
        # default CLIPVisionConfig is exactly ViT-B/32 with a 512-d projection
        model = CLIPVisionModelWithProjection(CLIPVisionConfig())

    def forward(batch):
        return model(pixel_values=batch).image_embeds

    return model, forward


def _build_resnet18(pretrained: bool):
    from torchvision.models import ResNet18_Weights, resnet18

    model = resnet18(weights=ResNet18_Weights.IMAGENET1K_V1 if pretrained else None)
    model.fc = torch.nn.Identity()
    return model, model


def _build_vit_b16(pretrained: bool):
    from torchvision.models import ViT_B_16_Weights, vit_b_16

    model = vit_b_16(weights=ViT_B_16_Weights.IMAGENET1K_V1 if pretrained else None)
    model.heads = torch.nn.Identity()
    return model, model


def _build_dino_vits16(pretrained: bool):
    from transformers import ViTConfig, ViTModel

    if pretrained:
        model = ViTModel.from_pretrained("facebook/dino-vits16", add_pooling_layer=False)
    else:
        config = ViTConfig(
            hidden_size=384, num_hidden_layers=12, num_attention_heads=6,
            intermediate_size=1536, patch_size=16, image_size=224,
        )
        model = ViTModel(config, add_pooling_layer=False)

    def forward(batch):
        return model(pixel_values=batch).last_hidden_state[:, 0]  # class token

    return model, forward


_SPECS = {
    "clip-vit-b32": (
        ModelSpec("clip-vit-b32", "CVL", 512, 224, 224, CLIP_MEAN, CLIP_STD),
        _build_clip_vit_b32,
    ),
    "resnet18": (
        ModelSpec("resnet18", "SUP", 512, 224, 256, IMAGENET_MEAN, IMAGENET_STD),
        _build_resnet18,
    ),
    "vit-b16": (
        ModelSpec("vit-b16", "SUP", 768, 224, 256, IMAGENET_MEAN, IMAGENET_STD),
        _build_vit_b16,
    ),
    "dino-vits16": (
        ModelSpec("dino-vits16", "SSL", 384, 224, 256, IMAGENET_MEAN, IMAGENET_STD),
        _build_dino_vits16,
    ),
}


def list_models() -> list[ModelSpec]:
    """Stable table of supported encoders."""
    return [spec for spec, _ in _SPECS.values()]


def get_spec(name: str) -> ModelSpec:
    if name not in _SPECS:
        known = ", ".join(sorted(_SPECS))
        raise ModelError(f"unknown model {name!r}; supported: {known}")
    return _SPECS[name][0]


def build_model(name: str, pretrained: bool = False, seed: int = 0):
    """Instantiate (model, forward_fn); random init is seeded when untrained."""
    spec = get_spec(name)
    if not pretrained:
        torch.manual_seed(seed)
    model, forward = _SPECS[name][1](pretrained)
    model.eval()
    return spec, model, forward
