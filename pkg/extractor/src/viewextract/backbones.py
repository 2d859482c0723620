"""Frozen CNN backbones exposing penultimate (global-pooled) embeddings.

Checkpoints are optional: without a weights directory each backbone is
built with a fixed seed so repeated extraction stays file-identical. With
``weights_dir`` set, ``<name>.pt`` state dicts are loaded and missing
files raise MissingWeights.
"""

from __future__ import annotations

from pathlib import Path

import torch
from torch import nn
from torchvision import models

from .errors import BadPlan, MissingWeights

_INIT_SEED = 0x5EED
_NORM_MEAN = (0.485, 0.456, 0.406)
_NORM_STD = (0.229, 0.224, 0.225)


def _resnet18():
    m = models.resnet18(weights=None)
    return nn.Sequential(*list(m.children())[:-1]), 512


def _mobilenet():
    m = models.mobilenet_v2(weights=None)

    class Pooled(nn.Module):
        def __init__(self, features):
            super().__init__()
            self.features = features

        def forward(self, x):
            return self.features(x).mean([2, 3])

    return Pooled(m.features), 1280


def _wide_resnet():
    m = models.wide_resnet50_2(weights=None)
    return nn.Sequential(*list(m.children())[:-1]), 2048


REGISTRY = {
    "resnet18": _resnet18,
    "mobilenet": _mobilenet,
    "wide-resnet": _wide_resnet,
}


def build_backbone(name: str, weights_dir: str | None = None):
    """Frozen eval-mode embedding module plus its output dimension."""
    if name not in REGISTRY:
        raise BadPlan(f"unknown backbone '{name}', expected one of {sorted(REGISTRY)}")
    torch.manual_seed(_INIT_SEED)
    module, dim = REGISTRY[name]()
    if weights_dir is not None:
        path = Path(weights_dir) / f"{name}.pt"
        if not path.exists():
            raise MissingWeights(f"no checkpoint for '{name}' at {path}")
        state = torch.load(path, map_location="cpu", weights_only=True)
        module.load_state_dict(state)
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module, dim


def embed(module: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    """(n, 3, h, w) float batch -> (n, d) embeddings."""
    mean = torch.tensor(_NORM_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(_NORM_STD).view(1, 3, 1, 1)
    with torch.no_grad():
        out = module((batch - mean) / std)
    return out.reshape(out.shape[0], -1)
