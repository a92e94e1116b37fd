"""Pluggable perceptual feature extractors for the contextual loss.

Two implementations share one interface (``layers`` plus ``forward(img, layers)``
returning ``{name: (B, C, h, w)}``):

* ``VGG19Features`` -- the pretrained 19-layer network. Weights come from
  ``$AGIS_VGG19_WEIGHTS`` (a torchvision ``state_dict`` file) or from the
  torchvision cache.
* ``TinyFeatures`` -- a fixed-seed random conv stack, for offline tests.
"""

from __future__ import annotations

import os
from pathlib import Path

import torch
import torch.nn as nn

# torchvision vgg19().features indices of the ReLU outputs
_VGG19_RELUS = {
    "relu1_1": 1, "relu1_2": 3,
    "relu2_1": 6, "relu2_2": 8,
    "relu3_1": 11, "relu3_2": 13, "relu3_3": 15, "relu3_4": 17,
    "relu4_1": 20, "relu4_2": 22, "relu4_3": 24, "relu4_4": 26,
    "relu5_1": 29, "relu5_2": 31, "relu5_3": 33, "relu5_4": 35,
}
DEFAULT_VGG_LAYERS = ("relu3_2", "relu4_2")
VGG_WEIGHTS_ENV = "AGIS_VGG19_WEIGHTS"


class UnknownLayerError(KeyError):
    pass


class FeatureExtractor(nn.Module):
    layers: tuple[str, ...] = ()
    available: tuple[str, ...] = ()

    def _check(self, layers):
        layers = tuple(layers or self.layers)
        for name in layers:
            if name not in self.available:
                raise UnknownLayerError(f"unknown layer {name!r}; available: {', '.join(self.available)}")
        return layers

    def forward(self, img: torch.Tensor, layers=None) -> dict[str, torch.Tensor]:
        raise NotImplementedError


class TinyFeatures(FeatureExtractor):
    """Two strided conv+ReLU stages with frozen seeded weights.

    On a 64x64 input: ``relu1`` is 32 channels at 32x32, ``relu2`` is 128 channels at 16x16.
    """

    available = ("relu1", "relu2")

    def __init__(self, seed: int = 0, layers=("relu1", "relu2"), widths=(32, 128)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.conv1 = nn.Conv2d(3, widths[0], 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(widths[0], widths[1], 3, stride=2, padding=1)
        with torch.no_grad():
            for conv in (self.conv1, self.conv2):
                fan_in = conv.weight[0].numel()
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
        self.requires_grad_(False)
        self.layers = self._check(layers)

    def forward(self, img, layers=None):
        layers = self._check(layers)
        h1 = torch.relu(self.conv1(img))
        out = {"relu1": h1}
        if "relu2" in layers:
            out["relu2"] = torch.relu(self.conv2(h1))
        return {k: out[k] for k in layers}


class VGG19Features(FeatureExtractor):
    available = tuple(_VGG19_RELUS)

    def __init__(self, layers=DEFAULT_VGG_LAYERS, weights_path: str | Path | None = None):
        super().__init__()
        from torchvision.models import vgg19

        self.layers = self._check(layers)
        net = vgg19(weights=None)
        path = weights_path or os.environ.get(VGG_WEIGHTS_ENV)
        if path:
            state = torch.load(path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        else:
            from torchvision.models import VGG19_Weights

            try:
                net.load_state_dict(VGG19_Weights.IMAGENET1K_V1.get_state_dict(progress=False))
            except Exception as exc:  # offline, no cache
                raise FileNotFoundError(
                    f"VGG19 weights unavailable; set ${VGG_WEIGHTS_ENV} to a torchvision state_dict file"
                ) from exc
        last = max(_VGG19_RELUS[name] for name in self.layers)
        self.body = net.features[: last + 1]
        self.requires_grad_(False)
        self.eval()
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    def forward(self, img, layers=None):
        layers = self._check(layers)
        want = {_VGG19_RELUS[n]: n for n in layers}
        x = ((img + 1) / 2 - self.mean) / self.std
        out = {}
        for i, mod in enumerate(self.body):
            x = mod(x)
            if i in want:
                # clone: later in-place ReLUs would overwrite the stored activation
                out[want[i]] = x.clone()
        return {n: out[n] for n in layers}


def extract_features(extractor: FeatureExtractor, img: torch.Tensor, layers=None) -> dict[str, torch.Tensor]:
    """Per-layer vector sets: ``{layer: (B, N, C)}`` with one vector per spatial position."""
    if img.dim() != 4 or img.shape[1] != 3:
        raise ValueError(f"expected (B, 3, H, W), got {tuple(img.shape)}")
    maps = extractor(img, layers)
    return {name: m.flatten(2).transpose(1, 2) for name, m in maps.items()}
