"""PatchGAN-style discriminators emitting logit score maps.

With the default ``n_layers=3`` a 64x64 input yields a 6x6 map and a 32x32
patch yields a 2x2 map (three stride-2 convs, one stride-1 conv, one score
conv; kernel 4, padding 1).
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .generator import ShapeMismatchError


def score_map_size(size: int, n_layers: int = 3) -> int:
    for _ in range(n_layers):
        size = (size + 2 - 4) // 2 + 1
    # stride-1 conv, then score conv
    return size - 2


class PatchDiscriminator(nn.Module):
    def __init__(self, in_channels: int, input_size: int, base_channels: int = 64, n_layers: int = 3):
        super().__init__()
        if score_map_size(input_size, n_layers) < 1:
            raise ValueError(f"input {input_size} too small for {n_layers} layers")
        self.in_channels = in_channels
        self.input_size = input_size
        layers: list[nn.Module] = [
            nn.Conv2d(in_channels, base_channels, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        ]
        ch = base_channels
        for i in range(1, n_layers):
            nxt = base_channels * min(2**i, 8)
            layers += [nn.Conv2d(ch, nxt, 4, stride=2, padding=1), nn.InstanceNorm2d(nxt), nn.LeakyReLU(0.2)]
            ch = nxt
        nxt = base_channels * min(2**n_layers, 8)
        layers += [nn.Conv2d(ch, nxt, 4, stride=1, padding=1), nn.InstanceNorm2d(nxt), nn.LeakyReLU(0.2)]
        layers.append(nn.Conv2d(nxt, 1, 4, stride=1, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = self.input_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.in_channels, s, s):
            raise ShapeMismatchError(f"expected (B, {self.in_channels}, {s}, {s}), got {tuple(x.shape)}")
        return self.net(x)


class Discriminators(nn.Module):
    """Shape (1-channel gray), texture (RGB) and local (RGB patch) discriminators."""

    def __init__(
        self,
        image_size: int = 64,
        patch_size: int = 32,
        base_channels: int = 64,
        n_layers: int = 3,
        local_layers: int | None = None,
    ):
        super().__init__()
        self.config = {
            "image_size": image_size,
            "patch_size": patch_size,
            "base_channels": base_channels,
            "n_layers": n_layers,
            "local_layers": local_layers,
        }
        self.image_size = image_size
        self.patch_size = patch_size
        self.shape = PatchDiscriminator(1, image_size, base_channels, n_layers)
        self.texture = PatchDiscriminator(3, image_size, base_channels, n_layers)
        self.local = PatchDiscriminator(3, patch_size, base_channels, local_layers or n_layers)

    def score_shape(self, img: torch.Tensor) -> torch.Tensor:
        if img.dim() == 4 and img.shape[1] == 3:
            if not (torch.equal(img[:, 0], img[:, 1]) and torch.equal(img[:, 1], img[:, 2])):
                raise ShapeMismatchError("shape discriminator expects a gray image (equal channels)")
            img = img[:, :1]
        return self.shape(img)

    def score_texture(self, img: torch.Tensor) -> torch.Tensor:
        return self.texture(img)

    def score_patch(self, patch: torch.Tensor) -> torch.Tensor:
        return self.local(patch)
