"""Dual-branch encoder/decoder generator.

Two encoders (content glyph, channel-stacked style references) feed two
decoders. The shape decoder emits a one-channel gray glyph; the texture
decoder additionally sees the shape decoder's features at every level and
finishes with a convolution over ``[features, y_gray]``.

Level ``k`` (1-based) of either encoder works at spatial size ``S / 2**k``
with ``channels[k-1]`` feature maps. Decoder level ``k`` consumes tensors at
``S / 2**k`` and up-samples to ``S / 2**(k-1)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    depth: int = 6
    base_channels: int = 64
    max_channels: int = 512
    style_count: int = 4
    image_size: int = 64
    image_channels: int = 3
    texture_features: int | None = None  # channels feeding the final texture conv; base_channels if None

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1 or self.max_channels < self.base_channels:
            raise ValueError("invalid channel schedule")
        if self.style_count < 1:
            raise ValueError("style_count must be >= 1")
        if self.image_size % (2**self.depth) != 0:
            raise ValueError(f"image_size {self.image_size} not divisible by 2**{self.depth}")

    @property
    def channels(self) -> list[int]:
        """Encoder output channels per level, doubling from the base up to the cap."""
        return [min(self.base_channels * 2**k, self.max_channels) for k in range(self.depth)]

    @property
    def final_features(self) -> int:
        return self.texture_features or self.base_channels

    def spatial(self, level: int) -> int:
        return self.image_size // 2**level

    def shape_decoder_in(self, level: int) -> int:
        ch = self.channels
        prev = 0 if level == self.depth else ch[level - 1]
        return prev + 2 * ch[level - 1]

    def shape_decoder_out(self, level: int) -> int:
        return 1 if level == 1 else self.channels[level - 2]

    def texture_decoder_in(self, level: int) -> int:
        # previous texture features + content + style + shape-decoder features at this scale
        ch = self.channels
        if level == self.depth:
            return 2 * ch[level - 1]
        return 4 * ch[level - 1]

    def texture_decoder_out(self, level: int) -> int:
        return self.final_features if level == 1 else self.channels[level - 2]

    def final_in(self) -> int:
        return self.final_features + 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderActivations:
    """Per-level feature tensors, index 0 is level 1 (highest resolution)."""

    levels: list[torch.Tensor] = field(default_factory=list)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, level: int) -> torch.Tensor:
        return self.levels[level - 1]


def _down(cin: int, cout: int, norm: bool) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(cin, cout, 4, stride=2, padding=1)]
    if norm:
        layers.append(nn.InstanceNorm2d(cout))
    layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _up(cin: int, cout: int, norm: bool, head: bool = False) -> nn.Sequential:
    layers: list[nn.Module] = [nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1)]
    if head:
        layers.append(nn.Tanh())
        return nn.Sequential(*layers)
    if norm:
        layers.append(nn.InstanceNorm2d(cout))
    layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class Encoder(nn.Module):
    def __init__(self, in_channels: int, spec: GeneratorSpec):
        super().__init__()
        self.in_channels = in_channels
        ch = spec.channels
        blocks = []
        for k in range(spec.depth):
            cin = in_channels if k == 0 else ch[k - 1]
            # instance norm is undefined on a 1x1 map, and the first layer keeps raw input statistics
            norm = k > 0 and spec.spatial(k + 1) > 1
            blocks.append(_down(cin, ch[k], norm))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor) -> EncoderActivations:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatchError(f"expected (B, {self.in_channels}, H, W), got {tuple(x.shape)}")
        acts = []
        for block in self.blocks:
            x = block(x)
            acts.append(x)
        return EncoderActivations(acts)


class ShapeDecoder(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.blocks = nn.ModuleList(
            _up(spec.shape_decoder_in(k), spec.shape_decoder_out(k), norm=True, head=(k == 1))
            for k in range(1, spec.depth + 1)
        )

    def forward(self, content: EncoderActivations, style: EncoderActivations):
        """Returns ``(y_gray, feats)`` where ``feats[k-1]`` is the decoder tensor at scale ``S/2**k``.

        ``feats[depth-1]`` is absent (nothing decoded yet at the bottleneck), so the
        list has ``depth - 1`` entries.
        """
        depth = self.spec.depth
        _check_levels(content, style, depth)
        feats: list[torch.Tensor] = []
        h = None
        for k in range(depth, 0, -1):
            parts = [content[k], style[k]] if h is None else [h, content[k], style[k]]
            h = self.blocks[k - 1](torch.cat(parts, dim=1))
            if k > 1:
                feats.append(h)
        feats.reverse()
        return h, feats


class TextureDecoder(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.blocks = nn.ModuleList(
            _up(spec.texture_decoder_in(k), spec.texture_decoder_out(k), norm=True)
            for k in range(1, spec.depth + 1)
        )
        self.final = nn.Sequential(
            nn.Conv2d(spec.final_in(), spec.image_channels, 3, stride=1, padding=1),
            nn.Tanh(),
        )

    def forward(self, content, style, shape_feats, y_gray):
        depth = self.spec.depth
        _check_levels(content, style, depth)
        if shape_feats is None or len(shape_feats) != depth - 1:
            raise ShapeMismatchError("texture decoder needs the shape decoder's intermediate features")
        h = None
        for k in range(depth, 0, -1):
            if h is None:
                parts = [content[k], style[k]]
            else:
                parts = [h, content[k], style[k], shape_feats[k - 1]]
            h = self.blocks[k - 1](torch.cat(parts, dim=1))
        return self.final(torch.cat([h, y_gray], dim=1))


def _check_levels(content: EncoderActivations, style: EncoderActivations, depth: int):
    if len(content) != depth or len(style) != depth:
        raise ShapeMismatchError(f"expected {depth} encoder levels, got {len(content)} and {len(style)}")
    for k in range(1, depth + 1):
        if content[k].shape[-2:] != style[k].shape[-2:]:
            raise ShapeMismatchError(
                f"level {k}: content {tuple(content[k].shape)} vs style {tuple(style[k].shape)}"
            )


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec | None = None):
        super().__init__()
        self.spec = spec or GeneratorSpec()
        c = self.spec.image_channels
        self.content_encoder = Encoder(c, self.spec)
        self.style_encoder = Encoder(c * self.spec.style_count, self.spec)
        self.shape_decoder = ShapeDecoder(self.spec)
        self.texture_decoder = TextureDecoder(self.spec)

    def _check_input(self, x: torch.Tensor, channels: int, what: str):
        s = self.spec.image_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (channels, s, s):
            raise ShapeMismatchError(f"{what}: expected (B, {channels}, {s}, {s}), got {tuple(x.shape)}")

    def encode_content(self, x_c: torch.Tensor) -> EncoderActivations:
        self._check_input(x_c, self.spec.image_channels, "content")
        return self.content_encoder(x_c)

    def encode_style(self, x_s: torch.Tensor) -> EncoderActivations:
        self._check_input(x_s, self.spec.image_channels * self.spec.style_count, "style")
        return self.style_encoder(x_s)

    def decode_shape(self, content, style):
        return self.shape_decoder(content, style)

    def decode_texture(self, content, style, shape_feats, y_gray):
        return self.texture_decoder(content, style, shape_feats, y_gray)

    def forward(self, x_c: torch.Tensor, x_s: torch.Tensor):
        content = self.encode_content(x_c)
        style = self.encode_style(x_s)
        if content[1].shape[0] != style[1].shape[0]:
            raise ShapeMismatchError("content and style batch sizes differ")
        y_gray, shape_feats = self.decode_shape(content, style)
        y = self.decode_texture(content, style, shape_feats, y_gray)
        return y_gray, y


def gray_to_rgb(y_gray: torch.Tensor) -> torch.Tensor:
    """Replicate a (B, 1, H, W) gray image to three identical channels."""
    return y_gray.expand(-1, 3, -1, -1)
