"""Gradient and stripe texturing of binary glyphs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .glyphs import coverage

RGB = tuple[int, int, int]


class InvalidTextureError(ValueError):
    pass


@dataclass(frozen=True)
class TextureSpec:
    """Either a two-stop linear gradient or a two-color stripe pattern.

    ``angle`` is in degrees; 0 runs left to right. For stripes, ``period`` is the
    repeat length in pixels and ``width`` the length of the first color within it.
    """

    kind: str
    colors: tuple[RGB, RGB]
    angle: float = 0.0
    period: float = 8.0
    width: float = 4.0

    def validate(self) -> None:
        if self.kind not in ("gradient", "stripes"):
            raise InvalidTextureError(f"unknown texture kind {self.kind!r}")
        if len(self.colors) != 2:
            raise InvalidTextureError("exactly two colors required")
        for c in self.colors:
            if len(c) != 3 or any((not isinstance(v, (int, np.integer))) or v < 0 or v > 255 for v in c):
                raise InvalidTextureError(f"invalid RGB color {c!r}")
        if not math.isfinite(self.angle):
            raise InvalidTextureError("angle must be finite")
        if self.kind == "stripes":
            if not self.period >= 2:
                raise InvalidTextureError(f"stripe period must be >= 2 px, got {self.period}")
            if not 0 < self.width < self.period:
                raise InvalidTextureError("stripe width must lie strictly inside the period")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "colors": [list(c) for c in self.colors],
            "angle": self.angle,
            "period": self.period,
            "width": self.width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextureSpec":
        return cls(
            kind=d["kind"],
            colors=tuple(tuple(int(v) for v in c) for c in d["colors"]),
            angle=float(d.get("angle", 0.0)),
            period=float(d.get("period", 8.0)),
            width=float(d.get("width", 4.0)),
        )


def _field(spec: TextureSpec, h: int, w: int) -> np.ndarray:
    """Texture color per pixel in [-1, 1], shape (h, w, 3)."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = math.radians(spec.angle)
    proj = xx * math.cos(theta) + yy * math.sin(theta)
    c0 = np.asarray(spec.colors[0], dtype=np.float64) / 127.5 - 1.0
    c1 = np.asarray(spec.colors[1], dtype=np.float64) / 127.5 - 1.0
    if spec.kind == "gradient":
        lo, hi = proj.min(), proj.max()
        t = (proj - lo) / (hi - lo) if hi > lo else np.zeros_like(proj)
        t = t[..., None]
        return c0 * (1.0 - t) + c1 * t
    phase = np.mod(proj, spec.period)
    first = (phase < spec.width)[..., None]
    return np.where(first, c0, c1)


def apply_texture(glyph: np.ndarray, spec: TextureSpec) -> np.ndarray:
    """Fill the glyph's ink with the texture; white background is left untouched.

    Partially covered (anti-aliased) pixels blend texture and white by coverage,
    so a fully covered pixel takes the texture color exactly.
    """
    spec.validate()
    glyph = np.asarray(glyph, dtype=np.float32)
    if glyph.ndim != 3 or glyph.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3), got {glyph.shape}")
    alpha = coverage(glyph)[..., None].astype(np.float64)
    tex = _field(spec, glyph.shape[0], glyph.shape[1])
    out = alpha * tex + (1.0 - alpha) * 1.0
    out = np.where(alpha > 0, out, glyph)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def texture_presets(count: int, seed: int) -> list[TextureSpec]:
    """``count`` distinct seeded textures, alternating gradients and stripes."""
    rng = np.random.default_rng(seed)
    out: list[TextureSpec] = []
    seen: set = set()
    while len(out) < count:
        # dark-ish saturated colors so the glyph stays visible against white
        c0 = tuple(int(v) for v in rng.integers(0, 200, size=3))
        c1 = tuple(int(v) for v in rng.integers(0, 200, size=3))
        if sum(abs(a - b) for a, b in zip(c0, c1)) < 90:
            continue
        angle = float(rng.choice([0.0, 45.0, 90.0, 135.0]))
        if len(out) % 2 == 0:
            spec = TextureSpec("gradient", (c0, c1), angle=angle)
        else:
            period = float(rng.integers(4, 13))
            spec = TextureSpec("stripes", (c0, c1), angle=angle, period=period, width=period / 2)
        key = (spec.kind, spec.colors)
        if key in seen:
            continue
        seen.add(key)
        out.append(spec)
    return out
