"""Glyph rasterization and the [-1, 1] pixel convention.

A glyph image is a float32 ``(H, W, C)`` numpy array with values in
``[-1, 1]``: white background is ``+1``, ink is ``-1``. On disk images are
8-bit PNGs and ``p -> p / 127.5 - 1`` maps them back.
"""

from __future__ import annotations

import functools
import importlib.util
import os
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

INNER_BOX = 54  # glyph bbox is scaled to fit this box on a 64 px canvas
MIN_CANVAS = 16
_SUPERSAMPLE = 4

# Rec.601 luma
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114

DEFAULT_CONTENT_FONT = "DejaVuSansMono.ttf"


class MissingGlyphError(KeyError):
    def __init__(self, font_id: str, char: str):
        super().__init__(f"font {font_id!r} has no glyph for {char!r} (U+{ord(char):04X})")
        self.font_id = font_id
        self.char = char


class InvalidCanvasError(ValueError):
    pass


def _font_dirs() -> list[Path]:
    dirs = [Path(p) for p in os.environ.get("AGIS_FONT_PATH", "").split(os.pathsep) if p]
    dirs += [Path("/usr/share/fonts"), Path("/usr/local/share/fonts"), Path.home() / ".fonts"]
    spec = importlib.util.find_spec("matplotlib")
    if spec is not None and spec.origin:
        dirs.append(Path(spec.origin).parent / "mpl-data" / "fonts" / "ttf")
    return dirs


@functools.lru_cache(maxsize=None)
def resolve_font(font_id: str) -> Path:
    """Turn a font id (a path, or a bare file name searched in the font dirs) into a path."""
    p = Path(font_id)
    if p.is_file():
        return p
    for d in _font_dirs():
        if not d.is_dir():
            continue
        hits = sorted(d.rglob(p.name))
        if hits:
            return hits[0]
    raise FileNotFoundError(f"font not found: {font_id}")


@functools.lru_cache(maxsize=None)
def _cmap(path: Path) -> frozenset[int]:
    from fontTools.ttLib import TTFont

    with TTFont(str(path), lazy=True) as f:
        return frozenset(f.getBestCmap() or {})


def has_glyph(font_id: str, char: str) -> bool:
    return ord(char) in _cmap(resolve_font(font_id))


@functools.lru_cache(maxsize=64)
def _truetype(path: Path, size: int) -> ImageFont.FreeTypeFont:
    return ImageFont.truetype(str(path), size)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap an image onto the 8-bit grid so it survives a PNG round trip exactly."""
    return from_uint8(to_uint8(img))


def render_glyph(font_id: str, char: str, canvas: int = 64) -> np.ndarray:
    """Render ``char`` black-on-white, scaled into the fixed inner box and centered.

    The supersampled raster is thresholded at half coverage, so the result is
    exactly binary: a ``(canvas, canvas, 3)`` float32 image of +1 and -1.
    """
    if not isinstance(canvas, int) or canvas < MIN_CANVAS:
        raise InvalidCanvasError(f"canvas must be an int >= {MIN_CANVAS}, got {canvas!r}")
    if len(char) != 1:
        raise ValueError(f"expected a single character, got {char!r}")
    path = resolve_font(font_id)
    if ord(char) not in _cmap(path):
        raise MissingGlyphError(font_id, char)

    inner = max(1, round(canvas * INNER_BOX / 64))
    big = inner * _SUPERSAMPLE
    font = _truetype(path, big)
    left, top, right, bottom = font.getbbox(char)
    w, h = right - left, bottom - top
    if w <= 0 or h <= 0:
        raise MissingGlyphError(font_id, char)
    ink = Image.new("L", (w + 2, h + 2), 0)
    ImageDraw.Draw(ink).text((1 - left, 1 - top), char, fill=255, font=font)
    bbox = ink.getbbox()
    if bbox is None:
        raise MissingGlyphError(font_id, char)
    ink = ink.crop(bbox)

    scale = inner / max(ink.size)
    tw = max(1, round(ink.size[0] * scale))
    th = max(1, round(ink.size[1] * scale))
    ink = ink.resize((tw, th), Image.LANCZOS)
    page = Image.new("L", (canvas, canvas), 0)
    page.paste(ink, ((canvas - tw) // 2, (canvas - th) // 2))

    ink_mask = np.asarray(page, dtype=np.uint8) >= 128
    gray = np.where(ink_mask, 0, 255).astype(np.uint8)
    return from_uint8(np.repeat(gray[:, :, None], 3, axis=2))


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Luminance-weighted gray, replicated over three exactly equal channels.

    Written as ``g + wr*(r-g) + wb*(b-g)`` so an already-gray pixel (including
    pure white) maps to itself bit for bit.
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3), got {img.shape}")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = g + LUMA_R * (r - g) + LUMA_B * (b - g)
    y = y.astype(img.dtype, copy=False)
    return np.repeat(y[:, :, None], 3, axis=2)


def coverage(img: np.ndarray) -> np.ndarray:
    """Ink amount in [0, 1] per pixel (0 = white background)."""
    gray = to_grayscale(img)[..., 0] if img.shape[2] == 3 else img[..., 0]
    return np.clip((1.0 - gray) / 2.0, 0.0, 1.0)


def save_image(img: np.ndarray, path: str | Path) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr)
