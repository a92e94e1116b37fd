"""Labelled image grids for eyeballing results.

Layout: a ``LABEL_WIDTH`` px label column, then one cell per image; cells are
separated and framed by ``PAD`` px of white. For rows of ``k`` images of size
``h x w`` the sheet is ``LABEL_WIDTH + k*(w+PAD) + PAD`` wide and
``rows*(h+PAD) + PAD`` tall (``k`` = longest row).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .data.glyphs import to_uint8

LABEL_WIDTH = 96
PAD = 4


def sheet_size(rows: list[tuple[str, list]]) -> tuple[int, int]:
    h, w = np.asarray(rows[0][1][0]).shape[:2]
    k = max(len(imgs) for _, imgs in rows)
    return LABEL_WIDTH + k * (w + PAD) + PAD, len(rows) * (h + PAD) + PAD


def compose_sheet(rows: list[tuple[str, list]]) -> Image.Image:
    if not rows or any(len(imgs) == 0 for _, imgs in rows):
        raise ValueError("sheet needs at least one row and every row at least one image")
    h, w = np.asarray(rows[0][1][0]).shape[:2]
    for label, imgs in rows:
        for im in imgs:
            if np.asarray(im).shape[:2] != (h, w):
                raise ValueError(f"row {label!r}: image size {np.asarray(im).shape[:2]} != {(h, w)}")
    width, height = sheet_size(rows)
    sheet = Image.new("RGB", (width, height), (255, 255, 255))
    draw = ImageDraw.Draw(sheet)
    font = ImageFont.load_default()
    for r, (label, imgs) in enumerate(rows):
        top = PAD + r * (h + PAD)
        draw.text((PAD, top + h // 2 - 6), str(label)[:14], fill=(0, 0, 0), font=font)
        for c, im in enumerate(imgs):
            arr = np.asarray(im)
            if arr.ndim == 2:
                arr = arr[..., None]
            if arr.shape[2] == 1:
                arr = np.repeat(arr, 3, axis=2)
            sheet.paste(Image.fromarray(to_uint8(arr)), (LABEL_WIDTH + PAD + c * (w + PAD), top))
    return sheet


def render_sheet(rows: list[tuple[str, list]], out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    compose_sheet(rows).save(out_path, format="PNG")
    return out_path
