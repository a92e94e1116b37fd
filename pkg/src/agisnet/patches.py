"""Random patch cutting and Gaussian blurring for the local discriminator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data.sampling import Seed, as_rng

PATCH_SIZE = 32
PATCHES_PER_IMAGE = 4
BLUR_KERNEL = 5
BLUR_SIGMA = 1.0
BLUR_FRACTION = 0.5

PROVENANCES = ("real", "blurred", "generated")


class ProvenanceError(ValueError):
    pass


@dataclass
class PatchBatch:
    patches: torch.Tensor  # (K, C, p, p)
    corners: np.ndarray  # (K, 2) top-left (row, col) in the source image
    sources: np.ndarray  # (K,) index of the source image in its batch
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ProvenanceError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return self.patches.shape[0]


def sample_corners(height: int, width: int, count: int, patch: int, seed: Seed) -> np.ndarray:
    if height < patch or width < patch:
        raise ValueError(f"image {height}x{width} smaller than patch {patch}")
    rng = as_rng(seed)
    rows = rng.integers(0, height - patch + 1, size=count)
    cols = rng.integers(0, width - patch + 1, size=count)
    return np.stack([rows, cols], axis=1)


def cut_patches(
    img: torch.Tensor,
    k: int = PATCHES_PER_IMAGE,
    patch: int = PATCH_SIZE,
    seed: Seed = 0,
    provenance: str = "real",
    corners: np.ndarray | None = None,
) -> PatchBatch:
    """Cut ``k`` patches from each image of ``img`` (C,H,W or B,C,H,W).

    Corners are uniform over every valid top-left position. Passing ``corners``
    reuses a previous layout instead of sampling.
    """
    if img.dim() == 3:
        img = img.unsqueeze(0)
    b, _, h, w = img.shape
    if corners is None:
        corners = sample_corners(h, w, b * k, patch, seed)
    sources = np.repeat(np.arange(b), k)
    crops = [img[s, :, r : r + patch, c : c + patch] for s, (r, c) in zip(sources, corners)]
    return PatchBatch(torch.stack(crops), np.asarray(corners), sources, provenance)


def gaussian_kernel(size: int = BLUR_KERNEL, sigma: float = BLUR_SIGMA, dtype=torch.float32) -> torch.Tensor:
    ax = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(ax**2) / (2 * sigma**2))
    k2 = torch.outer(g, g)
    return (k2 / k2.sum()).to(dtype)


def gaussian_blur(x: torch.Tensor, size: int = BLUR_KERNEL, sigma: float = BLUR_SIGMA) -> torch.Tensor:
    """Depthwise Gaussian filter with reflected borders (constants are fixed points)."""
    c = x.shape[1]
    kern = gaussian_kernel(size, sigma, x.dtype).to(x.device).expand(c, 1, size, size)
    pad = size // 2
    return F.conv2d(F.pad(x, (pad, pad, pad, pad), mode="reflect"), kern, groups=c)


def blur_patches(
    pb: PatchBatch,
    fraction: float = 1.0,
    seed: Seed = 0,
    size: int = BLUR_KERNEL,
    sigma: float = BLUR_SIGMA,
) -> PatchBatch:
    """Blurred copies of (a random ``fraction`` of) real patches, tagged ``blurred``."""
    if pb.provenance != "real":
        raise ProvenanceError(f"only real patches are blurred, got {pb.provenance!r}")
    idx = np.arange(len(pb))
    if fraction < 1.0:
        count = max(1, math.ceil(fraction * len(pb)))
        idx = np.sort(as_rng(seed).choice(len(pb), size=count, replace=False))
    sel = pb.patches[torch.as_tensor(idx, dtype=torch.long)]
    return PatchBatch(gaussian_blur(sel, size, sigma), pb.corners[idx], pb.sources[idx], "blurred")
