"""Image quality metrics: SSIM, pixel accuracy, FID and IS."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.signal import correlate

from .data.glyphs import to_grayscale

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_RANGE = 255.0
FID_EPS = 1e-6


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM of two [-1, 1] images, evaluated on the 8-bit scale.

    Gaussian 11x11 window (sigma 1.5), K1=0.01, K2=0.03, statistics over valid
    window positions only, mean over positions and channels.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} px on each side")
    a = (a + 1.0) * 127.5
    b = (b + 1.0) * 127.5
    win = _gaussian_window()
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        f = lambda z: correlate(z, win, mode="valid")  # noqa: E731
        mx, my = f(x), f(y)
        sxx = f(x * x) - mx * mx
        syy = f(y * y) - my * my
        sxy = f(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def foreground_mask(img: np.ndarray) -> np.ndarray:
    """Glyph pixels: gray value below the midpoint of [-1, 1]."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 3:
        gray = to_grayscale(img)[..., 0]
    elif img.ndim == 3 and img.shape[2] == 1:
        gray = img[..., 0]
    else:
        gray = img
    return gray < 0.0


def pix_acc(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Fraction of pixels on which both images agree about glyph vs background."""
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    return float(np.mean(foreground_mask(y) == foreground_mask(y_hat)))


def frechet_distance(mu1, sigma1, mu2, sigma2, eps: float = FID_EPS) -> float:
    """Frechet distance between two Gaussians.

    When ``sigma1 @ sigma2`` is singular the square root is taken of the
    ``eps``-regularized product ``(sigma1 + eps I)(sigma2 + eps I)``.
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    sigma1, sigma2 = np.atleast_2d(sigma1).astype(np.float64), np.atleast_2d(sigma2).astype(np.float64)
    diff = mu1 - mu2
    covmean = scipy.linalg.sqrtm(sigma1 @ sigma2)
    if not np.all(np.isfinite(covmean)):
        off = np.eye(sigma1.shape[0]) * eps
        covmean = scipy.linalg.sqrtm((sigma1 + off) @ (sigma2 + off))
    covmean = np.real(covmean)
    val = diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2 * np.trace(covmean)
    return float(max(val, 0.0))


def embedding_stats(emb: np.ndarray):
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValueError("need at least two embeddings of shape (N, D)")
    return emb.mean(axis=0), np.cov(emb, rowvar=False)


def inception_score(probs: np.ndarray) -> float:
    """``exp(E_x KL(p(y|x) || p(y)))`` for a (N, K) matrix of class probabilities."""
    p = np.asarray(probs, dtype=np.float64)
    marginal = p.mean(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0).sum(axis=1)
    return float(np.exp(kl.mean()))


def fid_is(gen_set, real_set, extractor) -> tuple[float, float]:
    """FID between the embeddings of two sets and IS of the generated set.

    ``extractor`` provides ``embed(images) -> (N, D)`` and
    ``class_probs(images) -> (N, K)``; images may be in whatever form it accepts.
    """
    if len(gen_set) == 0 or len(real_set) == 0:
        raise ValueError("image sets must be non-empty")
    mu_g, s_g = embedding_stats(extractor.embed(gen_set))
    mu_r, s_r = embedding_stats(extractor.embed(real_set))
    return frechet_distance(mu_g, s_g, mu_r, s_r), inception_score(extractor.class_probs(gen_set))


@dataclass
class MetricReport:
    per_style: dict[str, dict] = field(default_factory=dict)
    aggregate: dict = field(default_factory=dict)

    def add_style(self, name: str, ssim_vals, acc_vals, fid: float | None = None, is_: float | None = None):
        row = {"ssim": float(np.mean(ssim_vals)), "pix_acc": float(np.mean(acc_vals)), "count": len(ssim_vals)}
        if fid is not None:
            row["fid"] = fid
        if is_ is not None:
            row["is"] = is_
        self.per_style[name] = row
        self._aggregate()

    def _aggregate(self):
        total = sum(r["count"] for r in self.per_style.values())
        agg = {"count": total}
        for key in ("ssim", "pix_acc"):
            agg[key] = sum(r[key] * r["count"] for r in self.per_style.values()) / total
        for key in ("fid", "is"):
            vals = [r[key] for r in self.per_style.values() if key in r]
            if vals:
                agg[key] = float(np.mean(vals))
        self.aggregate = agg

    def to_text(self) -> str:
        lines = []
        for name, row in sorted(self.per_style.items()):
            lines.append(f"{name}\t" + "\t".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                                for k, v in row.items()))
        lines.append("ALL\t" + "\t".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                                         for k, v in self.aggregate.items()))
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> tuple[Path, Path]:
        """Writes ``<path>`` (text) and ``<path>.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        js = path.with_name(path.name + ".json")
        js.write_text(json.dumps({"per_style": self.per_style, "aggregate": self.aggregate}, indent=2),
                      encoding="utf-8")
        return path, js
