"""Contextual similarity between two sets of feature vectors.

For sources ``x_i`` and targets ``y_j``::

    d_ij   = 1 - cos(x_i, y_j)                  (1 when either vector is zero)
    dn_ij  = d_ij / (min_k d_ik + eps)
    w_ij   = exp((1 - dn_ij) / h)
    cx_ij  = w_ij / sum_k w_ik
    CX     = mean_j max_i cx_ij

``dn`` is at least ``d_min / (d_min + eps)``, so the exponent never exceeds
``1/h`` and each row sum is at least 1: the computation cannot overflow or
divide by zero.
"""

from __future__ import annotations

import torch

EPS = 1e-5
BANDWIDTH = 0.5


def cosine_distance(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """(..., N, C) x (..., M, C) -> (..., N, M), clamped to [0, 2]."""
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"feature dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    xn = x.norm(dim=-1, keepdim=True)
    yn = y.norm(dim=-1, keepdim=True)
    xz, yz = xn == 0, yn == 0
    xs = x / torch.where(xz, torch.ones_like(xn), xn)
    ys = y / torch.where(yz, torch.ones_like(yn), yn)
    d = 1.0 - xs @ ys.transpose(-1, -2)
    zero = xz | yz.transpose(-1, -2)
    d = torch.where(zero, torch.ones_like(d), d)
    return d.clamp(0.0, 2.0)


def contextual_similarity(x: torch.Tensor, y: torch.Tensor, eps: float = EPS, h: float = BANDWIDTH) -> torch.Tensor:
    """CX for (N, C) / (M, C) sets, or batched (B, N, C) / (B, M, C) giving shape (B,)."""
    if x.shape[-2] == 0 or y.shape[-2] == 0:
        raise ValueError("feature sets must be non-empty")
    d = cosine_distance(x, y)
    dn = d / (d.min(dim=-1, keepdim=True).values + eps)
    w = torch.exp((1.0 - dn) / h)
    cx = w / w.sum(dim=-1, keepdim=True)
    return cx.max(dim=-2).values.mean(dim=-1)


def contextual_loss(feats_out: dict, feats_target: dict, eps: float = EPS, h: float = BANDWIDTH) -> torch.Tensor:
    """``-(1/L) sum_l log CX`` over the layers present in both dicts, per batch item."""
    names = [n for n in feats_out if n in feats_target]
    if not names:
        raise ValueError("no common layers")
    total = 0
    for n in names:
        total = total - torch.log(contextual_similarity(feats_out[n], feats_target[n], eps, h))
    return total / len(names)
