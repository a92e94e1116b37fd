"""Loss terms of the generator objective and their discriminator counterparts.

All adversarial terms work on logits through binary cross-entropy. The
generator side is the non-saturating ``-log D(fake)`` form.

Seen-gating: the L1 and contextual terms need a ground truth, which only
characters from the few-shot reference set have. ``seen`` may be a bool for
the whole batch or a per-sample bool tensor; unseen samples are dropped
before the term is evaluated and the result is averaged over the full batch,
i.e. an unseen sample enters with weight exactly zero.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F

from .contextual import BANDWIDTH, EPS, contextual_loss as _cx_loss
from .features import FeatureExtractor, extract_features
from .patches import PatchBatch


class MissingGroundTruthError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    adv_sha: float = 1.0
    adv_tex: float = 1.0
    l1_gray: float = 50.0
    l1_tex: float = 100.0
    cx_gray: float = 15.0
    cx_tex: float = 25.0
    local: float = 1.0
    seen: bool = True

    def __post_init__(self):
        for f in fields(self):
            if f.name != "seen" and getattr(self, f.name) < 0:
                raise ValueError(f"weight {f.name} must be non-negative")

    def effective(self) -> dict[str, float]:
        w = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "seen"}
        if not self.seen:
            for k in ("l1_gray", "l1_tex", "cx_gray", "cx_tex"):
                w[k] = 0.0
        return w

    def to_dict(self) -> dict:
        return asdict(self)


TERMS = ("adv_sha", "adv_tex", "l1_gray", "l1_tex", "cx_gray", "cx_tex", "local")


def bce_logits(logits: torch.Tensor, target: float) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, torch.full_like(logits, target))


def adversarial_losses(score_real, score_fake_detached, score_fake):
    """``(d_loss, g_loss)`` for one discriminator.

    ``d_loss = CE(real -> 1) + CE(fake -> 0)`` (each a mean over the score map),
    ``g_loss = CE(fake -> 1)``. Only ``score_fake`` should carry generator graph.
    """
    if score_real.shape[1:] != score_fake_detached.shape[1:] or score_fake.shape != score_fake_detached.shape:
        raise ValueError(
            f"score map shapes differ: {tuple(score_real.shape)}, "
            f"{tuple(score_fake_detached.shape)}, {tuple(score_fake.shape)}"
        )
    d_loss = bce_logits(score_real, 1.0) + bce_logits(score_fake_detached, 0.0)
    g_loss = bce_logits(score_fake, 1.0)
    return d_loss, g_loss


def _seen_index(seen, batch: int, device) -> torch.Tensor | None:
    """Indices of seen samples, or None when every sample is seen."""
    if isinstance(seen, bool):
        return None if seen else torch.zeros(0, dtype=torch.long, device=device)
    seen = torch.as_tensor(seen, dtype=torch.bool, device=device)
    if seen.shape != (batch,):
        raise ValueError(f"seen mask shape {tuple(seen.shape)} does not match batch {batch}")
    if bool(seen.all()):
        return None
    return seen.nonzero().flatten()


def _gated(fn, out: torch.Tensor, target: torch.Tensor | None, seen) -> torch.Tensor:
    """Batch mean of ``fn(out_i, target_i)`` with unseen samples contributing exactly 0."""
    b = out.shape[0]
    idx = _seen_index(seen, b, out.device)
    if idx is not None and idx.numel() == 0:
        return out.new_zeros(())
    if target is None:
        raise MissingGroundTruthError("ground truth required for seen samples")
    if idx is None:
        return fn(out, target).mean()
    return fn(out[idx], target[idx]).sum() / b


def _l1_per_sample(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().flatten(1).mean(dim=1)


def l1_terms(y_gray, gt_gray, y, gt, seen=True):
    """Unweighted gated ``(L1_gray, L1_tex)``."""
    return _gated(_l1_per_sample, y_gray, gt_gray, seen), _gated(_l1_per_sample, y, gt, seen)


def l1_pair(y_gray, gt_gray, y, gt, w: LossWeights, seen=None) -> torch.Tensor:
    """``l1_gray * mean|y_gray - gt_gray| + l1_tex * mean|y - gt|``, zero when unseen."""
    seen = w.seen if seen is None else seen
    if seen is False or not w.seen:
        return y.new_zeros(())
    g, t = l1_terms(y_gray, gt_gray, y, gt, seen)
    return w.l1_gray * g + w.l1_tex * t


def _as_rgb(img):
    return img.expand(-1, 3, -1, -1) if img.shape[1] == 1 else img


def contextual_loss(
    extractor: FeatureExtractor,
    img: torch.Tensor,
    target: torch.Tensor | None,
    layers=None,
    seen=True,
    eps: float = EPS,
    h: float = BANDWIDTH,
) -> torch.Tensor:
    """Batch mean of ``-(1/L) sum_l log CX(phi_l(img), phi_l(target))``, gated by ``seen``.

    One-channel images are replicated to RGB before feature extraction.
    """

    def per_sample(a, b):
        fa = extract_features(extractor, _as_rgb(a), layers)
        fb = extract_features(extractor, _as_rgb(b), layers)
        return _cx_loss(fa, fb, eps, h)

    return _gated(per_sample, img, target, seen)


def local_losses(d_local, real_pb: PatchBatch, blur_pb: PatchBatch, gen_pb: PatchBatch, local_weight: float = 1.0):
    """``(d_loss, g_loss)`` of the local texture discriminator.

    Real patches are positives; blurred and generated patches are negatives.
    The generator loss sees only generated patches.
    """
    for pb, tag in ((real_pb, "real"), (blur_pb, "blurred"), (gen_pb, "generated")):
        if len(pb) == 0:
            raise ValueError(f"empty {tag} patch batch")
        if pb.provenance != tag:
            raise ValueError(f"expected {tag} patches, got {pb.provenance}")
    gen = gen_pb.patches
    d_loss = (
        bce_logits(d_local(real_pb.patches), 1.0)
        + bce_logits(d_local(blur_pb.patches), 0.0)
        + bce_logits(d_local(gen.detach()), 0.0)
    )
    if local_weight == 0:
        return d_loss, gen.new_zeros(())
    g_loss = local_weight * bce_logits(d_local(gen), 1.0)
    return d_loss, g_loss


@dataclass
class LossParts:
    """Unweighted generator-side terms (already seen-gated)."""

    adv_sha: torch.Tensor
    adv_tex: torch.Tensor
    l1_gray: torch.Tensor
    l1_tex: torch.Tensor
    cx_gray: torch.Tensor
    cx_tex: torch.Tensor
    local: torch.Tensor

    @classmethod
    def zeros(cls, like: torch.Tensor | None = None) -> "LossParts":
        z = torch.zeros(()) if like is None else like.new_zeros(())
        return cls(*(z for _ in TERMS))


def weighted_terms(parts: LossParts, w: LossWeights) -> dict[str, torch.Tensor]:
    eff = w.effective()
    return {k: eff[k] * getattr(parts, k) for k in TERMS}


def total_generator_loss(parts: LossParts, w: LossWeights) -> torch.Tensor:
    """Adversarial + L1 + contextual + local, each weighted (and gated by ``w.seen``)."""
    terms = weighted_terms(parts, w)
    total = terms["adv_sha"]
    for k in TERMS[1:]:
        total = total + terms[k]
    return total
