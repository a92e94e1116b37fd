"""Pre-training, few-shot fine-tuning and synthesis.

One training step updates the three discriminators on detached fakes and then
the generator on the weighted objective, so a step is one D update per G
update. Every random choice (batch order, style-input draws, patch corners,
blur selection) comes from a single ``numpy`` generator seeded from
``TrainConfig.seed``; network init comes from ``torch.manual_seed(seed)``.
"""

from __future__ import annotations

import copy
import functools
import json
import logging
import math
import string
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .data.corpus import CorpusManifest
from .data.glyphs import DEFAULT_CONTENT_FONT, render_glyph
from .data.sampling import StyleReferenceSet, as_rng, sample_style_input
from .discriminators import Discriminators
from .features import FeatureExtractor, TinyFeatures, VGG19Features
from .generator import Generator, GeneratorSpec
from .losses import (
    TERMS,
    LossParts,
    LossWeights,
    adversarial_losses,
    bce_logits,
    contextual_loss,
    l1_terms,
    local_losses,
    total_generator_loss,
    weighted_terms,
)
from .patches import blur_patches, cut_patches, sample_corners

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, record: dict):
        bad = sorted(k for k, v in record.items() if isinstance(v, float) and not math.isfinite(v))
        super().__init__(f"non-finite loss in {', '.join(bad)}: {record}")
        self.record = record


ENGLISH_FINETUNE = dict(epochs=3000, batch_size=26, n=5, m=4, validate_every=50)
CHINESE_FINETUNE = dict(epochs=500, batch_size=100, n=30, m=4, validate_every=50)
ENGLISH_PRETRAIN = dict(phase="pretrain", epochs=20, batch_size=100)
CHINESE_PRETRAIN = dict(phase="pretrain", epochs=10, batch_size=100)


@dataclass
class TrainConfig:
    phase: str = "finetune"
    epochs: int = 3000
    batch_size: int = 26
    n: int = 5
    m: int = 4
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    validate_every: int = 50
    weights: LossWeights = field(default_factory=LossWeights)
    # architecture
    image_size: int = 64
    depth: int = 6
    base_channels: int = 64
    disc_channels: int = 64
    disc_layers: int = 3
    # local refinement
    patch_size: int = 32
    patches_per_image: int = 4
    blur_fraction: float = 0.5
    blur_sigma: float = 1.0
    blur_kernel: int = 5
    # contextual loss
    extractor: str = "vgg19"
    cx_layers: tuple[str, ...] | None = None
    # data
    explore_chars: str = string.ascii_uppercase
    content_font: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ConfigError(f"unknown phase {self.phase!r}")
        if not self.m < self.n:
            raise ConfigError(f"need m < n, got m={self.m}, n={self.n}")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.epochs <= 0 or self.validate_every <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs, validate_every and batch_size must be positive")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.cx_layers is not None:
            self.cx_layers = tuple(self.cx_layers)

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        presets = {
            "english-finetune": ENGLISH_FINETUNE,
            "chinese-finetune": CHINESE_FINETUNE,
            "english-pretrain": ENGLISH_PRETRAIN,
            "chinese-pretrain": CHINESE_PRETRAIN,
        }
        return cls(**{**presets[name], **overrides})

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(depth=self.depth, base_channels=self.base_channels, style_count=self.m,
                             image_size=self.image_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d


@dataclass
class Models:
    generator: Generator
    discriminators: Discriminators
    extractor: FeatureExtractor
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer


def make_extractor(name: str, seed: int = 0) -> FeatureExtractor:
    if name == "tiny":
        return TinyFeatures(seed=seed)
    if name == "vgg19":
        return VGG19Features()
    raise ConfigError(f"unknown extractor {name!r}")


def build_models(
    cfg: TrainConfig,
    generator: Generator | None = None,
    discriminators: Discriminators | None = None,
    extractor: FeatureExtractor | None = None,
) -> Models:
    torch.manual_seed(cfg.seed)
    if generator is None:
        generator = Generator(cfg.generator_spec())
    elif generator.spec.style_count != cfg.m:
        raise ConfigError(f"checkpoint expects m={generator.spec.style_count}, config has m={cfg.m}")
    if discriminators is None:
        discriminators = Discriminators(cfg.image_size, cfg.patch_size, cfg.disc_channels, cfg.disc_layers)
    if extractor is None:
        extractor = make_extractor(cfg.extractor)
    betas = (cfg.beta1, cfg.beta2)
    return Models(
        generator,
        discriminators,
        extractor,
        torch.optim.Adam(generator.parameters(), lr=cfg.lr_g, betas=betas),
        torch.optim.Adam(discriminators.parameters(), lr=cfg.lr_d, betas=betas),
    )


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    chars: list[str]
    content: torch.Tensor  # (B, 3, H, W)
    style: torch.Tensor  # (B, 3m, H, W)
    target: torch.Tensor | None  # (B, 3, H, W); NaN rows where unseen
    seen: torch.Tensor  # (B,) bool
    real: torch.Tensor  # (B, 3, H, W) positives for the shape/texture discriminators

    @property
    def target_gray(self):
        return None if self.target is None else rgb_to_gray(self.target)

    @property
    def real_gray(self):
        return rgb_to_gray(self.real)

    def style_images(self) -> torch.Tensor:
        b, c, h, w = self.style.shape
        return self.style.reshape(b, c // 3, 3, h, w)

    def to(self, dtype) -> "Batch":
        conv = lambda t: None if t is None else t.to(dtype)  # noqa: E731
        return replace(self, content=conv(self.content), style=conv(self.style), target=conv(self.target),
                       real=conv(self.real))


def rgb_to_gray(img: torch.Tensor) -> torch.Tensor:
    """(B, 3, H, W) -> (B, 1, H, W) Rec.601 luma, exact on already-gray pixels."""
    r, g, b = img[:, 0:1], img[:, 1:2], img[:, 2:3]
    return g + 0.299 * (r - g) + 0.114 * (b - g)


def _t(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))


@functools.lru_cache(maxsize=4096)
def content_image(font_id: str, char: str, size: int) -> np.ndarray:
    img = render_glyph(font_id, char, size)
    img.setflags(write=False)
    return img


def make_batch(samples: list[dict]) -> Batch:
    """Collate samples ``{char, content, style: [imgs], target|None, real}`` (numpy HWC)."""
    content = torch.stack([_t(s["content"]) for s in samples])
    style = torch.stack([_t(np.concatenate(s["style"], axis=2)) for s in samples])
    seen = torch.tensor([s["target"] is not None for s in samples])
    target = None
    if bool(seen.any()):
        rows = [_t(s["target"]) if s["target"] is not None else torch.full_like(content[0], float("nan"))
                for s in samples]
        target = torch.stack(rows)
    real = torch.stack([_t(s["real"]) for s in samples])
    return Batch([s["char"] for s in samples], content, style, target, seen, real)


class PretrainSource:
    """Batches over the pretrain split; every sample has ground truth."""

    def __init__(self, manifest: CorpusManifest, cfg: TrainConfig):
        self.manifest = manifest
        self.cfg = cfg
        self.font = cfg.content_font or manifest.content_font_id
        self.groups = manifest.by_style("pretrain")
        self.items = [(k, e) for k, es in sorted(self.groups.items()) for e in es]
        if not self.items:
            raise ConfigError("pretrain split is empty")
        short = [k for k, es in self.groups.items() if len(es) < cfg.m]
        if short:
            raise ConfigError(f"styles with fewer than m={cfg.m} characters: {short[:5]}")
        self._cache: dict = {}

    def _load(self, e):
        if e.key not in self._cache:
            self._cache[e.key] = self.manifest.load(e)
        return self._cache[e.key]

    def sample(self, key, entry, rng) -> dict:
        others = [e for e in self.groups[key] if e.char_id != entry.char_id]
        pool = others if len(others) >= self.cfg.m else self.groups[key]
        pick = rng.choice(len(pool), size=self.cfg.m, replace=False)
        target = self._load(entry)
        return {
            "char": entry.char_id,
            "content": content_image(self.font, entry.char_id, self.cfg.image_size),
            "style": [self._load(pool[i]) for i in pick],
            "target": target,
            "real": target,
        }

    def epoch(self, rng: np.random.Generator):
        order = rng.permutation(len(self.items))
        bs = self.cfg.batch_size
        for start in range(0, len(order), bs):
            yield make_batch([self.sample(*self.items[i], rng) for i in order[start : start + bs]])


class FinetuneSource:
    """Batches over the exploration characters of one style.

    Characters in the reference set carry their ground truth; for the others
    the discriminators' positive is a random image of that sample's style input.
    """

    def __init__(self, rs: StyleReferenceSet, cfg: TrainConfig, chars: str | None = None):
        self.rs = rs
        self.cfg = cfg
        self.font = cfg.content_font or DEFAULT_CONTENT_FONT
        chars = list(dict.fromkeys(list(chars or cfg.explore_chars) + list(rs.char_ids)))
        self.chars = chars
        if not cfg.m < rs.n:
            raise ConfigError(f"need m < n, got m={cfg.m}, n={rs.n}")

    def sample(self, char, rng) -> dict:
        xs = sample_style_input(self.rs, self.cfg.m, rng)
        target = self.rs.image_for(char)
        real = target if target is not None else xs.images[int(rng.integers(xs.m))]
        return {
            "char": char,
            "content": content_image(self.font, char, self.cfg.image_size),
            "style": xs.images,
            "target": target,
            "real": real,
        }

    def epoch(self, rng: np.random.Generator):
        order = rng.permutation(len(self.chars))
        bs = self.cfg.batch_size
        for start in range(0, len(order), bs):
            yield make_batch([self.sample(self.chars[i], rng) for i in order[start : start + bs]])


# ---------------------------------------------------------------------------
# losses for one forward pass


@dataclass
class PatchPlan:
    """Patch layout for one step, fixed so D and G see the same crops."""

    real_source: np.ndarray  # (B,) which style-input image each sample's real patches come from
    real_corners: np.ndarray
    gen_corners: np.ndarray
    blur_seed: int


def plan_patches(batch: Batch, cfg: TrainConfig, rng) -> PatchPlan:
    b = batch.content.shape[0]
    m = batch.style.shape[1] // 3
    size = batch.content.shape[-1]
    k, p = cfg.patches_per_image, cfg.patch_size
    return PatchPlan(
        real_source=rng.integers(0, m, size=b),
        real_corners=sample_corners(size, size, b * k, p, rng),
        gen_corners=sample_corners(size, size, b * k, p, rng),
        blur_seed=int(rng.integers(2**31)),
    )


def _patches(batch: Batch, y: torch.Tensor, plan: PatchPlan, cfg: TrainConfig):
    imgs = batch.style_images()
    src = imgs[torch.arange(imgs.shape[0]), torch.as_tensor(plan.real_source, dtype=torch.long)]
    k, p = cfg.patches_per_image, cfg.patch_size
    real = cut_patches(src, k, p, corners=plan.real_corners)
    blurred = blur_patches(real, cfg.blur_fraction, plan.blur_seed, cfg.blur_kernel, cfg.blur_sigma)
    gen = cut_patches(y, k, p, corners=plan.gen_corners, provenance="generated")
    return real, blurred, gen


def generator_parts(models: Models, batch: Batch, outputs, plan: PatchPlan, cfg: TrainConfig) -> LossParts:
    """Unweighted generator terms for one forward pass (discriminators held fixed)."""
    y_gray, y = outputs
    d = models.discriminators
    seen = batch.seen
    l1_gray, l1_tex = l1_terms(y_gray, batch.target_gray, y, batch.target, seen)
    cx_gray = contextual_loss(models.extractor, y_gray, batch.target_gray, cfg.cx_layers, seen)
    cx_tex = contextual_loss(models.extractor, y, batch.target, cfg.cx_layers, seen)
    gen = cut_patches(y, cfg.patches_per_image, cfg.patch_size, corners=plan.gen_corners, provenance="generated")
    return LossParts(
        adv_sha=bce_logits(d.score_shape(y_gray), 1.0),
        adv_tex=bce_logits(d.score_texture(y), 1.0),
        l1_gray=l1_gray,
        l1_tex=l1_tex,
        cx_gray=cx_gray,
        cx_tex=cx_tex,
        local=bce_logits(d.score_patch(gen.patches), 1.0),
    )


def _check_finite(record: dict):
    if any(isinstance(v, float) and not math.isfinite(v) for v in record.values()):
        raise NonFiniteLossError(record)


def train_step(batch: Batch, models: Models, cfg: TrainConfig, rng: np.random.Generator) -> dict:
    """One discriminator update followed by one generator update; returns all loss scalars."""
    g, d = models.generator, models.discriminators
    g.train()
    d.train()
    plan = plan_patches(batch, cfg, rng)
    w = cfg.weights

    y_gray, y = g(batch.content, batch.style)

    # discriminators on detached fakes
    d.requires_grad_(True)
    yg_d, y_d = y_gray.detach(), y.detach()
    fake_sha, fake_tex = d.score_shape(yg_d), d.score_texture(y_d)
    d_sha, _ = adversarial_losses(d.score_shape(batch.real_gray), fake_sha, fake_sha)
    d_tex, _ = adversarial_losses(d.score_texture(batch.real), fake_tex, fake_tex)
    real_pb, blur_pb, gen_pb = _patches(batch, y_d, plan, cfg)
    d_local, _ = local_losses(d.score_patch, real_pb, blur_pb, gen_pb, 0.0)
    d_total = d_sha + d_tex + d_local
    record = {"d_sha": d_sha.item(), "d_tex": d_tex.item(), "d_local": d_local.item()}
    _check_finite(record)
    models.opt_d.zero_grad(set_to_none=True)
    d_total.backward()
    models.opt_d.step()

    # generator against the updated discriminators
    d.requires_grad_(False)
    parts = generator_parts(models, batch, (y_gray, y), plan, cfg)
    terms = weighted_terms(parts, w)
    total = total_generator_loss(parts, w)
    record.update({k: v.item() for k, v in terms.items()})
    record["g_total"] = total.item()
    record["seen"] = int(batch.seen.sum())
    _check_finite(record)
    models.opt_g.zero_grad(set_to_none=True)
    total.backward()
    models.opt_g.step()
    d.requires_grad_(True)
    return record


# ---------------------------------------------------------------------------
# loops


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    history: list[dict] = field(default_factory=list)
    epoch_l1: list[float] = field(default_factory=list)  # probe L1 before training and after each epoch
    validation: list[tuple[int, float]] = field(default_factory=list)
    best_val: float = math.inf
    best_epoch: int = -1
    best_checkpoint: str | None = None
    last_checkpoint: str | None = None


@dataclass
class TrainResult:
    models: Models
    state: TrainState
    checkpoint: Path | None
    best_generator: Generator | None = None


def write_history(history: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")


@torch.no_grad()
def probe_l1(generator: Generator, batch: Batch) -> float:
    """Mean per-pixel |y - target| over the batch's seen samples, in inference mode."""
    was = generator.training
    generator.eval()
    _, y = generator(batch.content, batch.style)
    generator.train(was)
    seen = batch.seen
    return float((y[seen] - batch.target[seen]).abs().mean())


def _run(models, cfg, source, state, rng, on_epoch):
    for epoch in range(1, cfg.epochs + 1):
        for batch in source.epoch(rng):
            rec = train_step(batch, models, cfg, rng)
            rec.update(epoch=epoch, step=state.step)
            state.history.append(rec)
            state.step += 1
        state.epoch = epoch
        on_epoch(epoch)


def pretrain(manifest: CorpusManifest, cfg: TrainConfig, models: Models | None = None) -> TrainResult:
    """Train on the pretrain split with full supervision; checkpoint after every epoch."""
    if cfg.phase != "pretrain":
        cfg = replace(cfg, phase="pretrain")
    if len(manifest) == 0:
        raise ConfigError("manifest has no entries")
    source = PretrainSource(manifest, cfg)
    models = models or build_models(cfg)
    rng = np.random.default_rng(cfg.seed)
    probe = make_batch([source.sample(*source.items[i], np.random.default_rng(cfg.seed + 1))
                        for i in range(min(len(source.items), cfg.batch_size))])
    state = TrainState()
    state.epoch_l1.append(probe_l1(models.generator, probe))
    out = Path(cfg.out_dir) if cfg.out_dir else None

    def on_epoch(epoch):
        state.epoch_l1.append(probe_l1(models.generator, probe))
        log.info("pretrain epoch %d: probe L1 %.4f", epoch, state.epoch_l1[-1])
        if out is not None:
            path = save_checkpoint(out / "pretrain.pt", models.generator, models.discriminators,
                                   extra={"epoch": epoch, "config": cfg.to_dict(),
                                          "content_font_id": source.font})
            state.last_checkpoint = str(path)
            write_history(state.history, out / "pretrain_history.jsonl")

    _run(models, cfg, source, state, rng, on_epoch)
    ckpt = Path(state.last_checkpoint) if state.last_checkpoint else None
    return TrainResult(models, state, ckpt)


def _validation_batch(rs: StyleReferenceSet, cfg: TrainConfig, font: str) -> Batch:
    rng = np.random.default_rng(cfg.seed + 7)
    samples = []
    for ch, img in zip(rs.char_ids, rs.images):
        xs = sample_style_input(rs, cfg.m, rng)
        samples.append({"char": ch, "content": content_image(font, ch, cfg.image_size), "style": xs.images,
                        "target": img, "real": img})
    return make_batch(samples)


def finetune(checkpoint, rs: StyleReferenceSet, cfg: TrainConfig, extractor: FeatureExtractor | None = None) -> TrainResult:
    """Few-shot fine-tuning on one style.

    ``checkpoint`` is a path, or None to start from random weights. Every
    ``validate_every`` epochs the inference-mode L1 on the reference characters is
    measured and the best generator kept (and saved as ``finetune_best.pt``).
    """
    if cfg.phase != "finetune":
        cfg = replace(cfg, phase="finetune")
    if rs.n != cfg.n:
        cfg = replace(cfg, n=rs.n)
    gen = discs = None
    if checkpoint is not None:
        gen, discs, _, _ = load_checkpoint(checkpoint)
    models = build_models(cfg, gen, discs, extractor)
    source = FinetuneSource(rs, cfg)
    val = _validation_batch(rs, cfg, source.font)
    rng = np.random.default_rng(cfg.seed)
    state = TrainState()
    out = Path(cfg.out_dir) if cfg.out_dir else None
    best: dict = {}

    def on_epoch(epoch):
        if epoch % cfg.validate_every and epoch != cfg.epochs:
            return
        v = probe_l1(models.generator, val)
        state.validation.append((epoch, v))
        log.info("finetune epoch %d: validation L1 %.4f", epoch, v)
        if v < state.best_val:
            state.best_val, state.best_epoch = v, epoch
            best["g"] = copy.deepcopy(models.generator.state_dict())
            if out is not None:
                state.best_checkpoint = str(save_checkpoint(
                    out / "finetune_best.pt", models.generator, models.discriminators, reference_set=rs,
                    extra={"epoch": epoch, "val_l1": v, "config": cfg.to_dict(), "content_font_id": source.font}))
        if out is not None:
            state.last_checkpoint = str(save_checkpoint(
                out / "finetune_last.pt", models.generator, models.discriminators, reference_set=rs,
                extra={"epoch": epoch, "val_l1": v, "config": cfg.to_dict(), "content_font_id": source.font}))
            write_history(state.history, out / "finetune_history.jsonl")

    _run(models, cfg, source, state, rng, on_epoch)
    best_gen = None
    if best:
        best_gen = Generator(models.generator.spec)
        best_gen.load_state_dict(best["g"])
    ckpt = Path(state.best_checkpoint) if state.best_checkpoint else None
    return TrainResult(models, state, ckpt, best_gen)


@torch.no_grad()
def synthesize(
    checkpoint,
    chars,
    rs: StyleReferenceSet | None = None,
    m: int | None = None,
    seed: int = 0,
    content_font: str | None = None,
) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Generate ``(char, y_gray (H,W,1), y (H,W,3))`` for each character.

    ``checkpoint`` is a path or a ``Generator``. A single style input is drawn
    from ``rs`` (default: the reference set stored in the checkpoint) with
    ``seed`` and used for every character.
    """
    extra = {}
    if isinstance(checkpoint, Generator):
        gen = checkpoint
    else:
        gen, _, stored_rs, extra = load_checkpoint(checkpoint)
        rs = rs or stored_rs
    if rs is None:
        raise ConfigError("no reference set given and none stored in the checkpoint")
    m = m or gen.spec.style_count
    if m != gen.spec.style_count:
        raise ConfigError(f"generator expects m={gen.spec.style_count}")
    font = content_font or extra.get("content_font_id") or DEFAULT_CONTENT_FONT
    xs = sample_style_input(rs, m, as_rng(seed))
    chars = list(chars)
    size = gen.spec.image_size
    content = torch.stack([_t(content_image(font, c, size)) for c in chars])
    style = _t(xs.stacked()).unsqueeze(0).expand(len(chars), -1, -1, -1)
    was = gen.training
    gen.eval()
    y_gray, y = gen(content, style)
    gen.train(was)
    out = []
    for i, c in enumerate(chars):
        out.append((c, y_gray[i].permute(1, 2, 0).numpy().copy(), y[i].permute(1, 2, 0).numpy().copy()))
    return out
