"""End-to-end acceptance checks.

Each criterion is a function returning ``(ok, detail)``. Under pytest every one
is a test and a PASS/FAIL line per criterion is printed in the terminal summary
(see ``conftest.py``). Running this file directly prints the same lines.
"""

from __future__ import annotations

import string
import tempfile
import time

import numpy as np
import pytest
import torch

from agisnet.contextual import contextual_similarity
from agisnet.data import (
    CorpusManifest,
    TextureSpec,
    apply_texture,
    expected_corpus_size,
    forge_corpus,
    quantize,
    render_glyph,
    sample_reference_set,
    texture_presets,
)
from agisnet.discriminators import Discriminators, PatchDiscriminator
from agisnet.features import TinyFeatures
from agisnet.generator import Generator, GeneratorSpec
from agisnet.losses import LossWeights, bce_logits, contextual_loss, l1_terms, total_generator_loss
from agisnet.metrics import embedding_stats, frechet_distance, pix_acc, ssim
from agisnet.patches import blur_patches, cut_patches
from agisnet.trainer import (
    FinetuneSource,
    Models,
    TrainConfig,
    build_models,
    finetune,
    generator_parts,
    make_batch,
    plan_patches,
    synthesize,
    train_step,
)

try:
    from .oracles import cx_bruteforce
except ImportError:  # run as a script
    from oracles import cx_bruteforce

FONTS = ["DejaVuSans.ttf", "DejaVuSerif.ttf", "DejaVuSansMono-Bold.ttf"]
RESULTS: dict[int, tuple[bool, str, str]] = {}

TITLES = {
    1: "contextual similarity matches double-loop oracle",
    2: "contextual similarity limits and permutation invariance",
    3: "generator objective gradient check",
    4: "generator wiring and output ranges",
    5: "seen gating of L1 and contextual terms",
    6: "corpus size, uniqueness and lossless round trip",
    7: "local discriminator separates sharp from blurred patches",
    8: "few-shot overfit on one style",
    9: "training and synthesis determinism",
    10: "metric sanity",
}


def record(n: int, ok: bool, detail: str) -> tuple[bool, str]:
    RESULTS[n] = (bool(ok), TITLES[n], detail)
    return bool(ok), detail


def line(n: int) -> str:
    ok, title, detail = RESULTS[n]
    return f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})"


def summary_lines() -> list[str]:
    return [line(n) for n in sorted(RESULTS)]


# ---------------------------------------------------------------------------


def criterion_1():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 17))
        X = rng.normal(size=(int(rng.integers(1, 9)), d))
        Y = rng.normal(size=(int(rng.integers(1, 9)), d))
        got = contextual_similarity(torch.from_numpy(X), torch.from_numpy(Y)).item()
        worst = max(worst, abs(got - cx_bruteforce(X.tolist(), Y.tolist())))
    elapsed = time.perf_counter() - t0
    return record(1, worst <= 1e-6 and elapsed < 10, f"max abs err {worst:.2e}, {elapsed:.2f}s")


def criterion_2():
    rng = np.random.default_rng(7)
    lo, perm_err = 1.0, 0.0
    for _ in range(50):
        X = torch.from_numpy(rng.normal(size=(int(rng.integers(2, 9)), 16)))
        lo = min(lo, contextual_similarity(X, X).item())
        Y = torch.from_numpy(rng.normal(size=(int(rng.integers(1, 9)), 16)))
        base = contextual_similarity(X, Y).item()
        px, py = torch.from_numpy(rng.permutation(len(X))), torch.from_numpy(rng.permutation(len(Y)))
        perm_err = max(perm_err, abs(contextual_similarity(X[px], Y[py]).item() - base))
    single = contextual_similarity(torch.randn(1, 5, dtype=torch.float64), torch.randn(1, 5, dtype=torch.float64))
    ok = lo >= 0.99 and single.item() == 1.0 and perm_err <= 1e-12
    return record(2, ok, f"min CX(X,X) {lo:.4f}, N=1 gives {single.item()!r}, perm err {perm_err:.1e}")


def _gradcheck_setup():
    torch.manual_seed(0)
    spec = GeneratorSpec(depth=2, base_channels=8, image_size=8, style_count=2)
    g = Generator(spec).double()
    d = Discriminators(image_size=8, patch_size=6, base_channels=4, n_layers=1).double()
    ext = TinyFeatures(seed=0, widths=(6, 8)).double()
    cfg = TrainConfig(m=2, n=3, image_size=8, depth=2, base_channels=8, patch_size=6, patches_per_image=2)
    models = Models(g, d, ext, None, None)
    gen = torch.Generator().manual_seed(1)
    rand = lambda *s: (torch.rand(*s, generator=gen, dtype=torch.float64) * 2 - 1)  # noqa: E731
    samples = []
    for i in range(2):
        target = rand(8, 8, 3).numpy()
        samples.append({"char": str(i), "content": rand(8, 8, 3).numpy(),
                        "style": [rand(8, 8, 3).numpy(), rand(8, 8, 3).numpy()],
                        "target": target, "real": target})
    batch = make_batch(samples)
    plan = plan_patches(batch, cfg, np.random.default_rng(0))
    return models, batch, plan, cfg


def criterion_3(samples: int = 120, h: float = 1e-5):
    models, batch, plan, cfg = _gradcheck_setup()
    g = models.generator
    w = LossWeights()

    def objective():
        out = g(batch.content, batch.style)
        return total_generator_loss(generator_parts(models, batch, out, plan, cfg), w)

    params = [p for p in g.parameters()]
    grads = torch.autograd.grad(objective(), params)
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(3)
    flat_idx = rng.choice(sizes.sum(), size=samples, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, nonzero = 0.0, 0
    with torch.no_grad():
        for fi in flat_idx:
            k = int(np.searchsorted(offsets, fi, side="right") - 1)
            j = int(fi - offsets[k])
            p = params[k].view(-1)
            orig = p[j].item()
            p[j] = orig + h
            fp = objective().item()
            p[j] = orig - h
            fm = objective().item()
            p[j] = orig
            fd = (fp - fm) / (2 * h)
            an = grads[k].view(-1)[j].item()
            nonzero += an != 0
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            worst = max(worst, rel)
    return record(3, worst < 1e-3, f"{samples} weights, max rel err {worst:.2e}, {nonzero} nonzero grads")


def criterion_4():
    spec = GeneratorSpec()
    torch.manual_seed(0)
    g = Generator(spec)
    ch = spec.channels
    bad = []
    for k in range(1, spec.depth + 1):
        prev = 0 if k == spec.depth else ch[k - 1]
        want_shape = prev + 2 * ch[k - 1]
        want_tex = prev + 2 * ch[k - 1] + (0 if k == spec.depth else ch[k - 1])
        if g.shape_decoder.blocks[k - 1][0].in_channels != want_shape:
            bad.append(f"shape{k}")
        if g.texture_decoder.blocks[k - 1][0].in_channels != want_tex:
            bad.append(f"texture{k}")
    if g.texture_decoder.final[0].in_channels != spec.final_features + 1:
        bad.append("final")
    with torch.no_grad():
        y_gray, y = g(torch.randn(2, 3, 64, 64) * 4, torch.randn(2, 12, 64, 64) * 4)
    shapes = tuple(y_gray.shape[1:]), tuple(y.shape[1:])
    in_range = all(t.min() >= -1 and t.max() <= 1 for t in (y_gray, y))
    ok = not bad and shapes == ((1, 64, 64), (3, 64, 64)) and in_range
    return record(4, ok, f"mismatched levels {bad or 'none'}, outputs {shapes}, in range {in_range}")


def _supervised_grads(models, batch, seen):
    g = models.generator
    y_gray, y = g(batch.content, batch.style)
    tg = batch.target_gray
    l1g, l1t = l1_terms(y_gray, tg, y, batch.target, seen)
    cxg = contextual_loss(models.extractor, y_gray, tg, None, seen)
    cxt = contextual_loss(models.extractor, y, batch.target, None, seen)
    out = {}
    for name, term in (("l1", l1g + l1t), ("cx", cxg + cxt)):
        if not term.requires_grad:
            out[name] = 0.0
            continue
        grads = torch.autograd.grad(term, list(g.parameters()), allow_unused=True, retain_graph=True)
        out[name] = sum(0.0 if gr is None else gr.abs().sum().item() for gr in grads)
    return out


def criterion_5():
    models, batch, _, _ = _gradcheck_setup()
    off = _supervised_grads(models, batch, torch.tensor([False, False]))
    on = _supervised_grads(models, batch, torch.tensor([True, True]))
    ok = off["l1"] == 0.0 and off["cx"] == 0.0 and on["l1"] > 0 and on["cx"] > 0
    return record(5, ok, f"unseen |grad| l1={off['l1']} cx={off['cx']}; seen |grad| "
                         f"l1={on['l1']:.3g} cx={on['cx']:.3g}")


def criterion_6():
    with tempfile.TemporaryDirectory() as tmp:
        m = forge_corpus(FONTS, "ABCDE", 10, tmp, seed=1)
        keys = [e.key for e in m.entries]
        again = CorpusManifest.open(tmp)
        font_of = {f.rsplit(".", 1)[0]: f for f in FONTS}
        lossless = again.entries == m.entries
        for e in again.entries:
            spec = TextureSpec.from_dict(again.textures[e.style_id][e.texture_id])
            want = quantize(apply_texture(render_glyph(font_of[e.style_id], e.char_id), spec))
            lossless &= np.array_equal(again.load(e), want)
    formula = expected_corpus_size(246, 639, 10)
    ok = len(m) == 150 and len(set(keys)) == 150 and lossless and formula == 1_571_940
    return record(6, ok, f"{len(m)} entries, {len(set(keys))} unique, lossless {lossless}, formula {formula}")


def criterion_7(steps: int = 200):
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    presets = texture_presets(8, seed=5)
    imgs = []
    for i, ch in enumerate(string.ascii_uppercase):
        g = apply_texture(render_glyph(FONTS[i % 3], ch), presets[i % 8])
        imgs.append(torch.from_numpy(g.transpose(2, 0, 1).copy()))
    imgs = torch.stack(imgs)
    real = []
    while len(real) < 64:
        pb = cut_patches(imgs, 1, 32, seed=rng)
        real += [p for p in pb.patches if (p.min(0).values < 0).float().mean() >= 0.1]
    real = torch.stack(real[:64])
    blurred = blur_patches(cut_patches(real, 1, 32, corners=np.zeros((64, 2), int))).patches
    d = PatchDiscriminator(3, 32)  # full-size local discriminator
    opt = torch.optim.Adam(d.parameters(), lr=2e-4, betas=(0.5, 0.999))

    def accuracy():
        with torch.no_grad():
            hits = (d(real).flatten(1).mean(1) > 0).sum() + (d(blurred).flatten(1).mean(1) < 0).sum()
        return hits.item() / 128

    t0 = time.perf_counter()
    acc, step = 0.0, 0
    while step < steps and acc < 0.9:
        for _ in range(10):
            opt.zero_grad()
            loss = bce_logits(d(real), 1.0) + bce_logits(d(blurred), 0.0)
            loss.backward()
            opt.step()
        step += 10
        acc = accuracy()
    elapsed = time.perf_counter() - t0
    return record(7, acc >= 0.9 and elapsed < 120, f"accuracy {acc:.3f} after {step} steps, {elapsed:.1f}s")


OVERFIT = dict(base_channels=64, extractor="tiny")


def criterion_8(epochs: int = 200):
    torch.manual_seed(0)
    with tempfile.TemporaryDirectory() as tmp:
        m = forge_corpus([FONTS[0]], string.ascii_uppercase, 1, tmp, seed=0)
        rs = sample_reference_set(m, m.styles()[0], 5, seed=0)
        cfg = TrainConfig(epochs=epochs, n=5, m=4, validate_every=50, **OVERFIT)
        t0 = time.perf_counter()
        res = finetune(None, rs, cfg)
        elapsed = time.perf_counter() - t0
    gen = res.models.generator
    l1s, accs = [], []
    for ch, gt in zip(rs.char_ids, rs.images):
        out = synthesize(gen, [ch], rs=rs, seed=0)[0][2]
        l1s.append(float(np.abs(out - gt).mean()))
        accs.append(pix_acc(out, gt))
    l1, acc = float(np.mean(l1s)), float(np.mean(accs))
    ok = l1 < 0.1 and acc > 0.85 and elapsed < 1800
    return record(8, ok, f"seen-glyph L1 {l1:.4f}, pix_acc {acc:.4f}, {elapsed / 60:.1f} min")


def _trace(cfg, rs, steps=10):
    models = build_models(cfg)
    src = FinetuneSource(rs, cfg)
    rng = np.random.default_rng(cfg.seed)
    out = []
    while len(out) < steps:
        for batch in src.epoch(rng):
            if len(out) < steps:
                out.append(train_step(batch, models, cfg, rng))
    return out, models


def criterion_9():
    with tempfile.TemporaryDirectory() as tmp:
        m = forge_corpus([FONTS[1]], string.ascii_uppercase, 1, tmp, seed=0)
        rs = sample_reference_set(m, m.styles()[0], 5, seed=0)
    cfg = TrainConfig(seed=5, batch_size=8, base_channels=8, disc_channels=8, extractor="tiny")
    a, ma = _trace(cfg, rs)
    b, _ = _trace(cfg, rs)
    worst = max(abs(ra[k] - rb[k]) for ra, rb in zip(a, b) for k in ra)
    s1 = synthesize(ma.generator, "AQz", rs=rs, seed=9)
    s2 = synthesize(ma.generator, "AQz", rs=rs, seed=9)
    same = all(x[1].tobytes() == y[1].tobytes() and x[2].tobytes() == y[2].tobytes() for x, y in zip(s1, s2))
    ok = len(a) == 10 and worst <= 1e-12 and same
    return record(9, ok, f"10-step trace max diff {worst:.1e}, synthesis byte-identical {same}")


def criterion_10():
    a = render_glyph(FONTS[0], "Q")
    s, p = ssim(a, a), pix_acc(a, a)
    emb = np.random.default_rng(0).normal(size=(500, 8))
    mu, cov = embedding_stats(emb)
    fid_same = frechet_distance(mu, cov, mu, cov)
    # two Gaussians with arbitrary full covariances, closed form via eigendecomposition
    r = np.random.default_rng(1)
    A, B = r.normal(size=(5, 5)), r.normal(size=(5, 5))
    s1, s2 = A @ A.T + np.eye(5), B @ B.T + np.eye(5)
    m1, m2 = r.normal(size=5), r.normal(size=5)
    w, v = np.linalg.eigh(s1)
    r1 = v @ np.diag(np.sqrt(w)) @ v.T
    w2 = np.linalg.eigvalsh(r1 @ s2 @ r1)
    closed = np.sum((m1 - m2) ** 2) + np.trace(s1) + np.trace(s2) - 2 * np.sum(np.sqrt(w2))
    got = frechet_distance(m1, s1, m2, s2)
    ok = s == 1.0 and p == 1.0 and fid_same <= 1e-6 and abs(got - closed) <= 1e-3
    return record(10, ok, f"ssim {s}, pix_acc {p}, FID(A,A) {fid_same:.1e}, closed-form err {abs(got - closed):.1e}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("n", range(1, 11), ids=[f"criterion_{n}" for n in range(1, 11)])
def test_acceptance(n):
    ok, detail = CRITERIA[n - 1]()
    print(line(n))
    assert ok, detail


if __name__ == "__main__":
    torch.set_num_threads(1)
    for i, fn in enumerate(CRITERIA, 1):
        fn()
        print(line(i), flush=True)
