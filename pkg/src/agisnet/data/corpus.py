"""Synthetic artistic-glyph corpus: forging and the on-disk manifest.

Layout under the corpus root::

    manifest.jsonl          one record per image
    meta.json               content font, texture presets, forge parameters
    <style_id>/t<texture_id>/U<codepoint>.png
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .glyphs import DEFAULT_CONTENT_FONT, MissingGlyphError, load_image, quantize, render_glyph, save_image
from .textures import TextureSpec, apply_texture, texture_presets

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
META_NAME = "meta.json"
SPLITS = ("pretrain", "finetune-test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    style_id: str
    char_id: str
    texture_id: int
    path: str
    split: str

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.style_id, self.char_id, self.texture_id)

    @property
    def style_key(self) -> str:
        return style_key(self.style_id, self.texture_id)


def style_key(style_id: str, texture_id: int) -> str:
    """An artistic style is one font under one texturing."""
    return f"{style_id}#t{texture_id}"


@dataclass
class CorpusManifest:
    root: Path
    entries: list[Entry]
    content_font_id: str = DEFAULT_CONTENT_FONT
    textures: dict[str, list[dict]] = field(default_factory=dict)
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def validate(self, check_files: bool = True) -> None:
        keys = set()
        split_of: dict[str, str] = {}
        for e in self.entries:
            if e.key in keys:
                raise ManifestError(f"duplicate entry {e.key}")
            keys.add(e.key)
            if e.split not in SPLITS:
                raise ManifestError(f"unknown split {e.split!r}")
            if split_of.setdefault(e.style_id, e.split) != e.split:
                raise ManifestError(f"style {e.style_id!r} appears in more than one split")
            if check_files and not (self.root / e.path).is_file():
                raise ManifestError(f"missing image {self.root / e.path}")

    def styles(self, split: str | None = None) -> list[str]:
        return sorted({e.style_key for e in self.entries if split is None or e.split == split})

    def by_style(self, split: str | None = None) -> dict[str, list[Entry]]:
        out: dict[str, list[Entry]] = defaultdict(list)
        for e in self.entries:
            if split is None or e.split == split:
                out[e.style_key].append(e)
        return dict(out)

    def style_entries(self, key: str) -> list[Entry]:
        return sorted((e for e in self.entries if e.style_key == key), key=lambda e: e.char_id)

    def load(self, entry: Entry) -> np.ndarray:
        return load_image(self.root / entry.path)

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.root / MANIFEST_NAME, "w", encoding="utf-8") as fh:
            for e in self.entries:
                rec = {
                    "style_id": e.style_id,
                    "char_id": e.char_id,
                    "texture_id": e.texture_id,
                    "path": e.path,
                    "split": e.split,
                }
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        meta = {
            "content_font_id": self.content_font_id,
            "textures": self.textures,
            "skipped": [list(s) for s in self.skipped],
        }
        (self.root / META_NAME).write_text(json.dumps(meta, indent=2, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def open(cls, root: str | Path) -> "CorpusManifest":
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.is_file():
            raise FileNotFoundError(f"no manifest at {path}")
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    entries.append(
                        Entry(rec["style_id"], rec["char_id"], int(rec["texture_id"]), rec["path"], rec["split"])
                    )
                except (KeyError, ValueError) as exc:
                    raise ManifestError(f"{path}:{lineno}: bad record ({exc})") from exc
        meta = {}
        if (root / META_NAME).is_file():
            meta = json.loads((root / META_NAME).read_text(encoding="utf-8"))
        return cls(
            root=root,
            entries=entries,
            content_font_id=meta.get("content_font_id", DEFAULT_CONTENT_FONT),
            textures=meta.get("textures", {}),
            skipped=[tuple(s) for s in meta.get("skipped", [])],
        )


def font_style_id(font_id: str) -> str:
    return Path(font_id).stem


def forge_corpus(
    fonts: list[str],
    chars: list[str] | str,
    textures_per_style: int,
    out_dir: str | Path,
    *,
    seed: int = 0,
    canvas: int = 64,
    holdout_fonts: int = 0,
    content_font_id: str = DEFAULT_CONTENT_FONT,
    workers: int = 1,
) -> CorpusManifest:
    """Render every (font, char) pair under ``textures_per_style`` seeded textures.

    The last ``holdout_fonts`` fonts go to the ``finetune-test`` split. Characters a
    font cannot render are skipped and listed in ``manifest.skipped``.
    """
    if not fonts:
        raise ValueError("fonts must be non-empty")
    chars = list(chars)
    if not chars:
        raise ValueError("chars must be non-empty")
    if textures_per_style < 1:
        raise ValueError("textures_per_style must be >= 1")
    if not 0 <= holdout_fonts <= len(fonts):
        raise ValueError("holdout_fonts out of range")
    style_ids = [font_style_id(f) for f in fonts]
    if len(set(style_ids)) != len(style_ids):
        raise ValueError(f"font style ids collide: {style_ids}")

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    textures: dict[str, list[TextureSpec]] = {}
    for i, sid in enumerate(style_ids):
        textures[sid] = texture_presets(textures_per_style, seed=seed * 100003 + i)

    jobs = []
    for fi, (font, sid) in enumerate(zip(fonts, style_ids)):
        split = "finetune-test" if fi >= len(fonts) - holdout_fonts else "pretrain"
        for ch in chars:
            jobs.append((font, sid, ch, split))

    def forge_one(job):
        font, sid, ch, split = job
        try:
            base = render_glyph(font, ch, canvas)
        except MissingGlyphError:
            return job, None
        out = []
        for tid, spec in enumerate(textures[sid]):
            rel = Path(sid) / f"t{tid}" / f"U{ord(ch):04X}.png"
            dest = root / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            img = quantize(apply_texture(base, spec))
            try:
                save_image(img, dest)
            except OSError as exc:
                raise OSError(f"failed writing {dest}: {exc}") from exc
            out.append(Entry(sid, ch, tid, rel.as_posix(), split))
        return job, out

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(forge_one, jobs))
    else:
        results = [forge_one(j) for j in jobs]

    entries: list[Entry] = []
    skipped: list[tuple[str, str]] = []
    for (font, sid, ch, _), out in results:
        if out is None:
            log.warning("skipping %r: not in %s", ch, font)
            skipped.append((sid, ch))
        else:
            entries.extend(out)

    manifest = CorpusManifest(
        root=root,
        entries=entries,
        content_font_id=content_font_id,
        textures={sid: [t.to_dict() for t in specs] for sid, specs in textures.items()},
        skipped=skipped,
    )
    manifest.validate()
    manifest.save()
    return manifest


def expected_corpus_size(n_fonts: int, n_chars: int, textures_per_style: int) -> int:
    return n_fonts * n_chars * textures_per_style
