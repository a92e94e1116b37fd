"""Few-shot reference sets and the channel-stacked style input.

Seed contract: every sampler accepts either an ``int`` seed, which makes the
draw a pure function of ``(inputs, seed)``, or a ``numpy.random.Generator``,
which is advanced so that consecutive calls give fresh draws. Training loops
pass one generator created from the run seed, so the whole draw sequence is
fixed by that seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CorpusManifest

Seed = int | np.random.Generator


class InsufficientCharactersError(ValueError):
    pass


def as_rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class StyleReferenceSet:
    style_id: str
    char_ids: list[str]
    images: list[np.ndarray]

    def __post_init__(self):
        if len(self.char_ids) != len(self.images):
            raise ValueError("char_ids and images differ in length")
        if len(set(self.char_ids)) != len(self.char_ids):
            raise ValueError("reference characters must be distinct")
        if len(self.char_ids) < 2:
            raise ValueError("a reference set needs at least 2 images")

    @property
    def n(self) -> int:
        return len(self.char_ids)

    def image_for(self, char_id: str) -> np.ndarray | None:
        try:
            return self.images[self.char_ids.index(char_id)]
        except ValueError:
            return None


@dataclass
class StyleInput:
    char_ids: list[str]
    images: list[np.ndarray]

    @property
    def m(self) -> int:
        return len(self.images)

    def stacked(self) -> np.ndarray:
        """(H, W, 3m) view; images occupy consecutive channel triples in list order."""
        return np.concatenate(self.images, axis=2)


def unstack(stacked: np.ndarray, channels: int = 3) -> list[np.ndarray]:
    if stacked.shape[2] % channels:
        raise ValueError(f"{stacked.shape[2]} channels is not a multiple of {channels}")
    return [stacked[:, :, i : i + channels] for i in range(0, stacked.shape[2], channels)]


def sample_reference_set(manifest: CorpusManifest, style: str, n: int, seed: Seed) -> StyleReferenceSet:
    """Draw ``n`` distinct characters of one artistic style (``style`` is a style key)."""
    entries = manifest.style_entries(style)
    if not entries:
        raise KeyError(f"unknown style {style!r}")
    if n > len(entries):
        raise InsufficientCharactersError(f"style {style!r} has {len(entries)} characters, need {n}")
    rng = as_rng(seed)
    idx = np.sort(rng.choice(len(entries), size=n, replace=False))
    chosen = [entries[i] for i in idx]
    return StyleReferenceSet(
        style_id=style,
        char_ids=[e.char_id for e in chosen],
        images=[manifest.load(e) for e in chosen],
    )


def sample_style_input(rs: StyleReferenceSet, m: int, seed: Seed) -> StyleInput:
    """``m < n`` distinct members of the reference set in random order."""
    if m >= rs.n:
        raise ValueError(f"style input size m={m} must be smaller than n={rs.n}")
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = as_rng(seed)
    idx = rng.choice(rs.n, size=m, replace=False)
    return StyleInput(char_ids=[rs.char_ids[i] for i in idx], images=[rs.images[i] for i in idx])
