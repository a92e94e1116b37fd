"""Versioned checkpoint container for generator + discriminators."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import torch

from .data.glyphs import from_uint8, to_uint8
from .data.sampling import StyleReferenceSet
from .discriminators import Discriminators
from .generator import Generator, GeneratorSpec

FORMAT = "agisnet-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _rs_to_payload(rs: StyleReferenceSet | None):
    if rs is None:
        return None
    return {
        "style_id": rs.style_id,
        "char_ids": list(rs.char_ids),
        "images": np.stack([to_uint8(im) for im in rs.images]),
    }


def _rs_from_payload(p) -> StyleReferenceSet | None:
    if p is None:
        return None
    return StyleReferenceSet(p["style_id"], list(p["char_ids"]), [from_uint8(a) for a in p["images"]])


def save_checkpoint(
    path: str | Path,
    generator: Generator,
    discriminators: Discriminators | None = None,
    *,
    reference_set: StyleReferenceSet | None = None,
    extra: dict | None = None,
) -> Path:
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "generator_spec": generator.spec.to_dict(),
        "generator": generator.state_dict(),
        "disc_config": None,
        "discriminators": None,
        "reference_set": _rs_to_payload(reference_set),
        "extra": extra or {},
    }
    if discriminators is not None:
        payload["disc_config"] = discriminators.config
        payload["discriminators"] = discriminators.state_dict()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # write-then-rename so a crash never leaves a truncated checkpoint behind
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path, spec: GeneratorSpec | None = None):
    """Returns ``(generator, discriminators_or_None, reference_set_or_None, extra)``.

    If ``spec`` is given it must equal the stored generator spec.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not an {FORMAT} file")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    stored = GeneratorSpec(**payload["generator_spec"])
    if spec is not None and spec != stored:
        raise CheckpointError(f"generator spec mismatch: checkpoint has {stored}, expected {spec}")
    gen = Generator(stored)
    gen.load_state_dict(payload["generator"])
    discs = None
    if payload.get("discriminators") is not None:
        discs = Discriminators(**payload["disc_config"])
        discs.load_state_dict(payload["discriminators"])
    return gen, discs, _rs_from_payload(payload.get("reference_set")), payload.get("extra", {})
