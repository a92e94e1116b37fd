"""``agisnet`` command line: forge, pretrain, finetune, synth, eval, sheet.

Exit codes: 0 success, 1 other failure, 2 usage error, 3 missing file,
4 training aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import string
import sys
from pathlib import Path

import numpy as np

from .config import ConfigFileError, read_config_file, resolve

log = logging.getLogger("agisnet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MISSING, EXIT_NONFINITE = 0, 1, 2, 3, 4

_TRAIN = {
    "base_channels": (64, int),
    "depth": (6, int),
    "disc_channels": (64, int),
    "lr_g": (2e-4, float),
    "lr_d": (2e-4, float),
    "extractor": ("vgg19", str),
    "content_font": (None, str),
}

# {subcommand: {key: (default, type, help)}}
OPTIONS: dict[str, dict[str, tuple]] = {
    "forge": {
        "fonts": (None, str, "comma-separated font files or names"),
        "chars": (string.ascii_uppercase, str, "characters to render, or @file with one per line"),
        "textures": (10, int, "texture presets per font"),
        "out": ("corpus", str, "corpus directory"),
        "holdout": (0, int, "number of trailing fonts put in the finetune-test split"),
        "content_font": ("DejaVuSansMono.ttf", str, "content font recorded in the manifest"),
        "canvas": (64, int, "image size"),
    },
    "pretrain": {
        "corpus": ("corpus", str, "corpus directory"),
        "epochs": (20, int, None),
        "batch": (100, int, "batch size"),
        "n": (5, int, None),
        "m": (4, int, "style input size"),
        "out": ("checkpoints", str, "checkpoint directory"),
        **{k: (d, t, None) for k, (d, t) in _TRAIN.items()},
    },
    "finetune": {
        "ckpt": (None, str, "pre-trained checkpoint (omit to start from random weights)"),
        "corpus": ("corpus", str, "corpus directory"),
        "style": (None, str, "style key, e.g. 'MyFont#t0' (default: first finetune-test style)"),
        "n": (5, int, "few-shot reference set size"),
        "m": (4, int, "style input size"),
        "epochs": (3000, int, None),
        "batch": (26, int, "batch size"),
        "validate_every": (50, int, None),
        "explore": (string.ascii_uppercase, str, "exploration characters"),
        "out": ("checkpoints", str, "checkpoint directory"),
        **{k: (d, t, None) for k, (d, t) in _TRAIN.items()},
    },
    "synth": {
        "ckpt": (None, str, "fine-tuned checkpoint"),
        "chars": (string.ascii_uppercase, str, "characters to synthesize"),
        "out": ("synth", str, "output directory"),
        "content_font": (None, str, None),
    },
    "eval": {
        "gen": (None, str, "directory of generated images"),
        "truth": (None, str, "directory of ground-truth images (same file names)"),
        "report": ("report.txt", str, "report path; a .json twin is written alongside"),
    },
    "sheet": {
        "inputs": (None, str, "comma-separated image directories, one row each"),
        "out": ("sheet.png", str, None),
    },
}
COMMON = {"seed": (0, int, None)}
ALL_KEYS = set(COMMON) | {k for opts in OPTIONS.values() for k in opts}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agisnet", description="Few-shot artistic glyph image synthesis.")
    parser.add_argument("--workdir", default=".", help="base directory for all relative paths")
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", metavar="{forge,pretrain,finetune,synth,eval,sheet}")
    sub.required = True
    helps = {
        "forge": "render and texture a synthetic corpus",
        "pretrain": "pre-train on the corpus' pretrain split",
        "finetune": "few-shot fine-tune on one style",
        "synth": "synthesize glyphs from a fine-tuned checkpoint",
        "eval": "SSIM / pix-acc report for generated vs ground-truth images",
        "sheet": "compose image directories into one labelled sheet",
    }
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=helps[name])
        for key, (default, kind, help_) in {**COMMON, **opts}.items():
            flag = "--" + key.replace("_", "-")
            text = (help_ + " " if help_ else "") + f"(default: {default})"
            p.add_argument(flag, dest=key, type=kind, default=None, help=text)
    return parser


def _path(workdir: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else workdir / p


def _require(value, name):
    if value is None:
        raise argparse.ArgumentTypeError(f"--{name.replace('_', '-')} is required")
    return value


def _train_config(v: dict, phase: str):
    from .trainer import TrainConfig

    kw = dict(
        phase=phase, epochs=v["epochs"], batch_size=v["batch"], n=v["n"], m=v["m"], seed=v["seed"],
        base_channels=v["base_channels"], depth=v["depth"], disc_channels=v["disc_channels"],
        lr_g=v["lr_g"], lr_d=v["lr_d"],
        extractor=v["extractor"], content_font=v["content_font"],
    )
    if phase == "finetune":
        kw.update(validate_every=v["validate_every"], explore_chars=v["explore"])
    return TrainConfig(**kw)


def cmd_forge(v, wd):
    from .data import forge_corpus

    fonts = [f.strip() for f in _require(v["fonts"], "fonts").split(",") if f.strip()]
    chars = v["chars"]
    if chars.startswith("@"):
        lines = _path(wd, chars[1:]).read_text(encoding="utf-8").splitlines()
        chars = "".join(line.strip()[:1] for line in lines if line.strip())
    manifest = forge_corpus(fonts, list(dict.fromkeys(chars)), v["textures"], _path(wd, v["out"]),
                            seed=v["seed"], canvas=v["canvas"], holdout_fonts=v["holdout"],
                            content_font_id=v["content_font"])
    log.info("forged %d images into %s (%d skipped)", len(manifest), manifest.root, len(manifest.skipped))
    return {"entries": len(manifest), "skipped": len(manifest.skipped)}


def cmd_pretrain(v, wd):
    from .data import CorpusManifest
    from .trainer import pretrain

    manifest = CorpusManifest.open(_path(wd, v["corpus"]))
    cfg = _train_config(v, "pretrain")
    cfg.out_dir = str(_path(wd, v["out"]))
    res = pretrain(manifest, cfg)
    return {"checkpoint": str(res.checkpoint), "epoch_l1": res.state.epoch_l1}


def cmd_finetune(v, wd):
    from .data import CorpusManifest, sample_reference_set
    from .trainer import finetune

    manifest = CorpusManifest.open(_path(wd, v["corpus"]))
    style = v["style"]
    if style is None:
        styles = manifest.styles("finetune-test") or manifest.styles()
        style = styles[0]
    rs = sample_reference_set(manifest, style, v["n"], v["seed"])
    cfg = _train_config(v, "finetune")
    cfg.out_dir = str(_path(wd, v["out"]))
    if cfg.content_font is None:
        cfg.content_font = manifest.content_font_id
    ckpt = _path(wd, v["ckpt"])
    if ckpt is not None and not ckpt.is_file():
        raise FileNotFoundError(f"no checkpoint at {ckpt}")
    res = finetune(ckpt, rs, cfg)
    return {"checkpoint": str(res.checkpoint), "style": style, "reference": rs.char_ids,
            "best_epoch": res.state.best_epoch, "best_val_l1": res.state.best_val}


def cmd_synth(v, wd):
    from .data import save_image
    from .trainer import synthesize

    ckpt = _path(wd, _require(v["ckpt"], "ckpt"))
    out = _path(wd, v["out"])
    out.mkdir(parents=True, exist_ok=True)
    results = synthesize(ckpt, v["chars"], seed=v["seed"], content_font=v["content_font"])
    for ch, y_gray, y in results:
        save_image(y, out / f"U{ord(ch):04X}.png")
        save_image(np.repeat(y_gray, 3, axis=2), out / f"U{ord(ch):04X}_gray.png")
    return {"count": len(results), "out": str(out)}


def _image_files(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"no directory {d}")
    return {p.relative_to(d).as_posix(): p for p in sorted(d.rglob("*.png"))}


def cmd_eval(v, wd):
    from .data import load_image
    from .metrics import MetricReport, pix_acc, ssim

    gen = _image_files(_path(wd, _require(v["gen"], "gen")))
    truth = _image_files(_path(wd, _require(v["truth"], "truth")))
    common = sorted(k for k in gen if k in truth and not k.endswith("_gray.png"))
    if not common:
        raise ValueError("no generated image has a ground-truth counterpart")
    groups: dict[str, list[str]] = {}
    for name in common:
        groups.setdefault(name.rsplit("/", 1)[0] if "/" in name else "all", []).append(name)
    report = MetricReport()
    for style, names in sorted(groups.items()):
        s, a = [], []
        for name in names:
            g, t = load_image(gen[name]), load_image(truth[name])
            s.append(ssim(g, t))
            a.append(pix_acc(g, t))
        report.add_style(style, s, a)
    text, js = report.write(_path(wd, v["report"]))
    sys.stderr.write(report.to_text())
    return {"report": str(text), "json": str(js), **report.aggregate}


def cmd_sheet(v, wd):
    from .data import load_image
    from .sheet import render_sheet

    rows = []
    for d in _require(v["inputs"], "inputs").split(","):
        files = _image_files(_path(wd, d.strip()))
        rows.append((Path(d.strip()).name, [load_image(p) for p in files.values()]))
    out = render_sheet(rows, _path(wd, v["out"]))
    return {"sheet": str(out)}


COMMANDS = {
    "forge": cmd_forge,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "sheet": cmd_sheet,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    wd = Path(args.workdir)
    opts = {**COMMON, **OPTIONS[args.command]}
    from .trainer import NonFiniteLossError

    try:
        file_values = read_config_file(_path(wd, args.config)) if args.config else {}
        flags = {k: getattr(args, k) for k in opts}
        values, sources = resolve({k: (d, t) for k, (d, t, _) in opts.items()}, flags, file_values,
                                  known_keys=ALL_KEYS)
        wd.mkdir(parents=True, exist_ok=True)
        record = {"command": args.command, "workdir": str(wd), "config": values, "sources": sources}
        (wd / f"run-{args.command}.json").write_text(json.dumps(record, indent=2), encoding="utf-8")
        log.info("resolved config: %s", json.dumps(values))
        np.random.seed(values["seed"])
        result = COMMANDS[args.command](values, wd)
        (wd / f"result-{args.command}.json").write_text(json.dumps(result, indent=2, default=str),
                                                         encoding="utf-8")
        return EXIT_OK
    except NonFiniteLossError as exc:
        log.error("%s", exc)
        return EXIT_NONFINITE
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return EXIT_MISSING
    except (argparse.ArgumentTypeError, ConfigFileError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
