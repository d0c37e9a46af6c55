"""Command line interface.

Exit codes: 0 success, 1 usage error (bad arguments, config or input),
2 runtime failure (codec, training or I/O trouble).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from robusthide import codecs
from robusthide import networks as N

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- message I/O ---------------------------------------------------------------

def hex_to_bits(text: str, length: int) -> np.ndarray:
    """Hex string, most significant bit first, to ``length`` bits."""
    s = text.strip().lower().removeprefix("0x")
    digits = -(-length // 4)
    if len(s) != digits:
        raise UsageError(f"message must be {digits} hex digits for {length} bits, got {len(s)}")
    try:
        value = int(s, 16)
    except ValueError:
        raise UsageError(f"message is not hexadecimal: {text!r}") from None
    if value >> length:
        raise UsageError(f"message {text!r} does not fit in {length} bits")
    return np.array([(value >> (length - 1 - i)) & 1 for i in range(length)], dtype=np.int64)


def bits_to_hex(bits) -> str:
    bits = [int(b) for b in bits]
    value = 0
    for b in bits:
        value = (value << 1) | b
    return format(value, f"0{-(-len(bits) // 4)}x")


# -- helpers ---------------------------------------------------------------------

def _read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise UsageError(f"no such image: {path}") from None
    except (UnidentifiedImageError, OSError) as e:
        raise UsageError(f"cannot read image {path}: {e}") from None


def _write_image(arr, path):
    p = Path(path)
    fmt = "PNG" if p.suffix.lower() in ("", ".png") else None
    try:
        Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB").save(p, format=fmt)
    except (ValueError, KeyError) as e:
        raise UsageError(f"cannot write {p}: {e}") from None


def _load_model(path):
    from robusthide.checkpoint import load_checkpoint
    params, d, meta = load_checkpoint(path)
    return params, d, meta


def _fit_cover(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[:2] != (size, size):
        raise UsageError(f"image is {img.shape[1]}x{img.shape[0]}, the model expects {size}x{size}")
    return img


def parse_attack_list(text: str) -> list:
    """``internal:10,25,50,webp:50`` -> codec specs; a bare number reuses the previous codec name."""
    from robusthide.external import preset
    specs, name = [], None
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        if ":" in item:
            name, _, q = item.partition(":")
        elif name is None:
            raise UsageError(f"attack list must start with name:quality, got {item!r}")
        else:
            q = item
        try:
            specs.append(preset(name.strip(), int(q)))
        except ValueError as e:
            raise UsageError(str(e)) from None
    if not specs:
        raise UsageError("empty attack list")
    return specs


# -- subcommands -------------------------------------------------------------------

def cmd_train(args):
    from robusthide.config import load_config
    from robusthide.train import save_result, train

    cfg = load_config(args.config)
    out = Path(args.out) if args.out else Path(cfg.train.checkpoint_dir or ".") / "final.rhck"

    def show(e):
        print(f"step {e.step:6d}  loss {e.loss:.4f}  image {e.image_loss:.6f}  message {e.message_loss:.4f}  "
              f"train BER {e.train_ber:5.1f}%  lambda_image {e.lambda_image:g}", flush=True)

    result = train(cfg, on_log=None if args.quiet else show)
    save_result(result, cfg, out)
    print(f"saved {out}")
    return EXIT_OK


def cmd_evaluate(args):
    from robusthide.data import load_dataset, synthetic_dataset
    from robusthide.evaluate import evaluate
    from robusthide.report import emit_report

    params, d, meta = _load_model(args.checkpoint)
    attacks = parse_attack_list(args.attacks)
    if args.dataset:
        covers = load_dataset(args.dataset, d.image_size).images[:args.samples]
    else:
        covers = synthetic_dataset(args.samples, d.image_size, args.seed).images
    report = evaluate(params, d, covers, attacks, seed=args.seed)
    print(emit_report(report, "text"), end="")
    if args.csv:
        Path(args.csv).write_text(emit_report(report, "csv"))
    return EXIT_OK if all(r.ok for r in report.rows) else EXIT_RUNTIME


def cmd_embed(args):
    from robusthide.evaluate import encode_uint8
    params, d, _ = _load_model(args.checkpoint)
    bits = hex_to_bits(args.message, d.message_length)
    cover = _fit_cover(_read_image(args.cover), d.image_size)
    encoded = encode_uint8(params, d, cover[None], bits[None])[0]
    _write_image(encoded, args.out)
    print(f"APD {codecs.apd(cover, encoded):.2f}  PSNR {codecs.psnr(cover, encoded):.2f} dB")
    return EXIT_OK


def cmd_extract(args):
    from robusthide.evaluate import decode_uint8
    params, d, _ = _load_model(args.checkpoint)
    img = _fit_cover(_read_image(args.image), d.image_size)
    print(bits_to_hex(decode_uint8(params, d, img[None])[0]))
    return EXIT_OK


def cmd_attack(args):
    from robusthide.external import apply_codec, preset
    try:
        spec = preset(args.codec, args.quality)
    except ValueError as e:
        raise UsageError(str(e)) from None
    img = _read_image(args.inp)
    out = apply_codec(img, spec)
    _write_image(out, args.out)
    print(f"{spec.label}: PSNR {codecs.psnr(img, out):.2f} dB")
    return EXIT_OK


def cmd_codec_roundtrip(args):
    from robusthide.data import synthetic_dataset
    if not 1 <= args.quality <= 100:
        raise UsageError(f"quality must be in 1..100, got {args.quality}")
    if args.image:
        imgs = [_read_image(p) for p in args.image]
    else:
        imgs = list(synthetic_dataset(args.count, args.size, args.seed).images)
    values = []
    for i, img in enumerate(imgs):
        v = codecs.psnr(img, codecs.jpeg_roundtrip(img, args.quality, args.subsampling))
        values.append(v)
        if args.image:
            print(f"{args.image[i]}: PSNR {v:.2f} dB")
    print(f"quality {args.quality} ({args.subsampling}): mean PSNR {np.mean(values):.2f} dB over {len(values)} images")
    return EXIT_OK


def cmd_gradcheck(args):
    from robusthide import gradcheck
    return gradcheck.main(seed=args.seed, tol=args.tol)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robusthide", description="Data hiding robust to lossy compression.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train encoder and decoder from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="final checkpoint path (default: <checkpoint_dir>/final.rhck)")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="BER under true codecs")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--attacks", required=True, help="e.g. internal:10,25,50,webp:50")
    s.add_argument("--dataset", help="image folder (default: synthetic covers)")
    s.add_argument("--samples", type=int, default=256)
    s.add_argument("--seed", type=int, default=1234)
    s.add_argument("--csv", help="also write machine-readable rows here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("embed", help="hide a message in a cover image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--cover", required=True)
    s.add_argument("--message", required=True, help="hex, most significant bit first")
    s.add_argument("--out", required=True, help="output image (PNG)")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("extract", help="recover a message from an image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("attack", help="run an image through a true codec")
    s.add_argument("--codec", required=True, help="internal, jpeg, webp, jpeg2000 or copy")
    s.add_argument("--quality", type=int, required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("codec-roundtrip", help="PSNR of the built-in JPEG at one quality")
    s.add_argument("--quality", type=int, required=True)
    s.add_argument("--subsampling", choices=("444", "420"), default="444")
    s.add_argument("--image", nargs="*", help="images to test (default: synthetic)")
    s.add_argument("--count", type=int, default=20)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_codec_roundtrip)

    s = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    from robusthide.checkpoint import CheckpointError
    from robusthide.config import ConfigError
    from robusthide.data import DatasetError
    from robusthide.external import CodecError
    from robusthide.train import TrainingError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, CodecError, DatasetError, TrainingError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
