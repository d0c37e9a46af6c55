"""Run any lossy codec as a blackbox external process.

The command template is formatted with ``{input}``, ``{output}`` and
``{quality}`` (per-image mode) or ``{input_dir}``, ``{output_dir}`` and
``{quality}`` (batch mode, every image of a batch in one invocation).
``{python}`` expands to the running interpreter. Images travel through
lossless temp files.
"""
from __future__ import annotations

import shlex
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from robusthide import codecs


class CodecError(RuntimeError):
    """Codec process failed or produced unusable output."""


class CodecUnavailableError(CodecError):
    """Codec executable is missing on this host."""


@dataclass(frozen=True)
class CodecSpec:
    kind: str = "internal-jpeg"          # internal-jpeg | external
    quality: int = 50
    subsampling: str = "444"             # internal JPEG only
    command: Optional[str] = None        # external only
    input_format: str = "png"
    output_format: str = "png"
    batch: bool = False
    timeout: float = 120.0
    name: Optional[str] = None

    def __post_init__(self):
        if self.kind == "internal-jpeg":
            if not 1 <= self.quality <= 100:
                raise ValueError(f"internal JPEG quality must be in 1..100, got {self.quality}")
            if self.subsampling not in ("444", "420"):
                raise ValueError(f"unknown subsampling {self.subsampling!r}")
        elif self.kind == "external":
            if not self.command:
                raise ValueError("external codec needs a command template")
            for fmt in (self.input_format, self.output_format):
                if fmt not in LOSSLESS_FORMATS:
                    raise ValueError(f"temp-file format must be lossless, got {fmt!r}")
        else:
            raise ValueError(f"unknown codec kind {self.kind!r}")

    @property
    def label(self) -> str:
        if self.name:
            return f"{self.name}-{self.quality}"
        if self.kind == "internal-jpeg":
            return f"jpeg-{self.quality}"
        return f"external-{self.quality}"

    def with_quality(self, quality: int) -> "CodecSpec":
        kw = dict(self.__dict__)
        kw["quality"] = quality
        return CodecSpec(**kw)


LOSSLESS_FORMATS = {"png": "PNG", "ppm": "PPM", "bmp": "BMP"}

# Presets backed by ``python -m robusthide.pilcodec`` (Pillow's libjpeg,
# libwebp and OpenJPEG bindings run in a child process).
PRESETS = {
    "jpeg": "{python} -m robusthide.pilcodec jpeg {quality} {input_dir} {output_dir}",
    "webp": "{python} -m robusthide.pilcodec webp {quality} {input_dir} {output_dir}",
    "jpeg2000": "{python} -m robusthide.pilcodec jpeg2000 {quality} {input_dir} {output_dir}",
    "copy": "{python} -m robusthide.pilcodec copy {quality} {input_dir} {output_dir}",
}


def preset(name: str, quality: int) -> CodecSpec:
    """Codec spec for a named external preset, or the built-in JPEG for ``internal``."""
    if name in ("internal", "internal-jpeg"):
        return CodecSpec(kind="internal-jpeg", quality=quality)
    if name not in PRESETS:
        raise ValueError(f"unknown codec preset {name!r}; known: internal, {', '.join(PRESETS)}")
    return CodecSpec(kind="external", quality=quality, command=PRESETS[name], batch=True, name=name)


def parse_codec(text: str) -> CodecSpec:
    """Parse ``name:quality`` (e.g. ``internal:50``, ``webp:75``)."""
    name, sep, q = text.partition(":")
    if not sep:
        raise ValueError(f"codec spec must look like name:quality, got {text!r}")
    return preset(name.strip(), int(q))


def _write(img, path: Path, fmt: str):
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path, format=LOSSLESS_FORMATS[fmt])


def _read(path: Path, shape) -> np.ndarray:
    if not path.exists():
        raise CodecError(f"codec produced no output file {path.name}")
    with Image.open(path) as im:
        out = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if out.shape != tuple(shape):
        raise CodecError(f"codec changed image dimensions {tuple(shape)} -> {out.shape}")
    return out


def _run(argv, timeout):
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout)
    except FileNotFoundError as e:
        raise CodecUnavailableError(f"codec executable not found: {argv[0]}") from e
    except subprocess.TimeoutExpired as e:
        raise CodecError(f"codec timed out after {timeout}s: {' '.join(argv)}") from e
    if proc.returncode != 0:
        err = proc.stderr.decode(errors="replace").strip()[-500:]
        raise CodecError(f"codec exited with status {proc.returncode}: {err}")


def _argv(template: str, **fields) -> list:
    fields.setdefault("python", sys.executable)
    return [part.format(**fields) for part in shlex.split(template)]


def external_codec(img, spec: CodecSpec) -> np.ndarray:
    """Round-trip uint8 ``[H, W, 3]`` or ``[N, H, W, 3]`` images through ``spec``."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"external_codec expects uint8 images, got {img.dtype}")
    single = img.ndim == 3
    batch = img[None] if single else img
    with tempfile.TemporaryDirectory(prefix="robusthide-codec-") as tmp:
        tmp = Path(tmp)
        in_dir, out_dir = tmp / "in", tmp / "out"
        in_dir.mkdir()
        out_dir.mkdir()
        ins = [in_dir / f"{i:05d}.{spec.input_format}" for i in range(len(batch))]
        outs = [out_dir / f"{i:05d}.{spec.output_format}" for i in range(len(batch))]
        for im, p in zip(batch, ins):
            _write(im, p, spec.input_format)
        if spec.batch:
            _run(_argv(spec.command, input_dir=in_dir, output_dir=out_dir, quality=spec.quality),
                 spec.timeout)
        else:
            for i, o in zip(ins, outs):
                _run(_argv(spec.command, input=i, output=o, quality=spec.quality), spec.timeout)
        result = np.stack([_read(o, im.shape) for o, im in zip(outs, batch)])
    return result[0] if single else result


def apply_codec(img, spec: CodecSpec) -> np.ndarray:
    """Dispatch a forward-only codec round trip on uint8 images."""
    if spec.kind == "internal-jpeg":
        return codecs.jpeg_roundtrip(img, spec.quality, spec.subsampling)
    return external_codec(img, spec)
