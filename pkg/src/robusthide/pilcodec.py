"""Standalone codec round-trip tool for the external adapter.

    python -m robusthide.pilcodec FORMAT QUALITY SRC DST

SRC/DST are either two files or two directories (every file in SRC is
round-tripped into DST under the same name, with DST's extension kept from
SRC). FORMAT is one of jpeg, webp, jpeg2000, copy. Quality semantics:

* jpeg, webp: Pillow's 1..100 quality
* jpeg2000: target PSNR in dB for OpenJPEG's ``dB`` quality mode
* copy: ignored (lossless identity)
"""
import io
import shutil
import sys
from pathlib import Path

from PIL import Image


def roundtrip(src: Path, dst: Path, fmt: str, quality: int):
    if fmt == "copy":
        shutil.copyfile(src, dst)
        return
    with Image.open(src) as im:
        im = im.convert("RGB")
        buf = io.BytesIO()
        if fmt == "jpeg":
            im.save(buf, format="JPEG", quality=quality)
        elif fmt == "webp":
            im.save(buf, format="WEBP", quality=quality)
        elif fmt == "jpeg2000":
            im.save(buf, format="JPEG2000", quality_mode="dB", quality_layers=[quality])
        else:
            raise SystemExit(f"unknown format {fmt}")
    buf.seek(0)
    with Image.open(buf) as dec:
        dec.convert("RGB").save(dst, format="PNG")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 4:
        print(__doc__, file=sys.stderr)
        return 1
    fmt, quality, src, dst = argv[0], int(argv[1]), Path(argv[2]), Path(argv[3])
    if src.is_dir():
        dst.mkdir(parents=True, exist_ok=True)
        for f in sorted(src.iterdir()):
            roundtrip(f, dst / f.name, fmt, quality)
    else:
        roundtrip(src, dst, fmt, quality)
    return 0


if __name__ == "__main__":
    sys.exit(main())
