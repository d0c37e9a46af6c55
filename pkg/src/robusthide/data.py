"""Image datasets: folders on disk or a deterministic synthetic texture source."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif", ".tiff", ".webp", ".gif"}


class DatasetError(RuntimeError):
    pass


@dataclass
class ImageSet:
    images: np.ndarray                   # uint8 [N, S, S, 3]
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.images)

    @property
    def warning_count(self) -> int:
        return len(self.skipped)


def _fit(im: Image.Image, size: int) -> np.ndarray:
    """Center-crop to a square, then resize to ``size``."""
    im = im.convert("RGB")
    w, h = im.size
    s = min(w, h)
    left, top = (w - s) // 2, (h - s) // 2
    im = im.crop((left, top, left + s, top + s))
    if s != size:
        im = im.resize((size, size), Image.BICUBIC)
    return np.asarray(im, dtype=np.uint8)


def load_dataset(path, size: int) -> ImageSet:
    """Load every decodable image under ``path`` (sorted by name)."""
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    images, skipped = [], []
    for f in files:
        try:
            with Image.open(f) as im:
                images.append(_fit(im, size))
        except (UnidentifiedImageError, OSError, ValueError) as e:
            log.warning("skipping unreadable image %s: %s", f, e)
            skipped.append(str(f))
    if not images:
        raise DatasetError(f"empty dataset: no readable images in {root}")
    return ImageSet(np.stack(images), skipped)


def _smooth_noise(rng, size, octaves=4):
    out = np.zeros((size, size, 3))
    amp = 1.0
    for o in range(octaves):
        g = 2 ** (o + 1) + 1
        grid = rng.standard_normal((g, g, 3))
        # bilinear upsample of the coarse grid
        t = np.linspace(0, g - 1, size)
        i0 = np.minimum(t.astype(int), g - 2)
        f = (t - i0)[:, None]
        rows = grid[i0] * (1 - f)[:, :, None] + grid[i0 + 1] * f[:, :, None]
        cols = rows[:, i0] * (1 - f.T)[:, :, None] + rows[:, i0 + 1] * f.T[:, :, None]
        out += amp * cols
        amp *= 0.55
    return out


def synthetic_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """One textured RGB image: smooth colored noise, a few shapes, stripes and grain."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = rng.uniform(0.25, 0.75, 3)
    img = base + 0.12 * _smooth_noise(rng, size)
    for _ in range(rng.integers(1, 5)):
        color = rng.uniform(0.05, 0.95, 3)
        cx, cy, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.08, 0.35)
        if rng.random() < 0.5:
            m = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        else:
            m = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r * rng.uniform(0.3, 1.0))
        alpha = rng.uniform(0.4, 0.9)
        img[m] = (1 - alpha) * img[m] + alpha * color
    if rng.random() < 0.5:
        freq, theta = rng.uniform(3, 12), rng.uniform(0, np.pi)
        phase = 2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta))
        img += rng.uniform(0.02, 0.1) * np.sin(phase)[:, :, None]
    img += rng.normal(0, 0.015, img.shape)
    return np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)


def synthetic_dataset(count: int, size: int, seed: int = 0) -> ImageSet:
    """``count`` synthetic images; image ``i`` depends only on ``(seed, i)``."""
    if count < 1:
        raise DatasetError("empty dataset: synthetic count must be >= 1")
    ss = np.random.SeedSequence([seed, 0x5EED])
    imgs = [synthetic_image(np.random.default_rng(child), size) for child in ss.spawn(count)]
    return ImageSet(np.stack(imgs))
