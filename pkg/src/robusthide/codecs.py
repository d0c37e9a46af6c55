"""Forward-only JPEG round trip built from its lossy stages.

Entropy coding is skipped: it is lossless, so the decoded pixels are the
same as a real encoder/decoder pair with these tables would produce. Images
are ``uint8`` arrays of shape ``[H, W, 3]`` (or ``[N, H, W, 3]`` batches).
"""
from __future__ import annotations

import math

import numpy as np

from robusthide.kernels import quantize_dequantize, round_half_away

# Standard luminance / chrominance tables (JPEG Annex K), row-major 8x8.
LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.int64)

# BT.601 full range, as used by JFIF.
RGB_TO_YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
YCC_OFFSET = np.array([0.0, 128.0, 128.0])
YCC_TO_RGB = np.array([
    [1.0, 0.0, 1.402],
    [1.0, -0.344136, -0.714136],
    [1.0, 1.772, 0.0],
])


def _dct_basis():
    u = np.arange(8)[:, None]
    x = np.arange(8)[None, :]
    d = np.cos((2 * x + 1) * u * np.pi / 16) / 2
    d[0] /= math.sqrt(2)
    return d


DCT_BASIS = _dct_basis()

# zig-zag scan order as (row, col) pairs
ZIGZAG = sorted(((r, c) for r in range(8) for c in range(8)),
                key=lambda rc: (rc[0] + rc[1], rc[0] if (rc[0] + rc[1]) % 2 else rc[1]))


def zigzag_index() -> np.ndarray:
    """8x8 array giving each coefficient's position in the zig-zag scan."""
    idx = np.empty((8, 8), dtype=np.int64)
    for i, (r, c) in enumerate(ZIGZAG):
        idx[r, c] = i
    return idx


# -- image conversions -----------------------------------------------------

def to_real(img: np.ndarray) -> np.ndarray:
    """uint8 ``[..., H, W, 3]`` -> float32 ``[..., 3, H, W]`` in [0, 1]."""
    img = np.asarray(img)
    return np.moveaxis(img.astype(np.float32) / np.float32(255), -1, -3)


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Real ``[..., 3, H, W]`` in [0, 1] -> uint8 ``[..., H, W, 3]`` (clamped, half-away rounding)."""
    v = np.clip(np.asarray(x, dtype=np.float64) * 255.0, 0, 255)
    return np.moveaxis(round_half_away(v).astype(np.uint8), -3, -1)


def rgb_to_ycbcr(img) -> np.ndarray:
    """RGB ``[..., 3]`` -> real YCbCr planes ``[..., 3]`` (unrounded)."""
    return np.asarray(img, dtype=np.float64) @ RGB_TO_YCC.T + YCC_OFFSET


def ycbcr_to_rgb(ycc) -> np.ndarray:
    """Real YCbCr ``[..., 3]`` -> real RGB ``[..., 3]`` (unrounded, unclamped)."""
    return (np.asarray(ycc, dtype=np.float64) - YCC_OFFSET) @ YCC_TO_RGB.T


def _to_u8(v):
    return round_half_away(np.clip(v, 0, 255)).astype(np.uint8)


# -- transform and quantization ------------------------------------------------

def dct8x8(block) -> np.ndarray:
    """2-D DCT-II with JPEG normalization over the last two axes (8x8)."""
    b = np.asarray(block, dtype=np.float64)
    return DCT_BASIS @ b @ DCT_BASIS.T


def idct8x8(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    return DCT_BASIS.T @ c @ DCT_BASIS


def quality_scale(quality: int) -> int:
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in 1..100, got {quality}")
    return 5000 // quality if quality < 50 else 200 - 2 * quality


def build_quant_table(base, quality: int) -> np.ndarray:
    """Scale a base table with the usual 5000/q, 200-2q law."""
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in 1..100, got {quality}")
    s = 5000 / quality if quality < 50 else 200 - 2 * quality
    t = round_half_away(np.asarray(base, dtype=np.float64) * s / 100)
    return np.clip(t, 1, 255).astype(np.int64)


def quantize(coeffs, table) -> np.ndarray:
    return round_half_away(np.asarray(coeffs, dtype=np.float64) / table).astype(np.int64)


def dequantize(q, table) -> np.ndarray:
    return np.asarray(q, dtype=np.float64) * table


def _pad_to(plane, mult):
    h, w = plane.shape[-2:]
    ph, pw = (-h) % mult, (-w) % mult
    if ph or pw:
        widths = [(0, 0)] * (plane.ndim - 2) + [(0, ph), (0, pw)]
        plane = np.pad(plane, widths, mode="edge")
    return plane


def _code_plane(plane, table):
    """Level shift, blockwise DCT, quantize/dequantize, IDCT, undo shift.

    ``plane`` is ``[..., H, W]`` with H and W multiples of 8.
    """
    *lead, h, w = plane.shape
    blocks = (plane - 128.0).reshape(*lead, h // 8, 8, w // 8, 8)
    blocks = np.swapaxes(blocks, -3, -2)
    coeffs = dct8x8(blocks)
    rec = idct8x8(quantize_dequantize(coeffs, table))
    rec = np.swapaxes(rec, -3, -2).reshape(*lead, h, w)
    return rec + 128.0


def jpeg_roundtrip(img, quality: int = 50, subsampling: str = "444") -> np.ndarray:
    """Compress and decompress ``img`` (uint8 ``[..., H, W, 3]``).

    Intermediate YCbCr and decoded planes are rounded to 8 bits as a real
    codec stores them. ``subsampling`` is ``"444"`` or ``"420"``.
    """
    if subsampling not in ("444", "420"):
        raise ValueError(f"subsampling must be '444' or '420', got {subsampling!r}")
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.shape[-1] != 3:
        raise ValueError(f"expected uint8 [..., H, W, 3] image, got {img.dtype} {img.shape}")
    h, w = img.shape[-3:-1]
    luma_t = build_quant_table(LUMA_TABLE, quality)
    chroma_t = build_quant_table(CHROMA_TABLE, quality)

    ycc = _to_u8(rgb_to_ycbcr(img)).astype(np.float64)
    planes = np.moveaxis(ycc, -1, 0)  # [3, ..., H, W]
    mult = 16 if subsampling == "420" else 8
    y = _pad_to(planes[0], mult)
    out_y = _to_u8(_code_plane(y, luma_t))[..., :h, :w]
    out_c = []
    for plane in planes[1:]:
        p = _pad_to(plane, mult)
        if subsampling == "420":
            *lead, ph, pw = p.shape
            p = p.reshape(*lead, ph // 2, 2, pw // 2, 2).mean(axis=(-3, -1))
            p = _pad_to(p, 8)
        rec = _to_u8(_code_plane(p, chroma_t)).astype(np.float64)
        if subsampling == "420":
            rec = np.repeat(np.repeat(rec, 2, axis=-2), 2, axis=-1)
        out_c.append(rec[..., :h, :w])
    ycc_out = np.stack([out_y.astype(np.float64)] + out_c, axis=-1)
    return _to_u8(ycbcr_to_rgb(ycc_out))


# -- metrics -------------------------------------------------------------------

def _check_same(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")


def psnr(a, b) -> float:
    """PSNR in dB on the 0-255 scale; ``inf`` for identical images."""
    _check_same(a, b)
    mse = np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return 10 * math.log10(255.0 ** 2 / mse)


def apd(a, b) -> float:
    """Average absolute pixel difference on the 0-255 scale."""
    _check_same(a, b)
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
