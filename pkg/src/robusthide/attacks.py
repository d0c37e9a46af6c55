"""Attack (noise) layer applied to encoded images during training.

Every attack maps an encoded batch ``x[N, 3, H, W]`` in [0, 1] to a
distorted batch of the same shape. ``pseudo_diff`` wraps any forward-only
codec: the forward value is the true codec output, the backward pass is the
identity, because the codec's contribution enters as an additive
stop-gradient term (codec(x) - x).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from robusthide import codecs
from robusthide import tensor as T
from robusthide.external import CodecError, CodecSpec, apply_codec
from robusthide.tensor import Tensor

KINDS = ("identity", "gaussian", "jpeg_mask", "jpeg_drop", "jpeg_poly_round", "pseudo_diff")


class AttackError(RuntimeError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    sigma: float = 0.0
    quality: int = 50
    keep_luma: int = 25
    keep_chroma: int = 9
    drop_profile: Optional[tuple] = None  # 64 probabilities, row-major 8x8
    codec: Optional[CodecSpec] = None
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.weight < 0:
            raise ValueError(f"attack weight must be >= 0, got {self.weight}")
        if not (1 <= self.keep_luma <= 64 and 1 <= self.keep_chroma <= 64):
            raise ValueError("keep counts must lie in 1..64")
        if self.kind == "pseudo_diff" and self.codec is None:
            raise ValueError("pseudo_diff attack needs a codec")
        if self.kind == "jpeg_poly_round" and not 1 <= self.quality <= 100:
            raise ValueError(f"JPEG quality must be in 1..100, got {self.quality}")

    @property
    def label(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian-{self.sigma:g}"
        if self.kind == "pseudo_diff":
            return f"pseudo_diff[{self.codec.label}]"
        if self.kind == "jpeg_mask":
            return f"jpeg_mask-{self.keep_luma}/{self.keep_chroma}"
        if self.kind == "jpeg_poly_round":
            return f"jpeg_poly_round-{self.quality}"
        return self.kind


@dataclass
class AttackSchedule:
    attacks: Sequence[AttackSpec] = field(default_factory=lambda: [AttackSpec("identity")])

    def __post_init__(self):
        if not self.attacks:
            raise ValueError("attack schedule is empty")
        w = np.array([a.weight for a in self.attacks], dtype=np.float64)
        if w.sum() <= 0:
            raise ValueError("attack weights are all zero")
        self.probabilities = w / w.sum()


def sample_attack(schedule: AttackSchedule, rng: np.random.Generator) -> AttackSpec:
    if len(schedule.attacks) == 1:
        return schedule.attacks[0]
    i = rng.choice(len(schedule.attacks), p=schedule.probabilities)
    return schedule.attacks[i]


# -- attacks -------------------------------------------------------------------

def attack_identity(x: Tensor) -> Tensor:
    return x


def attack_gaussian(x: Tensor, sigma: float, rng: np.random.Generator) -> Tensor:
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x
    noise = rng.normal(0.0, sigma, size=x.shape).astype(x.dtype)
    return T.clamp(x + Tensor(noise), 0.0, 1.0)


def straight_through(x: Tensor, values) -> Tensor:
    """``x + stop_gradient(values - x)``: forward ``values``, backward identity."""
    noise = Tensor(np.asarray(values, dtype=x.dtype) - x.data)
    return x + T.stop_gradient(noise)


def attack_pseudo_diff(x: Tensor, codec: CodecSpec) -> Tensor:
    xc = T.clamp(x, 0.0, 1.0)
    try:
        out = apply_codec(codecs.to_uint8(xc.data), codec)
    except CodecError as e:
        raise AttackError(f"codec {codec.label} failed on batch of shape {x.shape}: {e}") from e
    return straight_through(xc, codecs.to_real(out))


def _to_ycc(x: Tensor) -> Tensor:
    # [0,1] RGB -> level-shifted YCbCr on the 0-255 scale
    return T.channel_mix(x, codecs.RGB_TO_YCC * 255.0, codecs.YCC_OFFSET - 128.0)


# exact inverse of the forward matrix, so that keeping every coefficient is an identity
_YCC_INV = np.linalg.inv(codecs.RGB_TO_YCC)


def _from_ycc(y: Tensor) -> Tensor:
    inv = _YCC_INV / 255.0
    return T.channel_mix(y, inv, -(inv @ (codecs.YCC_OFFSET - 128.0)))


def _check_blocks(x: Tensor):
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] % 8 or x.shape[3] % 8:
        raise ValueError(f"JPEG approximations need [N, 3, 8k, 8m] input, got {x.shape}")


def _tile(per_channel: np.ndarray, shape, dtype) -> np.ndarray:
    n, c, h, w = shape
    return np.broadcast_to(np.tile(per_channel, (1, h // 8, w // 8))[None], shape).astype(dtype)


def zigzag_keep_mask(keep: int) -> np.ndarray:
    return (codecs.zigzag_index() < keep).astype(np.float64)


def attack_jpeg_mask(x: Tensor, keep_luma: int = 25, keep_chroma: int = 9) -> Tensor:
    _check_blocks(x)
    if not (1 <= keep_luma <= 64 and 1 <= keep_chroma <= 64):
        raise ValueError("keep counts must lie in 1..64")
    mask = np.stack([zigzag_keep_mask(keep_luma)] + [zigzag_keep_mask(keep_chroma)] * 2)
    coeffs = T.block_transform(_to_ycc(x), codecs.DCT_BASIS)
    kept = coeffs * Tensor(_tile(mask, x.shape, x.dtype))
    return _from_ycc(T.block_transform(kept, codecs.DCT_BASIS.T))


def linear_drop_profile() -> np.ndarray:
    """Drop probability rising linearly along the zig-zag index, 0 at DC, 1 at the last AC."""
    return codecs.zigzag_index() / 63.0


def attack_jpeg_drop(x: Tensor, drop_profile, rng: np.random.Generator) -> Tensor:
    _check_blocks(x)
    p = np.asarray(drop_profile, dtype=np.float64).reshape(8, 8)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("drop probabilities must lie in [0, 1]")
    n, c, h, w = x.shape
    u = rng.random((n, c, h // 8, w // 8, 8, 8))
    keep = (u >= p).astype(x.dtype)
    mask = keep.transpose(0, 1, 2, 4, 3, 5).reshape(x.shape)
    coeffs = T.block_transform(_to_ycc(x), codecs.DCT_BASIS)
    return _from_ycc(T.block_transform(coeffs * Tensor(mask), codecs.DCT_BASIS.T))


def attack_jpeg_poly_round(x: Tensor, quality: int = 50) -> Tensor:
    _check_blocks(x)
    tables = np.stack([codecs.build_quant_table(codecs.LUMA_TABLE, quality)]
                      + [codecs.build_quant_table(codecs.CHROMA_TABLE, quality)] * 2).astype(np.float64)
    coeffs = T.block_transform(_to_ycc(x), codecs.DCT_BASIS)
    v = T.poly_round(coeffs * Tensor(_tile(1.0 / tables, x.shape, x.dtype)))
    deq = v * Tensor(_tile(tables, x.shape, x.dtype))
    return _from_ycc(T.block_transform(deq, codecs.DCT_BASIS.T))


def apply_attack(x: Tensor, spec: AttackSpec, rng: Optional[np.random.Generator] = None) -> Tensor:
    if spec.kind == "identity":
        return attack_identity(x)
    if spec.kind == "gaussian":
        return attack_gaussian(x, spec.sigma, rng)
    if spec.kind == "jpeg_mask":
        return attack_jpeg_mask(x, spec.keep_luma, spec.keep_chroma)
    if spec.kind == "jpeg_drop":
        profile = spec.drop_profile if spec.drop_profile is not None else linear_drop_profile()
        return attack_jpeg_drop(x, profile, rng)
    if spec.kind == "jpeg_poly_round":
        return attack_jpeg_poly_round(x, spec.quality)
    return attack_pseudo_diff(x, spec.codec)
