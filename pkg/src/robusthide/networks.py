"""Encoder and decoder networks.

Encoder: ``enc_blocks`` 3x3 conv+ReLU blocks over the cover, concatenation
with the spatially replicated message (bits mapped to +-1) and the cover
itself, one more conv block, a 1x1 conv, and a bounded head

    encoded = sigmoid(logit(cover) + residual)

which keeps the output in (0, 1) and starts close to the cover. With
``msg_grid > 0`` a learned linear map also expands the message to
``msg_channels`` planes on a coarse ``msg_grid x msg_grid`` layout, each cell
replicated over its image region, and concatenated alongside.

Decoder: ``dec_blocks`` 3x3 conv+ReLU blocks (the last ``dec_downsample``
of them with stride 2), average pooling onto a ``pool_grid x pool_grid``
layout (1 = global pooling) and a linear map to ``message_length`` logits.

Uniform message planes and global pooling are position-blind, so that
variant learns slowly; the grid options give both ends a spatial code.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from robusthide import tensor as T
from robusthide.tensor import ShapeError, Tensor

COVER_EPS = 1e-3


@dataclass(frozen=True)
class Descriptor:
    image_size: int = 128
    message_length: int = 30
    enc_channels: int = 32
    enc_blocks: int = 4
    dec_channels: int = 32
    dec_blocks: int = 5
    dec_downsample: int = 0
    out_gain: float = 0.1
    msg_grid: int = 0
    msg_channels: int = 4
    pool_grid: int = 1

    def __post_init__(self):
        if self.image_size < 1 or self.message_length < 1:
            raise ValueError("image_size and message_length must be positive")
        if self.enc_blocks < 1 or self.dec_blocks < 1:
            raise ValueError("need at least one encoder and one decoder block")
        if not 0 <= self.dec_downsample <= self.dec_blocks:
            raise ValueError("dec_downsample must lie in 0..dec_blocks")
        if self.msg_grid and self.image_size % self.msg_grid:
            raise ValueError("image_size must be divisible by msg_grid")
        final = self.image_size
        for _ in range(self.dec_downsample):
            final = (final - 1) // 2 + 1
        if self.pool_grid < 1 or final % self.pool_grid:
            raise ValueError(f"decoder feature map {final}x{final} not divisible by pool_grid={self.pool_grid}")

    def as_dict(self):
        return asdict(self)


def param_shapes(d: Descriptor) -> dict:
    """Ordered parameter names and shapes for a descriptor."""
    shapes = {}
    c_in = 3
    for i in range(d.enc_blocks):
        shapes[f"enc.conv{i}.w"] = (d.enc_channels, c_in, 3, 3)
        shapes[f"enc.conv{i}.b"] = (d.enc_channels,)
        c_in = d.enc_channels
    mix_in = d.enc_channels + d.message_length + 3
    if d.msg_grid:
        shapes["enc.msg.w"] = (d.msg_channels * d.msg_grid * d.msg_grid, d.message_length)
        shapes["enc.msg.b"] = (d.msg_channels * d.msg_grid * d.msg_grid,)
        mix_in += d.msg_channels
    shapes["enc.mix.w"] = (d.enc_channels, mix_in, 3, 3)
    shapes["enc.mix.b"] = (d.enc_channels,)
    shapes["enc.out.w"] = (3, d.enc_channels, 1, 1)
    shapes["enc.out.b"] = (3,)
    c_in = 3
    for i in range(d.dec_blocks):
        shapes[f"dec.conv{i}.w"] = (d.dec_channels, c_in, 3, 3)
        shapes[f"dec.conv{i}.b"] = (d.dec_channels,)
        c_in = d.dec_channels
    shapes["dec.head.w"] = (d.message_length, d.dec_channels * d.pool_grid ** 2)
    shapes["dec.head.b"] = (d.message_length,)
    return shapes


def init_bound(name: str, shape, d: Descriptor) -> float:
    """Half-width of the uniform init: sqrt(6 / fan_in) for ReLU layers."""
    fan_in = int(np.prod(shape[1:]))
    if name == "enc.out.w":
        return d.out_gain * np.sqrt(3.0 / fan_in)
    if name in ("dec.head.w", "enc.msg.w"):
        return np.sqrt(3.0 / fan_in)
    return np.sqrt(6.0 / fan_in)


def init_params(d: Descriptor, seed: int, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(d).items():
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            a = init_bound(name, shape, d)
            data = rng.uniform(-a, a, size=shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    return params


def check_params(params: dict, d: Descriptor):
    shapes = param_shapes(d)
    if list(params) != list(shapes):
        raise ShapeError("parameter names do not match the descriptor")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ShapeError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name].data)):
            raise ValueError(f"parameter {name} holds non-finite values")


def message_planes(msg: np.ndarray, h: int, w: int, dtype) -> Tensor:
    """Replicate each bit over an HxW plane, bits mapped to -1/+1."""
    m = 2.0 * np.asarray(msg, dtype=np.float64) - 1.0
    return Tensor(np.broadcast_to(m[:, :, None, None], m.shape + (h, w)).astype(dtype))


def encode(params: dict, d: Descriptor, cover: Tensor, msg) -> Tensor:
    msg = np.asarray(msg)
    if cover.ndim != 4 or cover.shape[1] != 3:
        raise ShapeError(f"encode: cover must be [N, 3, H, W], got {cover.shape}")
    if msg.shape != (cover.shape[0], d.message_length):
        raise ShapeError(f"encode: message batch must be {(cover.shape[0], d.message_length)}, got {msg.shape}")
    n, _, h, w = cover.shape
    x = cover
    for i in range(d.enc_blocks):
        x = T.relu(T.conv2d(x, params[f"enc.conv{i}.w"], params[f"enc.conv{i}.b"], pad=1))
    parts = [x, message_planes(msg, h, w, cover.dtype)]
    if d.msg_grid:
        m = Tensor((2.0 * msg - 1.0).astype(cover.dtype))
        grid = T.reshape(T.linear(m, params["enc.msg.w"], params["enc.msg.b"]),
                         (n, d.msg_channels, d.msg_grid, d.msg_grid))
        parts.append(T.upsample(grid, h // d.msg_grid))
    x = T.concat(parts + [cover], axis=1)
    x = T.relu(T.conv2d(x, params["enc.mix.w"], params["enc.mix.b"], pad=1))
    residual = T.conv2d(x, params["enc.out.w"], params["enc.out.b"])
    return T.sigmoid(residual + T.logit(cover, COVER_EPS))


def decode(params: dict, d: Descriptor, img: Tensor) -> Tensor:
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"decode: image must be [N, 3, H, W], got {img.shape}")
    x = img
    first_down = d.dec_blocks - d.dec_downsample
    for i in range(d.dec_blocks):
        stride = 2 if i >= first_down else 1
        x = T.relu(T.conv2d(x, params[f"dec.conv{i}.w"], params[f"dec.conv{i}.b"], stride=stride, pad=1))
    if d.pool_grid == 1:
        feats = T.spatial_mean(x)
    else:
        feats = T.reshape(T.avg_pool(x, d.pool_grid), (x.shape[0], -1))
    return T.linear(feats, params["dec.head.w"], params["dec.head.b"])


def decode_bits(logits) -> np.ndarray:
    """Bit is 1 iff its logit is strictly positive."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return (z > 0).astype(np.uint8)


def named_tensors(params: dict) -> list:
    """Ordered ``(name, array)`` pairs for serialization."""
    return [(name, p.data) for name, p in params.items()]


def from_named_tensors(pairs, dtype=None) -> dict:
    return {name: Tensor(np.array(arr, dtype=dtype or arr.dtype), requires_grad=True, name=name)
            for name, arr in pairs}
