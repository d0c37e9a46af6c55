"""Evaluation against true codecs.

Encoded images are quantized to 8 bits, passed through the real codec
(internal JPEG or an external command) and decoded. This module never
imports the attack layer: no training-time approximation can leak into
reported numbers.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from robusthide import codecs
from robusthide import networks as N
from robusthide.external import CodecError, CodecSpec, apply_codec
from robusthide.tensor import Tensor


def ber(pred, true) -> float:
    """Bit error rate in percent."""
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"bit arrays differ in shape: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("no bits to compare")
    return 100.0 * np.count_nonzero(pred != true) / pred.size


@dataclass(frozen=True)
class EvalRow:
    attack: str                 # codec name, or "none"
    quality: Optional[int]
    ber: float                  # percent; NaN when the row failed
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class EvalReport:
    rows: list
    apd: float
    psnr: float
    samples: int
    fingerprint: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples <= 0:
            raise ValueError("sample count must be positive")
        for r in self.rows:
            if r.ok and not 0 <= r.ber <= 100:
                raise ValueError(f"BER out of range in row {r}")

    def get(self, attack: str, quality: Optional[int] = None) -> EvalRow:
        for r in self.rows:
            if r.attack == attack and r.quality == quality:
                return r
        raise KeyError((attack, quality))

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented

        def same(a, b):
            return (math.isnan(a) and math.isnan(b)) or a == b

        return (len(self.rows) == len(other.rows) and self.samples == other.samples
                and self.fingerprint == other.fingerprint and same(self.apd, other.apd)
                and same(self.psnr, other.psnr)
                and all(a.attack == b.attack and a.quality == b.quality and a.error == b.error and same(a.ber, b.ber)
                        for a, b in zip(self.rows, other.rows)))


def encode_uint8(params, d: N.Descriptor, covers: np.ndarray, msgs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Encode uint8 covers ``[N, S, S, 3]`` and return the 8-bit encoded images."""
    out = np.empty_like(covers)
    for i in range(0, len(covers), batch_size):
        x = Tensor(codecs.to_real(covers[i:i + batch_size]))
        out[i:i + batch_size] = codecs.to_uint8(N.encode(params, d, x, msgs[i:i + batch_size]).data)
    return out


def decode_uint8(params, d: N.Descriptor, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    bits = []
    for i in range(0, len(images), batch_size):
        logits = N.decode(params, d, Tensor(codecs.to_real(images[i:i + batch_size])))
        bits.append(N.decode_bits(logits.data))
    return np.concatenate(bits)


def param_digest(params: dict) -> str:
    h = hashlib.sha256()
    for name, arr in N.named_tensors(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()


def evaluate(params, d: N.Descriptor, covers: np.ndarray, attacks: Sequence[CodecSpec], seed: int = 1234,
             batch_size: int = 64, codec_batch: int = 256) -> EvalReport:
    """BER under each true codec plus a no-attack row, and cover-vs-encoded APD/PSNR."""
    covers = np.asarray(covers)
    if covers.ndim != 4 or covers.dtype != np.uint8 or len(covers) == 0:
        raise ValueError("covers must be a non-empty uint8 [N, S, S, 3] array")
    rng = np.random.default_rng(seed)
    msgs = rng.integers(0, 2, (len(covers), d.message_length))
    encoded = encode_uint8(params, d, covers, msgs, batch_size)
    apd = codecs.apd(covers, encoded)
    psnr = float(np.mean([codecs.psnr(c, e) for c, e in zip(covers, encoded)]))

    rows = [EvalRow("none", None, ber(decode_uint8(params, d, encoded, batch_size), msgs))]
    for spec in attacks:
        name = spec.name or ("internal" if spec.kind == "internal-jpeg" else "external")
        try:
            attacked = np.concatenate([apply_codec(encoded[i:i + codec_batch], spec)
                                       for i in range(0, len(encoded), codec_batch)])
        except CodecError as e:
            rows.append(EvalRow(name, spec.quality, float("nan"), str(e) or type(e).__name__))
            continue
        rows.append(EvalRow(name, spec.quality, ber(decode_uint8(params, d, attacked, batch_size), msgs)))

    key = "|".join([param_digest(params), str(seed), str(len(covers))] + [s.label for s in attacks])
    return EvalReport(rows, apd, psnr, len(covers), hashlib.sha256(key.encode()).hexdigest()[:16])
