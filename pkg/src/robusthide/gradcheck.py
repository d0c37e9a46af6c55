"""Central finite-difference checks for every differentiable op.

``run_suite`` is what the ``gradcheck`` CLI subcommand executes. Each case
builds a scalar by projecting the op output onto a fixed random tensor and
compares the analytic gradient of every input with central differences in
64-bit.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from robusthide import attacks as A
from robusthide import codecs
from robusthide import networks as N
from robusthide import tensor as T
from robusthide.tensor import Tensor


@dataclass
class GradResult:
    name: str
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_error < self.tol


def numerical_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of ``f`` with respect to ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], seed: int = 0, eps: float = 1e-6) -> float:
    """Worst relative error over all inputs of ``sum(fn(*inputs) * R)``."""
    leaves = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*leaves)
    proj = np.random.default_rng(seed).standard_normal(out.shape)

    def scalar():
        return float(np.sum(fn(*leaves).data * proj))

    if out.shape:
        loss = T.scale(T.mean(out * Tensor(proj)), out.size)
    else:
        loss = T.scale(out, float(proj))
    loss.backward()
    worst = 0.0
    for leaf in leaves:
        num = numerical_grad(scalar, leaf.data, eps)
        ana = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        worst = max(worst, relative_error(ana, num))
    return worst


def _away_from_half(rng, shape, lo, hi):
    """Values whose scaled JPEG coefficients keep clear of rounding ties is not
    guaranteed; callers use this for raw poly_round inputs only."""
    v = rng.uniform(lo, hi, shape)
    frac = v - np.floor(v)
    return np.where(np.abs(frac - 0.5) < 0.05, v + 0.2, v)


def cases(rng: np.random.Generator):
    """(name, fn, inputs) triples covering the engine and the attack pipelines."""
    r = rng.standard_normal
    away = lambda shape: np.where(np.abs(x := r(shape)) < 1e-2, 0.5, x)  # noqa: E731
    img = lambda n=1, s=8: rng.uniform(0.1, 0.9, (n, 3, s, s))  # noqa: E731
    bits = rng.integers(0, 2, (3, 5))
    frozen = rng.normal(0, 0.02, (1, 3, 8, 8))
    st_img = img()
    drop_seed = int(rng.integers(1 << 31))
    yield "add", T.add, [r((3, 4)), r((3, 4))]
    yield "sub", T.sub, [r((3, 4)), r((3, 4))]
    yield "mul", T.mul, [r((3, 4)), r((3, 4))]
    yield "scale", lambda a: T.scale(a, -2.5), [r((3, 4))]
    yield "add_scalar", lambda a: a + 1.5, [r((3, 4))]
    yield "neg", T.neg, [r((3, 4))]
    yield "relu", T.relu, [away((4, 5))]
    yield "sigmoid", T.sigmoid, [r((4, 5))]
    yield "clamp", lambda a: T.clamp(a, -0.5, 0.5), [np.where(np.abs(np.abs(x := r((4, 5))) - 0.5) < 1e-2, 0.0, x)]
    yield "mean", T.mean, [r((4, 5))]
    yield "spatial_mean", T.spatial_mean, [r((2, 3, 4, 4))]
    yield "avg_pool", lambda a: T.avg_pool(a, 2), [r((2, 3, 4, 4))]
    yield "upsample", lambda a: T.upsample(a, 2), [r((2, 3, 2, 2))]
    yield "reshape", lambda a: T.reshape(a, (6, 4)), [r((2, 3, 4))]
    yield "concat", lambda a, b: T.concat([a, b], axis=1), [r((2, 3, 2, 2)), r((2, 1, 2, 2))]
    yield "linear", T.linear, [r((3, 4)), r((5, 4)), r((5,))]
    yield "conv2d", lambda x, w, b: T.conv2d(x, w, b, stride=1, pad=1), [r((1, 2, 5, 5)), r((3, 2, 3, 3)), r((3,))]
    yield "conv2d_stride2", lambda x, w: T.conv2d(x, w, stride=2, pad=1), [r((2, 2, 6, 6)), r((3, 2, 3, 3))]
    yield "conv2d_nopad", lambda x, w: T.conv2d(x, w), [r((1, 3, 5, 4)), r((2, 3, 2, 2))]
    yield "channel_mix", lambda x: T.channel_mix(x, codecs.RGB_TO_YCC, codecs.YCC_OFFSET), [r((2, 3, 4, 4))]
    yield "block_dct", lambda x: T.block_transform(x, codecs.DCT_BASIS), [r((1, 2, 8, 16))]
    yield "block_idct", lambda x: T.block_transform(x, codecs.DCT_BASIS.T), [r((1, 2, 16, 8))]
    yield "logit", lambda a: T.logit(a, 0.05), [np.where(np.abs(x := rng.uniform(0, 1, (4, 5)) - 0.5) > 0.44, 0.5, x + 0.5)]
    yield "poly_round", T.poly_round, [_away_from_half(rng, (4, 5), -3, 3)]
    yield "mse_loss", T.mse_loss, [r((3, 4)), r((3, 4))]
    yield "bce_with_logits", lambda z: T.bce_with_logits(z, bits), [r((3, 5)) * 3]
    yield "stop_gradient_straight_through", _frozen_straight_through(np.round(st_img * 4) / 4 - st_img), [st_img]
    yield "gaussian_frozen_noise", lambda x: x + Tensor(frozen), [img()]
    yield "jpeg_mask", lambda x: A.attack_jpeg_mask(x, 25, 9), [img()]
    yield "jpeg_drop", lambda x: A.attack_jpeg_drop(x, A.linear_drop_profile(), np.random.default_rng(drop_seed)), [img()]
    yield "jpeg_poly_round", lambda x: A.attack_jpeg_poly_round(x, 50), [img()]
    yield "two_layer_net", _two_layer, [r((2, 2, 6, 6)), r((3, 2, 3, 3)), r((3,)), r((4, 3))]
    fn, params = _toy_pipeline(rng)
    yield "hiding_pipeline", fn, [img(2, 8), params["enc.out.w"], params["enc.msg.w"], params["dec.conv0.w"], params["dec.head.w"]]


def _frozen_straight_through(noise):
    """Straight-through with the codec residual frozen at the base point, so the
    finite-difference reference sees ``x + constant``."""
    return lambda x: A.straight_through(x, x.data + noise)


def _two_layer(x, w1, b1, w2):
    h = T.relu(T.conv2d(x, w1, b1, pad=1))
    return T.linear(T.spatial_mean(h), w2)


def _toy_pipeline(rng):
    d = N.Descriptor(image_size=8, message_length=3, enc_channels=3, enc_blocks=1,
                     dec_channels=3, dec_blocks=2, dec_downsample=1, msg_grid=2, msg_channels=2, pool_grid=2)
    params = N.init_params(d, int(rng.integers(1 << 31)), dtype=np.float64)
    msg = rng.integers(0, 2, (2, 3))

    def fn(cover, out_w, msg_w, dec_w, head_w):
        p = dict(params, **{"enc.out.w": out_w, "enc.msg.w": msg_w, "dec.conv0.w": dec_w, "dec.head.w": head_w})
        enc = N.encode(p, d, cover, msg)
        logits = N.decode(p, d, A.attack_jpeg_poly_round(enc, 90))
        return T.mse_loss(enc, cover) + T.bce_with_logits(logits, msg)

    return fn, {k: v.data for k, v in params.items()}


def run_suite(seed: int = 0, tol: float = 1e-6, names=None) -> list:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, inputs in cases(rng):
        if names and name not in names:
            continue
        results.append(GradResult(name, check(fn, inputs, seed=seed), tol))
    return results


def main(seed: int = 0, tol: float = 1e-6) -> int:
    t0 = time.time()
    results = run_suite(seed, tol)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  rel_err={r.rel_error:.2e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed in {time.time() - t0:.1f}s")
    return 0 if not failed else 2
