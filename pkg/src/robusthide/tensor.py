"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the hiding pipeline needs are provided. Broadcasting is
limited to same-shape operands and Python scalars.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from robusthide import kernels


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(topological_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` with every node after all of its parents."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.number))


# -- elementwise ---------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return _make(a.data + a.dtype.type(b), (a,), lambda g: (g,))
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return _make(a.data - a.dtype.type(b), (a,), lambda g: (g,))
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def mul(a: Tensor, b) -> Tensor:
    if _is_scalar(b):
        return scale(a, b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1 - s),))


def _sigmoid(v):
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1 / (1 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1 + e)
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values; gradient passes inside ``[lo, hi]`` and is zero outside."""
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def stop_gradient(x: Tensor) -> Tensor:
    """Same values as ``x``, but a fresh leaf: nothing flows back through it."""
    return Tensor(x.data)


def logit(x: Tensor, eps: float = 0.0) -> Tensor:
    """``log(c / (1 - c))`` with ``c`` clipped to ``[eps, 1 - eps]``; zero gradient where clipped."""
    c = np.clip(x.data, eps, 1 - eps)
    inside = (x.data >= eps) & (x.data <= 1 - eps)
    return _make(np.log(c / (1 - c)).astype(x.dtype), (x,), lambda g: (np.where(inside, g / (c * (1 - c)), 0).astype(x.dtype),))


def poly_round(x: Tensor) -> Tensor:
    """Differentiable rounding surrogate ``round(v) + (v - round(v))**3``."""
    r = kernels.round_half_away(x.data).astype(x.dtype)
    res = x.data - r
    return _make(r + res ** 3, (x,), lambda g: (g * 3 * res ** 2,))


# -- reductions and reshaping -------------------------------------------------

def mean(x: Tensor) -> Tensor:
    n = x.size
    shape, dtype = x.shape, x.dtype

    def backward(g):
        return (np.full(shape, g / n, dtype=dtype),)

    return _make(np.asarray(x.data.mean(), dtype=dtype), (x,), backward)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool ``[N, C, H, W] -> [N, C]``."""
    n, c, h, w = x.shape
    hw = h * w
    return _make(x.data.mean(axis=(2, 3)), (x,),
                 lambda g: (np.broadcast_to(g[:, :, None, None] / hw, x.shape).astype(x.dtype),))


def avg_pool(x: Tensor, grid: int) -> Tensor:
    """Average ``[N, C, H, W]`` over a ``grid x grid`` partition -> ``[N, C, grid, grid]``."""
    n, c, h, w = x.shape
    if h % grid or w % grid:
        raise ShapeError(f"avg_pool: {x.shape} not divisible into a {grid}x{grid} grid")
    bh, bw = h // grid, w // grid
    out = x.data.reshape(n, c, grid, bh, grid, bw).mean(axis=(3, 5))

    def backward(g):
        g = np.repeat(np.repeat(g / (bh * bw), bh, axis=2), bw, axis=3)
        return (g.astype(x.dtype),)

    return _make(out, (x,), backward)


def upsample(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling: every value becomes a ``factor x factor`` tile."""
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    return _make(out, (x,),
                 lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


# -- linear maps ---------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x[N, I] @ w[O, I].T + b[O]``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    xd, wd = x.data, w.data

    def backward(g):
        grads = (g @ wd, g.T @ xd)
        return grads + (g.sum(axis=0),) if b is not None else grads

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, backward)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation ``x[N, C, H, W] * w[F, C, k, k] -> [N, F, H', W']``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    f, cw, k, k2 = w.shape
    if cw != c or k != k2:
        raise ShapeError(f"conv2d: kernel {w.shape} does not match input {x.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if k > h + 2 * pad or k > wd + 2 * pad:
        raise ShapeError(f"conv2d: kernel size {k} exceeds padded input {x.shape} (pad={pad})")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    cols = kernels.im2col(x.data, k, stride, pad)          # [N, C*k*k, Ho*Wo]
    wmat = w.data.reshape(f, -1)
    out = np.matmul(wmat, cols)                             # [N, F, Ho*Wo]
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(n, f, ho, wo)
    x_shape = x.shape

    def backward(g):
        g3 = g.reshape(n, f, ho * wo)
        gx = kernels.col2im(np.matmul(wmat.T, g3), x_shape, k, stride, pad) if x.requires_grad else None
        gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, backward)


def channel_mix(x: Tensor, matrix, offset=None) -> Tensor:
    """Per-pixel affine map over channels: ``y[:, i] = sum_j M[i, j] x[:, j] + o[i]``."""
    m = np.asarray(matrix, dtype=x.dtype)
    out = np.einsum("ij,njhw->nihw", m, x.data)
    if offset is not None:
        out = out + np.asarray(offset, dtype=x.dtype)[None, :, None, None]
    return _make(out, (x,), lambda g: (np.einsum("ij,nihw->njhw", m, g),))


def _blocks(v):
    n, c, h, w = v.shape
    return v.reshape(n, c, h // 8, 8, w // 8, 8)


def block_transform(x: Tensor, basis) -> Tensor:
    """Apply ``B @ block @ B.T`` to every 8x8 block of ``x[N, C, H, W]``.

    With ``basis`` the orthonormal DCT matrix this is the blockwise 2-D DCT;
    with its transpose, the inverse.
    """
    n, c, h, w = x.shape
    if h % 8 or w % 8:
        raise ShapeError(f"block_transform: spatial size must be a multiple of 8, got {x.shape}")
    bm = np.asarray(basis, dtype=x.dtype)
    out = np.einsum("ui,ncaibj,vj->ncaubv", bm, _blocks(x.data), bm, optimize=True).reshape(x.shape)

    def backward(g):
        return (np.einsum("ui,ncaubv,vj->ncaibj", bm, _blocks(g), bm, optimize=True).reshape(x.shape),)

    return _make(out, (x,), backward)


# -- losses --------------------------------------------------------------------

def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mse_loss")
    diff = a.data - b.data
    n = diff.size
    val = np.asarray(np.mean(diff * diff), dtype=a.dtype)

    def backward(g):
        ga = (2 * g / n) * diff
        return ga, -ga

    return _make(val, (a, b), backward)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy, stable form ``max(z,0) - z*t + log1p(exp(-|z|))``."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    if t.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: shape mismatch {logits.shape} vs {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce_with_logits: targets must be 0/1 bits")
    z = logits.data
    t = t.astype(z.dtype)
    n = z.size
    val = np.mean(np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z))))

    def backward(g):
        return ((g / n) * (_sigmoid(z) - t),)

    return _make(np.asarray(val, dtype=z.dtype), (logits,), backward)


def check_finite(t: Tensor, what: str = "tensor"):
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"non-finite values in {what}")
