import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robusthide import _pykernels, gradcheck, kernels
from robusthide import tensor as T
from robusthide.tensor import ShapeError, Tensor


def naive_conv2d(x, w, b, stride, pad):
    """Direct quadruple loop, independent of im2col."""
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(n):
        for o in range(f):
            for y in range(ho):
                for z in range(wo):
                    patch = xp[i, :, y * stride:y * stride + k, z * stride:z * stride + k]
                    out[i, o, y, z] = np.sum(patch * w[o]) + (b[o] if b is not None else 0)
    return out


class TestElementwise:
    def test_add(self):
        assert np.array_equal(T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4, 6])

    def test_mul_by_zero_annihilates_value_and_grad(self):
        x = Tensor(np.array([1.5, -2.0, 3.0]), requires_grad=True)
        y = T.mul(x, 0)
        assert np.array_equal(y.data, np.zeros(3))
        T.mean(y).backward()
        assert np.array_equal(x.grad, np.zeros(3))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
            T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_relu_sigmoid(self):
        assert np.array_equal(T.relu(Tensor([-1.0, 2.0])).data, [0, 2])
        assert T.sigmoid(Tensor(0.0)).item() == 0.5

    def test_relu_subgradient_at_zero_is_zero(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        T.mean(T.relu(x)).backward()
        assert np.array_equal(x.grad, np.zeros(3))

    def test_sigmoid_extreme_inputs_finite(self):
        s = T.sigmoid(Tensor(np.array([-1000.0, 1000.0]))).data
        assert np.all(np.isfinite(s)) and s[0] == 0 and s[1] == 1


class TestLosses:
    def test_mse_self_is_zero(self):
        x = Tensor(np.random.default_rng(0).standard_normal((4, 4)))
        assert T.mse_loss(x, x).item() == 0

    def test_bce_zero_logit(self):
        assert T.bce_with_logits(Tensor([0.0]), np.array([1])).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_bce_large_logits_stable(self):
        v = T.bce_with_logits(Tensor([800.0, -800.0]), np.array([0, 1])).item()
        assert v == pytest.approx(800.0)

    def test_bce_rejects_non_bits(self):
        with pytest.raises(ValueError):
            T.bce_with_logits(Tensor([0.0]), np.array([0.5]))

    def test_loss_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.mse_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.random.default_rng(1).standard_normal((2, 1, 5, 6)))
        y = T.conv2d(x, Tensor(np.ones((1, 1, 1, 1))))
        assert np.array_equal(y.data, x.data)

    def test_zero_kernel(self):
        x = Tensor(np.random.default_rng(1).standard_normal((1, 2, 5, 5)))
        assert not np.any(T.conv2d(x, Tensor(np.zeros((3, 2, 3, 3))), pad=1).data)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)])
    def test_matches_naive_loop(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
        want = naive_conv2d(x, w, b, stride, pad)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-5

    def test_float32_matches_naive(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
        w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        got = T.conv2d(Tensor(x), Tensor(w), pad=1)
        assert got.dtype == np.float32
        assert np.max(np.abs(got.data - naive_conv2d(x, w, None, 1, 1))) < 1e-5

    def test_output_size_formula(self):
        y = T.conv2d(Tensor(np.zeros((1, 1, 11, 9))), Tensor(np.zeros((2, 1, 3, 3))), stride=2, pad=1)
        assert y.shape == (1, 2, (11 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_kernel_too_large(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


class TestStopGradient:
    def test_forward_bitwise_identity(self):
        x = Tensor(np.random.default_rng(2).standard_normal((3, 3)).astype(np.float32), requires_grad=True)
        assert np.array_equal(T.stop_gradient(x).data, x.data)

    def test_blocks_gradient(self):
        x = Tensor(np.ones(4), requires_grad=True)
        out = T.mean(T.stop_gradient(x))
        out.backward()
        assert x.grad is None or not np.any(x.grad)

    def test_straight_through_identity(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal(6), requires_grad=True)
        f = np.floor(x.data * 3)
        y = x + T.stop_gradient(Tensor(f) - T.stop_gradient(x))
        T.mean(y).backward()
        g_st = x.grad.copy()
        x.grad = None
        T.mean(x).backward()
        assert np.array_equal(g_st, x.grad)


class TestGraph:
    def test_topological_order_parents_first(self):
        a = Tensor(np.ones(3), requires_grad=True)
        b = T.relu(a)
        c = T.add(b, a)
        d = T.mul(c, b)
        order = T.topological_order(d)
        pos = {id(n): i for i, n in enumerate(order)}
        for node in order:
            for p in node._parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(node)]
        assert len(order) == len({id(n) for n in order})

    def test_backward_visits_each_node_once(self):
        calls = []
        a = Tensor(np.ones(3), requires_grad=True)
        b = T.relu(a)
        inner = b._backward
        b._backward = lambda g: (calls.append(1), inner(g))[1]
        # b feeds two consumers; its backward must still run exactly once
        T.mean(T.add(T.mul(b, b), b)).backward()
        assert len(calls) == 1
        assert np.allclose(a.grad, (2 * 1 + 1) / 3)

    def test_backward_linearity(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((1, 2, 5, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
        tgt = Tensor(rng.standard_normal((1, 2, 5, 5)))

        def losses():
            h = T.conv2d(x, w, pad=1)
            return T.mse_loss(h, tgt), T.mean(T.sigmoid(h))

        l1, l2 = losses()
        (l1 + l2).backward()
        joint = x.grad.copy(), w.grad.copy()
        x.grad = w.grad = None
        l1, _ = losses()
        l1.backward()
        sep = x.grad.copy(), w.grad.copy()
        x.grad = w.grad = None
        _, l2 = losses()
        l2.backward()
        for j, s, extra in zip(joint, sep, (x.grad, w.grad)):
            np.testing.assert_allclose(j, s + extra, rtol=1e-12, atol=1e-15)

    def test_unseeded_backward_requires_scalar(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_finiteness_guard(self):
        with pytest.raises(T.NonFiniteError):
            T.check_finite(Tensor(np.array([1.0, np.nan])), "loss")


@pytest.mark.parametrize("name", [c[0] for c in gradcheck.cases(np.random.default_rng(0))])
def test_gradcheck_per_op(name):
    (res,) = gradcheck.run_suite(seed=0, tol=1e-6, names={name})
    assert res.passed, f"{name}: relative error {res.rel_error:.3e}"


class TestKernelBackends:
    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 2), c=st.integers(1, 3), h=st.integers(3, 9), w=st.integers(3, 9),
           k=st.sampled_from([1, 2, 3]), stride=st.integers(1, 3), pad=st.integers(0, 2),
           f64=st.booleans())
    def test_im2col_col2im_parity(self, n, c, h, w, k, stride, pad, f64):
        rng = np.random.default_rng(n * 1000 + h * 10 + w)
        x = rng.standard_normal((n, c, h, w)).astype(np.float64 if f64 else np.float32)
        a = kernels.im2col(x, k, stride, pad)
        b = _pykernels.im2col(x, k, stride, pad)
        assert np.array_equal(a, b)
        g = rng.standard_normal(a.shape).astype(x.dtype)
        assert np.array_equal(kernels.col2im(g, x.shape, k, stride, pad),
                              _pykernels.col2im(g, x.shape, k, stride, pad))

    def test_col2im_is_adjoint_of_im2col(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((2, 3, 7, 6))
        cols = kernels.im2col(x, 3, 2, 1)
        g = rng.standard_normal(cols.shape)
        lhs = np.sum(cols * g)
        rhs = np.sum(x * kernels.col2im(g, x.shape, 3, 2, 1))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_round_half_away_parity(self):
        v = np.array([-2.5, -1.5, -0.5, 0.5, 1.5, 2.5, 0.49, -0.51, 3.0])
        want = np.array([-3, -2, -1, 1, 2, 3, 0, -1, 3], dtype=float)
        assert np.array_equal(kernels.round_half_away(v), want)
        assert np.array_equal(_pykernels.round_half_away(v), want)

    def test_quantize_parity(self):
        rng = np.random.default_rng(11)
        c = rng.standard_normal((5, 8, 8)) * 100
        t = rng.integers(1, 50, (8, 8))
        assert np.array_equal(kernels.quantize_dequantize(c, t), _pykernels.quantize_dequantize(c, t))

    @pytest.mark.parametrize("layout", ["fortran", "strided", "transposed"])
    def test_non_contiguous_inputs(self, layout):
        rng = np.random.default_rng(12)
        base = rng.standard_normal((16, 8, 8)) * 40 + 0.5
        v = {"fortran": np.asfortranarray(base), "strided": base[::2], "transposed": base.transpose(0, 2, 1)}[layout]
        want = np.copysign(np.floor(np.abs(v) + 0.5), v)
        assert np.array_equal(kernels.round_half_away(v), want)
        t = rng.integers(1, 50, (8, 8))
        assert np.array_equal(kernels.quantize_dequantize(v, t), _pykernels.quantize_dequantize(np.ascontiguousarray(v), t))
