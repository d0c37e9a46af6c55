import numpy as np
import pytest

from robusthide import gradcheck
from robusthide import networks as N
from robusthide import tensor as T
from robusthide.optim import Adam, AdamState, adam_step
from robusthide.tensor import NonFiniteError, ShapeError, Tensor

TOY = N.Descriptor(image_size=16, message_length=8, enc_channels=4, enc_blocks=2,
                   dec_channels=4, dec_blocks=2, dec_downsample=1, msg_grid=4, msg_channels=2, pool_grid=2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestDescriptor:
    def test_default_configuration_shapes(self, rng):
        d = N.Descriptor()
        p = N.init_params(d, 0)
        cover = Tensor(rng.uniform(0, 1, (1, 3, 128, 128)).astype(np.float32))
        msg = rng.integers(0, 2, (1, 30))
        enc = N.encode(p, d, cover, msg)
        assert enc.shape == cover.shape
        assert N.decode(p, d, enc).shape == (1, 30)

    @pytest.mark.parametrize("kw", [dict(message_length=0), dict(enc_blocks=0), dict(dec_downsample=6),
                                    dict(image_size=30, msg_grid=8), dict(image_size=20, pool_grid=3)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            N.Descriptor(**kw)


class TestInit:
    def test_same_seed_identical(self):
        a, b = N.init_params(TOY, 3), N.init_params(TOY, 3)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_different_seed_differs(self):
        a, b = N.init_params(TOY, 3), N.init_params(TOY, 4)
        assert any(not np.array_equal(a[k].data, b[k].data) for k in a if not k.endswith(".b"))

    def test_fan_in_scale(self):
        d = N.Descriptor(image_size=16, message_length=8, enc_channels=64, enc_blocks=2)
        w = N.init_params(d, 0)["enc.conv1.w"].data
        assert w.size >= 10_000
        fan_in = 64 * 3 * 3
        assert abs(w.std() / np.sqrt(2 / fan_in) - 1) < 0.2

    def test_check_params_catches_mismatch(self):
        p = N.init_params(TOY, 0)
        p["dec.head.b"] = Tensor(np.zeros(3, dtype=np.float32))
        with pytest.raises(ShapeError):
            N.check_params(p, TOY)

    def test_check_params_catches_nan(self):
        p = N.init_params(TOY, 0)
        p["dec.head.b"].data[0] = np.nan
        with pytest.raises(ValueError):
            N.check_params(p, TOY)


class TestEncodeDecode:
    def test_untrained_output_in_range(self, rng):
        p = N.init_params(TOY, 1)
        cover = Tensor(rng.uniform(0, 1, (4, 3, 16, 16)).astype(np.float32))
        cover.data[0] = 0
        cover.data[1] = 1
        enc = N.encode(p, TOY, cover, rng.integers(0, 2, (4, 8))).data
        assert enc.min() >= 0 and enc.max() <= 1

    def test_untrained_close_to_cover(self, rng):
        p = N.init_params(TOY, 1)
        cover = Tensor(rng.uniform(0.2, 0.8, (2, 3, 16, 16)).astype(np.float32))
        enc = N.encode(p, TOY, cover, rng.integers(0, 2, (2, 8))).data
        assert np.mean(np.abs(enc - cover.data)) * 255 < 10

    def test_message_length_mismatch(self, rng):
        p = N.init_params(TOY, 1)
        with pytest.raises(ShapeError):
            N.encode(p, TOY, Tensor(np.zeros((2, 3, 16, 16))), rng.integers(0, 2, (2, 7)))

    def test_decode_shape_error(self):
        p = N.init_params(TOY, 1)
        with pytest.raises(ShapeError):
            N.decode(p, TOY, Tensor(np.zeros((1, 1, 16, 16))))

    def test_decode_deterministic(self, rng):
        p = N.init_params(TOY, 1)
        img = Tensor(rng.uniform(0, 1, (3, 3, 16, 16)).astype(np.float32))
        assert np.array_equal(N.decode(p, TOY, img).data, N.decode(p, TOY, img).data)

    def test_random_decoder_is_a_coin_flip(self, rng):
        p = N.init_params(TOY, 2)
        imgs = Tensor(rng.uniform(0, 1, (125, 3, 16, 16)).astype(np.float32))
        bits = N.decode_bits(N.decode(p, TOY, imgs).data)
        msgs = rng.integers(0, 2, bits.shape)
        assert bits.size == 1000
        assert abs(np.mean(bits != msgs) - 0.5) < 0.05

    def test_tie_decodes_as_zero(self):
        assert N.decode_bits(np.array([[0.0, 1e-9, -1e-9]])).tolist() == [[0, 1, 0]]

    def test_encoder_gradient_finite_difference(self, rng):
        d = TOY
        p64 = {k: v.data.astype(np.float64) for k, v in N.init_params(d, 5, dtype=np.float64).items()}
        cover = rng.uniform(0.1, 0.9, (1, 3, 16, 16))
        msg = rng.integers(0, 2, (1, 8))
        names = ["enc.conv0.w", "enc.out.w", "enc.msg.w"]

        def fn(*ws):
            params = {k: Tensor(v) for k, v in p64.items()}
            params.update(zip(names, ws))
            return T.mse_loss(N.encode(params, d, Tensor(cover), msg), Tensor(cover))

        assert gradcheck.check(fn, [p64[n] for n in names]) < 1e-4


class TestDifferentiability:
    def test_every_parameter_receives_gradient(self, rng):
        p = N.init_params(TOY, 7)
        cover = Tensor(rng.uniform(0, 1, (4, 3, 16, 16)).astype(np.float32))
        msg = rng.integers(0, 2, (4, 8))
        enc = N.encode(p, TOY, cover, msg)
        loss = T.mse_loss(enc, cover) + T.bce_with_logits(N.decode(p, TOY, enc), msg)
        loss.backward()
        for name, t in p.items():
            assert t.grad is not None and np.any(t.grad != 0), name

    def test_overfit_identity(self, rng):
        d = N.Descriptor(image_size=16, message_length=8, enc_channels=8, enc_blocks=1, dec_channels=8,
                         dec_blocks=2, dec_downsample=1, msg_grid=4, msg_channels=2, pool_grid=2)
        p = N.init_params(d, 0)
        cover = Tensor(rng.uniform(0, 1, (16, 3, 16, 16)).astype(np.float32))
        msg = rng.integers(0, 2, (16, 8))
        opt = Adam(p, lr=3e-3)
        for _ in range(300):
            enc = N.encode(p, d, cover, msg)
            logits = N.decode(p, d, enc)
            loss = T.scale(T.mse_loss(enc, cover), 0.7) + T.bce_with_logits(logits, msg)
            opt.zero_grad()
            loss.backward()
            opt.step()
        final = N.decode(p, d, N.encode(p, d, cover, msg)).data
        assert np.array_equal(N.decode_bits(final), msg)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
        adam_step(p, {"w": np.array([0.5, -3.0])}, AdamState(), lr=0.1)
        np.testing.assert_allclose(p["w"].data, [0.9, -1.9], atol=1e-6)

    def test_minimizes_quadratic(self):
        p = {"w": Tensor(np.array([5.0, -3.0]), requires_grad=True)}
        opt = Adam(p, lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            T.mean(T.mul(p["w"], p["w"])).backward()
            opt.step()
        assert np.max(np.abs(p["w"].data)) < 1e-2

    def test_non_finite_gradient_names_parameter(self):
        p = {"a": Tensor(np.ones(2), requires_grad=True), "b": Tensor(np.ones(2), requires_grad=True)}
        before = p["a"].data.copy()
        with pytest.raises(NonFiniteError, match="'b'"):
            adam_step(p, {"a": np.ones(2), "b": np.array([np.inf, 0])}, AdamState())
        assert np.array_equal(p["a"].data, before)

    def test_preserves_dtype(self):
        p = {"w": Tensor(np.ones(3, dtype=np.float32), requires_grad=True)}
        adam_step(p, {"w": np.ones(3, dtype=np.float32)}, AdamState())
        assert p["w"].dtype == np.float32
