import math

import numpy as np
import pytest

from rainfusion.grids import FormatError
from rainfusion.nn import (
    Adam,
    Conv3d,
    MaxPool3d,
    Parameter,
    ReLU,
    Upsample3d,
    gradient_check,
    load_arrays,
    logcosh_loss,
    lr_for_epoch,
    mse_loss,
    save_arrays,
)


def conv3d_oracle(x, w, b, temporal_pad="same"):
    """Direct summation over every tap: the naive reference convolution."""
    bdim, T, H, W, cin = x.shape
    kt, kh, kw, _, cout = w.shape
    pt = (kt - 1) // 2 if temporal_pad == "same" else 0
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    To = T if temporal_pad == "same" else T - kt + 1
    out = np.zeros((bdim, To, H, W, cout))
    for n in range(bdim):
        for t in range(To):
            for i in range(H):
                for j in range(W):
                    for co in range(cout):
                        acc = b[co]
                        for dt in range(kt):
                            for di in range(kh):
                                for dj in range(kw):
                                    tt, ii, jj = t + dt - pt, i + di - ph, j + dj - pw
                                    if 0 <= tt < T and 0 <= ii < H and 0 <= jj < W:
                                        for ci in range(cin):
                                            acc += x[n, tt, ii, jj, ci] * w[dt, di, dj, ci, co]
                        out[n, t, i, j, co] = acc
    return out


def projection_loss(layer, x, proj):
    """Scalar probe: sum(proj * layer(x)); grads via backward(proj)."""
    def loss_fn():
        return float(np.sum(proj * layer.forward(x.value)))
    return loss_fn


class TestConv3d:
    def test_identity_kernel(self):
        conv = Conv3d(1, 1, kernel=(1, 1, 1), dtype=np.float64)
        conv.weight.value[...] = 1.0
        conv.bias.value[...] = 0.0
        x = np.random.default_rng(0).normal(size=(2, 3, 4, 5, 1))
        np.testing.assert_allclose(conv.forward(x), x, atol=1e-12)

    def test_zero_weights_give_bias(self):
        conv = Conv3d(2, 3, kernel=(1, 3, 3), dtype=np.float64)
        conv.weight.value[...] = 0.0
        conv.bias.value[...] = np.array([1.0, -2.0, 0.5])
        out = conv.forward(np.random.default_rng(1).normal(size=(1, 2, 4, 4, 2)))
        np.testing.assert_allclose(out[..., 0], 1.0)
        np.testing.assert_allclose(out[..., 1], -2.0)
        np.testing.assert_allclose(out[..., 2], 0.5)

    @pytest.mark.parametrize(
        "shape,kernel,pad",
        [
            ((1, 2, 3, 3, 2), (1, 3, 3), "same"),
            ((2, 4, 5, 4, 3), (3, 3, 3), "same"),
            ((1, 6, 4, 4, 2), (6, 3, 3), "valid"),
            ((2, 3, 5, 5, 1), (1, 1, 1), "same"),
        ],
    )
    def test_matches_naive_oracle(self, shape, kernel, pad):
        rng = np.random.default_rng(42)
        conv = Conv3d(shape[-1], 2, kernel=kernel, temporal_pad=pad,
                      rng=rng, dtype=np.float64)
        x = rng.normal(size=shape)
        out = conv.forward(x)
        ref = conv3d_oracle(x, conv.weight.value, conv.bias.value, pad)
        np.testing.assert_allclose(out, ref, atol=1e-10)

    def test_backward_zero_grad(self):
        conv = Conv3d(2, 2, dtype=np.float64)
        x = np.random.default_rng(2).normal(size=(1, 2, 3, 3, 2))
        out = conv.forward(x)
        gx = conv.backward(np.zeros_like(out))
        assert not gx.any()
        assert not conv.weight.grad.any()
        assert not conv.bias.grad.any()

    def test_bias_grad_is_sum_over_positions(self):
        conv = Conv3d(1, 2, dtype=np.float64)
        x = np.random.default_rng(3).normal(size=(2, 2, 4, 4, 1))
        out = conv.forward(x)
        g = np.random.default_rng(4).normal(size=out.shape)
        conv.backward(g)
        np.testing.assert_allclose(conv.bias.grad, g.sum(axis=(0, 1, 2, 3)), atol=1e-12)

    @pytest.mark.parametrize("pad,kernel", [("same", (3, 3, 3)), ("valid", (4, 3, 3))])
    def test_gradients_match_finite_differences(self, pad, kernel):
        rng = np.random.default_rng(5)
        conv = Conv3d(2, 2, kernel=kernel, temporal_pad=pad, rng=rng, dtype=np.float64)
        xp = Parameter("x", rng.normal(size=(1, 4, 5, 5, 2)))
        proj = rng.normal(size=conv.forward(xp.value).shape)
        conv.weight.zero_grad(), conv.bias.zero_grad()
        xp.grad = conv.backward(proj)
        err = gradient_check(projection_loss(conv, xp, proj),
                             [conv.weight, conv.bias, xp],
                             [conv.weight.grad, conv.bias.grad, xp.grad],
                             n_samples=120, seed=0)
        assert err < 1e-7  # purely linear map

    def test_shape_validation(self):
        conv = Conv3d(2, 2)
        with pytest.raises(ValueError):
            conv.forward(np.zeros((1, 2, 3, 3, 5)))
        with pytest.raises(ValueError):
            conv.forward(np.zeros((2, 3, 3, 5)))
        with pytest.raises(ValueError):
            Conv3d(1, 1, kernel=(1, 2, 3))
        with pytest.raises(ValueError):
            Conv3d(1, 1, kernel=(2, 3, 3), temporal_pad="same")
        with pytest.raises(ValueError):
            Conv3d(1, 1, kernel=(2, 3, 3), temporal_pad="valid").forward(np.zeros((1, 1, 3, 3, 1)))


def untied_pool_input(rng, shape, window):
    """Random input whose pool windows have clear, unique maxima."""
    for _ in range(50):
        x = rng.normal(size=shape)
        pool = MaxPool3d(window)
        out = pool.forward(x)
        b, T, H, W, c = shape
        wt, wh, ww = window
        ok = True
        pad = ((0, 0), (0, -T % wt), (0, -H % wh), (0, -W % ww), (0, 0))
        xp = np.pad(x, pad, constant_values=-np.inf)
        ot, oh, ow = (s // w for s, w in zip(xp.shape[1:4], window))
        flat = (xp.reshape(b, ot, wt, oh, wh, ow, ww, c)
                  .transpose(0, 1, 3, 5, 7, 2, 4, 6)
                  .reshape(b, ot, oh, ow, c, -1))
        top2 = np.sort(flat, axis=-1)[..., -2:]
        gaps = top2[..., 1] - top2[..., 0]
        if np.min(gaps[np.isfinite(gaps)]) > 1e-3:
            return x
    raise AssertionError("could not draw a tie-free pooling input")


class TestMaxPool3d:
    def test_unit_window_is_identity(self):
        x = np.random.default_rng(6).normal(size=(2, 3, 4, 5, 2))
        pool = MaxPool3d((1, 1, 1))
        np.testing.assert_array_equal(pool.forward(x), x)

    def test_ceiling_semantics_on_time(self):
        x = np.zeros((1, 6, 4, 4, 1))
        assert MaxPool3d((2, 2, 2)).forward(x).shape == (1, 3, 2, 2, 1)
        x = np.zeros((1, 3, 4, 4, 1))
        assert MaxPool3d((2, 2, 2)).forward(x).shape == (1, 2, 2, 2, 1)

    def test_ragged_window_takes_real_max(self):
        x = np.full((1, 3, 1, 1, 1), -5.0)
        x[0, 2, 0, 0, 0] = -1.0  # alone in the shrunken last window
        out = MaxPool3d((2, 1, 1)).forward(x)
        np.testing.assert_allclose(out[0, :, 0, 0, 0], [-5.0, -1.0])

    def test_tie_routes_to_first_occurrence(self):
        x = np.zeros((1, 1, 2, 2, 1))
        pool = MaxPool3d((1, 2, 2))
        out = pool.forward(x)
        g = pool.backward(np.ones_like(out))
        assert g[0, 0, 0, 0, 0] == 1.0
        assert g.sum() == 1.0

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x = untied_pool_input(rng, (1, 5, 6, 6, 2), (2, 2, 2))
        pool = MaxPool3d((2, 2, 2))
        xp = Parameter("x", x)
        proj = rng.normal(size=pool.forward(x).shape)
        xp.grad = pool.backward(proj)
        err = gradient_check(projection_loss(pool, xp, proj), [xp], [xp.grad],
                             n_samples=150, seed=1)
        assert err < 1e-4


class TestUpsample3d:
    def test_unit_factors_identity(self):
        x = np.random.default_rng(8).normal(size=(1, 2, 3, 3, 2))
        np.testing.assert_array_equal(Upsample3d((1, 1, 1)).forward(x), x)

    def test_inverts_ceiling_pooled_dims(self):
        x = np.random.default_rng(9).normal(size=(1, 6, 5, 4, 1))
        pooled = MaxPool3d((2, 2, 2)).forward(x)
        up = Upsample3d((2, 2, 2)).forward(pooled, target_dims=(6, 5, 4))
        assert up.shape == x.shape

    def test_backward_counts_repetitions(self):
        x = np.ones((1, 3, 2, 2, 1))
        ups = Upsample3d((2, 2, 1))
        out = ups.forward(x, target_dims=(5, 4, 2))
        g = ups.backward(np.ones_like(out))
        # time groups: 2, 2, 1 repeats; rows: 2 each; cols: 1 each
        np.testing.assert_allclose(g[0, :, 0, 0, 0], [4.0, 4.0, 2.0])

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        ups = Upsample3d((2, 2, 2))
        xp = Parameter("x", rng.normal(size=(1, 3, 3, 4, 2)))
        out = ups.forward(xp.value, target_dims=(5, 6, 7))
        proj = rng.normal(size=out.shape)

        def loss_fn():
            return float(np.sum(proj * ups.forward(xp.value, target_dims=(5, 6, 7))))

        xp.grad = ups.backward(proj)
        assert gradient_check(loss_fn, [xp], [xp.grad], n_samples=100, seed=2) < 1e-7

    def test_target_validation(self):
        ups = Upsample3d((2, 2, 2))
        x = np.zeros((1, 3, 3, 3, 1))
        with pytest.raises(ValueError):
            ups.forward(x, target_dims=(2, 6, 6))  # smaller than input
        with pytest.raises(ValueError):
            ups.forward(x, target_dims=(7, 6, 6))  # beyond reach of x2
        with pytest.raises(ValueError):
            ups.forward(x, target_dims=(4, 6, 6))  # last cell unused


class TestReLU:
    def test_positive_identity_negative_zero(self):
        r = ReLU()
        x = np.array([[[[[1.5, -2.0, 0.0]]]]])
        np.testing.assert_array_equal(r.forward(x), [[[[[1.5, 0.0, 0.0]]]]])
        g = r.backward(np.ones_like(x))
        np.testing.assert_array_equal(g, [[[[[1.0, 0.0, 0.0]]]]])

    def test_finite_differences_away_from_kink(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(1, 2, 3, 3, 2))
        x[np.abs(x) < 0.05] = 0.1  # keep clear of the kink
        relu = ReLU()
        xp = Parameter("x", x)
        proj = rng.normal(size=x.shape)
        relu.forward(x)
        xp.grad = relu.backward(proj)
        err = gradient_check(projection_loss(relu, xp, proj), [xp], [xp.grad],
                             n_samples=80, seed=3)
        assert err < 1e-7


class TestLosses:
    def test_logcosh_zero_at_match(self):
        x = np.random.default_rng(12).normal(size=(2, 3))
        loss, grad = logcosh_loss(x, x)
        assert loss == 0.0
        assert not grad.any()

    def test_logcosh_small_error_mse_behavior(self):
        d = 1e-4
        loss, _ = logcosh_loss(np.full(5, d), np.zeros(5))
        assert abs(loss - d * d / 2) < 1e-12

    def test_logcosh_large_error_no_overflow(self):
        # frozen asymptote: ln cosh 50 = 49.30685281944005 (= 50 - ln 2)
        loss, grad = logcosh_loss(np.full(3, 50.0), np.zeros(3))
        assert loss == pytest.approx(50.0 - math.log(2.0), abs=1e-12)
        assert np.all(np.isfinite(grad))
        loss, _ = logcosh_loss(np.array([1000.0]), np.array([0.0]))
        assert loss == pytest.approx(1000.0 - math.log(2.0), abs=1e-9)

    def test_logcosh_taylor_bound(self):
        for d in (0.05, 0.2, 0.8, 1.0):
            loss, _ = logcosh_loss(np.array([d]), np.array([0.0]))
            assert abs(loss - d * d / 2) <= d ** 4 / 12 + 1e-15

    def test_mse_examples(self):
        assert mse_loss(np.array([2.0]), np.array([0.0]))[0] == 4.0
        x = np.random.default_rng(13).normal(size=(4,))
        assert mse_loss(x, x)[0] == 0.0

    @pytest.mark.parametrize("loss_fn,tol", [(logcosh_loss, 1e-6), (mse_loss, 1e-6)])
    def test_loss_gradients_match_finite_differences(self, loss_fn, tol):
        rng = np.random.default_rng(14)
        pred = Parameter("pred", rng.normal(size=(3, 4)))
        target = rng.normal(size=(3, 4))
        _, grad = loss_fn(pred.value, target)
        err = gradient_check(lambda: loss_fn(pred.value, target)[0],
                             [pred], [grad], n_samples=12, seed=4)
        assert err < tol

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            logcosh_loss(np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError):
            mse_loss(np.zeros(3), np.zeros((3, 1)))


class TestAdam:
    def _param(self, values):
        return Parameter("w", np.array(values, dtype=np.float64))

    def test_zero_gradient_is_noop_for_any_state(self):
        p = self._param([1.0, -2.0])
        opt = Adam([p], lr=0.1)
        p.grad[...] = [0.5, -0.5]
        opt.step()  # builds nonzero moments
        after_first = p.value.copy()
        p.grad[...] = 0.0
        opt.step()
        np.testing.assert_array_equal(p.value, after_first)

    def test_first_step_is_signed_lr(self):
        for g in ([3.0, -7.0, 1e-3], [100.0]):
            p = self._param(np.zeros(len(g)))
            opt = Adam([p], lr=1e-4)
            p.grad[...] = g
            opt.step()
            np.testing.assert_allclose(p.value, -1e-4 * np.sign(g), rtol=1e-3)

    def test_milestone_decay(self):
        assert lr_for_epoch(1e-4, 1) == pytest.approx(1e-4)
        assert lr_for_epoch(1e-4, 10) == pytest.approx(1e-5)
        assert lr_for_epoch(1e-4, 29) == pytest.approx(1e-5)
        assert lr_for_epoch(1e-4, 30) == pytest.approx(1e-6)
        assert lr_for_epoch(1e-4, 41) == pytest.approx(1e-7)
        assert lr_for_epoch(1e-4, 50, milestones=(), factor=0.1) == pytest.approx(1e-4)
        assert lr_for_epoch(1e-4, 50, factor=1.0) == pytest.approx(1e-4)

    def test_nonfinite_gradient_names_block(self):
        p = Parameter("enc1a.weight", np.zeros(3))
        opt = Adam([p])
        p.grad[...] = [0.0, np.nan, 1.0]
        with pytest.raises(ValueError, match="enc1a.weight"):
            opt.step()

    def test_converges_on_quadratic(self):
        p = self._param([5.0])
        opt = Adam([p], lr=0.05)
        for _ in range(2000):
            opt.zero_grad()
            p.grad[...] = 2 * p.value
            opt.step()
        assert abs(p.value[0]) < 1e-3


class TestCheckpointFormat:
    def test_round_trip_byte_exact(self, tmp_path):
        rng = np.random.default_rng(15)
        named = [
            ("enc1a.weight", rng.normal(size=(1, 3, 3, 2, 4)).astype(np.float32)),
            ("enc1a.bias", np.full(4, -999.0, dtype=np.float32)),
            ("head.weight", rng.normal(size=(6, 3, 3, 4, 2)).astype(np.float32)),
        ]
        p = tmp_path / "model.rfp"
        save_arrays(p, named)
        first = p.read_bytes()
        back = load_arrays(p)
        assert [n for n, _ in back] == [n for n, _ in named]
        for (_, a), (_, b) in zip(named, back):
            np.testing.assert_array_equal(a, b)
        save_arrays(p, back)
        assert p.read_bytes() == first

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.rfp"
        p.write_bytes(b"JUNK" + bytes(16))
        with pytest.raises(FormatError) as err:
            load_arrays(p)
        assert err.value.offset == 0

    def test_truncation(self, tmp_path):
        p = tmp_path / "x.rfp"
        save_arrays(p, [("w", np.ones((2, 2), dtype=np.float32))])
        blob = p.read_bytes()
        p.write_bytes(blob[:-5])
        with pytest.raises(FormatError, match="truncated"):
            load_arrays(p)

    def test_trailing_garbage(self, tmp_path):
        p = tmp_path / "x.rfp"
        save_arrays(p, [("w", np.ones(2, dtype=np.float32))])
        p.write_bytes(p.read_bytes() + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            load_arrays(p)
