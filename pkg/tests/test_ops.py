import numpy as np
import numpy.testing as npt
import pytest

from mgrdenoise.engine import ops
from mgrdenoise.engine.rng import make_rng
from mgrdenoise.gradcheck import fd_gradient, relative_error

from oracles import direct_conv2d, direct_maxpool2


class TestConv2d:
    def test_all_ones_window_counts(self):
        # 3x3 ones kernel over a 3x3 ones image, pad 1: center sees 9, corners 4
        x = np.ones((1, 1, 3, 3), np.float32)
        w = np.ones((1, 1, 3, 3), np.float32)
        y = ops.conv2d(x, w, np.zeros(1, np.float32))
        assert y[0, 0, 1, 1] == 9.0
        assert y[0, 0, 0, 0] == 4.0

    def test_identity_kernel(self):
        x = make_rng(0).random((2, 3, 5, 5), dtype=np.float32)
        w = np.zeros((3, 3, 1, 1), np.float32)
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        npt.assert_array_equal(ops.conv2d(x, w, np.zeros(3, np.float32)), x)

    def test_matches_direct_loop_oracle(self):
        rng = make_rng(42)
        x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
        w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        got = ops.conv2d(x, w, b)
        want = direct_conv2d(x, w, b)
        npt.assert_allclose(got, want, atol=1e-6)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_strided_matches_oracle(self, stride, padding):
        rng = make_rng(stride * 10 + padding)
        x = rng.standard_normal((2, 2, 7, 6)).astype(np.float64)
        w = rng.standard_normal((3, 2, 3, 3))
        got = ops.conv2d(x, w, None, stride=stride, padding=padding)
        want = direct_conv2d(x, w, None, stride=stride, padding=padding)
        assert got.shape == want.shape
        npt.assert_allclose(got, want, atol=1e-10)

    def test_output_shape_formula(self):
        x = np.zeros((1, 1, 8, 8), np.float32)
        w = np.zeros((4, 1, 3, 3), np.float32)
        y = ops.conv2d(x, w, None, stride=2, padding=1)
        assert y.shape == (1, 4, 4, 4)

    def test_channel_mismatch_raises(self):
        x = np.zeros((1, 2, 4, 4), np.float32)
        w = np.zeros((1, 3, 3, 3), np.float32)
        with pytest.raises(ValueError, match="channels"):
            ops.conv2d(x, w, None)

    def test_backward_zero_grad(self):
        rng = make_rng(1)
        x = rng.standard_normal((1, 2, 4, 4))
        w = rng.standard_normal((2, 2, 3, 3))
        gx, gw, gb = ops.conv2d_backward(np.zeros((1, 2, 4, 4)), x, w)
        assert not gx.any() and not gw.any() and not gb.any()

    def test_backward_identity_kernel(self):
        rng = make_rng(2)
        x = rng.standard_normal((1, 1, 4, 4))
        w = np.ones((1, 1, 1, 1))
        g = rng.standard_normal((1, 1, 4, 4))
        gx, _, _ = ops.conv2d_backward(g, x, w)
        npt.assert_array_equal(gx, g)

    def test_backward_matches_finite_differences(self):
        # 64-bit central differences, eps 1e-5, relative error < 1e-5
        rng = make_rng(3)
        x = rng.standard_normal((1, 1, 4, 4))
        w = rng.standard_normal((2, 1, 3, 3))
        b = rng.standard_normal(2)
        probe = rng.standard_normal((1, 2, 4, 4))

        def loss():
            return float((ops.conv2d(x, w, b) * probe).sum())

        gx, gw, gb = ops.conv2d_backward(probe, x, w)
        assert relative_error(gx, fd_gradient(loss, x, 1e-5)) < 1e-5
        assert relative_error(gw, fd_gradient(loss, w, 1e-5)) < 1e-5
        assert relative_error(gb, fd_gradient(loss, b, 1e-5)) < 1e-5

    def test_backward_shape_mismatch_raises(self):
        x = np.zeros((1, 1, 4, 4))
        w = np.zeros((1, 1, 3, 3))
        with pytest.raises(ValueError, match="grad_out"):
            ops.conv2d_backward(np.zeros((1, 1, 5, 5)), x, w)

    def test_mass_conservation_ones_kernel(self):
        # sum(conv(x, ones)) == sum(x * window overlap counts)
        rng = make_rng(4)
        x = rng.random((1, 1, 6, 6))
        w = np.ones((1, 1, 3, 3))
        y = ops.conv2d(x, w, None)
        overlaps = ops.conv2d(np.ones_like(x), w, None)
        npt.assert_allclose(y.sum(), (x * overlaps).sum(), rtol=1e-12)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert ops.sigmoid(np.zeros(1))[0] == 0.5

    def test_sigmoid_saturation_is_finite(self):
        y = ops.sigmoid(np.array([-1e4, 1e4], np.float32))
        npt.assert_allclose(y, [0.0, 1.0])

    def test_relu_and_pow(self):
        assert ops.relu(np.array([-0.5]))[0] == 0.0
        # 0.5**0.8 frozen from an independent exp/log evaluation
        want = float(np.exp(0.8 * np.log(0.5)))
        got = ops.pow_alpha(ops.relu(np.array([0.5])), 0.8)[0]
        npt.assert_allclose(got, want, rtol=1e-12)
        npt.assert_allclose(got, 0.5743, atol=5e-5)

    def test_pow_negative_raises(self):
        with pytest.raises(ValueError, match="non-negative"):
            ops.pow_alpha(np.array([-0.1]), 0.8)

    def test_pow_gradient_zero_at_zero(self):
        g = ops.pow_alpha_backward(np.ones(2), np.array([0.0, 1.0]), 0.8)
        assert g[0] == 0.0
        npt.assert_allclose(g[1], 0.8)

    def test_mul_backward_matches_finite_differences(self):
        rng = make_rng(5)
        a = rng.standard_normal((2, 1, 3, 3))
        b = rng.standard_normal((2, 1, 3, 3))
        probe = rng.standard_normal((2, 1, 3, 3))
        ga, gb = ops.mul_backward(probe, a, b)
        fd_a = fd_gradient(lambda: float((ops.mul(a, b) * probe).sum()), a, 1e-6)
        assert relative_error(ga, fd_a) < 1e-5
        fd_b = fd_gradient(lambda: float((ops.mul(a, b) * probe).sum()), b, 1e-6)
        assert relative_error(gb, fd_b) < 1e-5

    def test_binary_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            ops.add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))

    def test_leaky_relu_values(self):
        x = np.array([-2.0, 0.0, 3.0], np.float32)
        npt.assert_allclose(ops.leaky_relu(x, 0.1), [-0.2, 0.0, 3.0], rtol=1e-6)

    def test_dtype_preserved(self):
        for dt in (np.float32, np.float64):
            x = np.ones((1, 1, 2, 2), dt)
            assert ops.sigmoid(x).dtype == dt
            assert ops.leaky_relu(x).dtype == dt
            assert ops.pow_alpha(x, 0.8).dtype == dt


class TestMaxpool:
    def test_single_window(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32)[None, None]
        y, idx = ops.maxpool2(x)
        assert y[0, 0, 0, 0] == 4.0
        g = ops.maxpool2_backward(np.ones_like(y), idx, 2, 2)
        npt.assert_array_equal(g[0, 0], [[0, 0], [0, 1]])

    def test_tie_routes_to_first_index(self):
        x = np.full((1, 1, 4, 4), 7.0, np.float32)
        y, idx = ops.maxpool2(x)
        assert (y == 7.0).all()
        assert (idx == 0).all()
        g = ops.maxpool2_backward(np.ones_like(y), idx, 4, 4)
        npt.assert_array_equal(g[0, 0, ::2, ::2], np.ones((2, 2)))
        assert g.sum() == 4.0

    def test_matches_brute_force(self):
        x = make_rng(6).standard_normal((1, 1, 6, 6)).astype(np.float32)
        y, _ = ops.maxpool2(x)
        npt.assert_array_equal(y, direct_maxpool2(x))

    def test_odd_dims_raise(self):
        with pytest.raises(ValueError, match="even"):
            ops.maxpool2(np.zeros((1, 1, 5, 4), np.float32))


class TestUpsample:
    def test_replicates(self):
        x = np.array([[3.0]], np.float32)[None, None]
        npt.assert_array_equal(ops.upsample_nearest2(x)[0, 0], np.full((2, 2), 3.0))

    def test_backward_sums_children(self):
        g = np.ones((1, 1, 2, 2), np.float32)
        assert ops.upsample_nearest2_backward(g)[0, 0, 0, 0] == 4.0

    def test_shape_roundtrip(self):
        x = np.zeros((2, 3, 4, 5), np.float32)
        assert ops.upsample_nearest2(x).shape == (2, 3, 8, 10)


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = make_rng(7).random((1, 1, 4, 4), dtype=np.float32)
        y, mask = ops.dropout(x, 0.0, make_rng(8), training=True)
        npt.assert_array_equal(y, x)
        assert mask is None

    def test_eval_mode_is_identity(self):
        x = make_rng(9).random((1, 1, 4, 4), dtype=np.float32)
        y, mask = ops.dropout(x, 0.9, make_rng(10), training=False)
        npt.assert_array_equal(y, x)
        assert mask is None

    def test_keep_fraction_and_expectation(self):
        x = np.ones((1, 1, 1000, 1000), np.float32)
        y, mask = ops.dropout(x, 0.7, make_rng(11), training=True)
        keep = (y != 0).mean()
        assert abs(keep - 0.3) < 0.005
        # inverted scaling preserves the mean within ~3 sigma of sampling error
        sigma = np.sqrt(0.7 / (0.3 * x.size))
        assert abs(y.mean() - 1.0) < 3 * sigma

    def test_backward_applies_same_mask(self):
        x = make_rng(12).random((1, 1, 8, 8), dtype=np.float32)
        y, mask = ops.dropout(x, 0.5, make_rng(13), training=True)
        g = np.ones_like(x)
        npt.assert_array_equal(ops.dropout_backward(g, mask), mask)

    def test_rate_one_raises(self):
        with pytest.raises(ValueError, match="rate"):
            ops.dropout(np.zeros((1, 1, 2, 2)), 1.0, make_rng(0))


class TestGaussian:
    def test_moments(self):
        z = ops.gaussian(make_rng(14), (1000, 1000))
        assert abs(float(z.mean())) < 0.01
        assert abs(float(z.std()) - 1.0) < 0.01

    def test_same_seed_same_stream(self):
        a = ops.gaussian(make_rng(15), (4, 4))
        b = ops.gaussian(make_rng(15), (4, 4))
        npt.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        a = ops.gaussian(make_rng(16), (4, 4))
        b = ops.gaussian(make_rng(17), (4, 4))
        assert (a != b).any()


class TestAssertFinite:
    def test_passes_on_finite(self):
        ops.assert_finite(np.ones(3), "x")

    def test_raises_on_nan_and_inf(self):
        with pytest.raises(ops.NonFiniteError):
            ops.assert_finite(np.array([1.0, np.nan]), "x")
        with pytest.raises(ops.NonFiniteError):
            ops.assert_finite(np.array([np.inf]), "x")
