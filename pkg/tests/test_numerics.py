import numpy as np
import pytest

from toolsense.numerics import (
    NumericsError,
    conv2d_backward,
    conv2d_forward,
    conv_output_extent,
    deconv2d_backward,
    deconv2d_forward,
    deconv_output_extent,
    fc_backward,
    fc_forward,
    finite_diff_grad,
    sgd_step,
    spawn_rng,
    symmetric_eig,
)
from toolsense.numerics.gradcheck import relative_error

from oracles import naive_conv2d, naive_deconv2d


class TestConvForward:
    def test_zero_input_any_kernel(self):
        x = np.zeros((1, 3, 3))
        w = np.array([[1.0, -2.0], [0.5, 3.0]]).reshape(1, 1, 2, 2)
        out = conv2d_forward(x, w, stride=(2, 2), padding=(1, 1))
        assert out.shape == (1, 2, 2)
        assert np.all(out == 0.0)

    def test_scalar_kernel_doubles(self):
        x = np.eye(4).reshape(1, 4, 4)
        w = np.array([[[[2.0]]]])
        out = conv2d_forward(x, w)
        np.testing.assert_array_equal(out, 2.0 * x)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_naive_loop_oracle(self, seed):
        rng = spawn_rng(seed, "conv-oracle")
        x = rng.normal(size=(3, 8, 8))
        w = rng.normal(size=(4, 3, 4, 4))
        got = conv2d_forward(x, w, stride=(2, 2), padding=(1, 1))
        want = naive_conv2d(x, w, stride=(2, 2), padding=(1, 1))
        assert np.abs(got - want).max() < 1e-12 * max(1.0, np.abs(want).max())

    def test_bias_and_activation(self):
        rng = spawn_rng(0, "conv-bias")
        x = rng.normal(size=(2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        got = conv2d_forward(x, w, bias=b, activation="relu")
        want = np.maximum(naive_conv2d(x, w, bias=b), 0.0)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_shape_mismatch_names_dims(self):
        x = np.zeros((3, 4, 4))
        w = np.zeros((2, 5, 2, 2))
        with pytest.raises(NumericsError, match="channels 3"):
            conv2d_forward(x, w)

    def test_output_extent_formula(self):
        assert conv_output_extent(128, 4, 2, 1) == 64
        assert conv_output_extent(3, 2, 2, 1) == 2
        with pytest.raises(NumericsError):
            conv_output_extent(1, 4, 2, 0)


class TestConvBackward:
    def test_zero_grad_out(self):
        rng = spawn_rng(1, "conv-zero")
        x = rng.normal(size=(2, 4, 4))
        w = rng.normal(size=(2, 2, 2, 2))
        gx, gw = conv2d_backward(x, w, np.zeros((2, 3, 3)))
        assert np.all(gx == 0.0) and np.all(gw == 0.0)

    def test_scalar_case_reduces_to_product(self):
        x = np.array([[[3.0]]])
        w = np.array([[[[2.0]]]])
        g = np.array([[[5.0]]])
        gx, gw = conv2d_backward(x, w, g)
        assert gx[0, 0, 0] == pytest.approx(2.0 * 5.0)
        assert gw[0, 0, 0, 0] == pytest.approx(3.0 * 5.0)

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("activation", ["identity", "tanh", "sigmoid"])
    def test_matches_finite_differences(self, seed, activation):
        rng = spawn_rng(seed, "conv-fd", activation)
        x = rng.normal(size=(2, 5, 6))
        w = rng.normal(size=(3, 2, 3, 3)) * 0.5
        b = rng.normal(size=3) * 0.1
        probe = rng.normal(size=(3, 3, 3))

        def loss_of_x(xv):
            return float(np.sum(conv2d_forward(xv, w, stride=(2, 2), padding=(1, 1),
                                               bias=b, activation=activation) * probe))

        def loss_of_w(wv):
            return float(np.sum(conv2d_forward(x, wv, stride=(2, 2), padding=(1, 1),
                                               bias=b, activation=activation) * probe))

        gx, gw, gb = conv2d_backward(x, w, probe, stride=(2, 2), padding=(1, 1),
                                     bias=b, activation=activation)
        assert relative_error(gx, finite_diff_grad(loss_of_x, x)) < 1e-6
        assert relative_error(gw, finite_diff_grad(loss_of_w, w)) < 1e-6

        def loss_of_b(bv):
            return float(np.sum(conv2d_forward(x, w, stride=(2, 2), padding=(1, 1),
                                               bias=bv, activation=activation) * probe))

        assert relative_error(gb, finite_diff_grad(loss_of_b, b)) < 1e-6


class TestDeconv:
    def test_single_pixel_spreads_kernel(self):
        x = np.array([[[3.0]]])
        w = np.array([[1.0, 2.0], [4.0, -1.0]]).reshape(1, 1, 2, 2)
        out = deconv2d_forward(x, w, stride=(2, 2))
        assert out.shape == (1, 2, 2)
        np.testing.assert_allclose(out[0], 3.0 * w[0, 0])

    def test_shape_is_inverse_of_conv(self):
        for extent in (3, 4, 6, 12, 48, 64):
            down = conv_output_extent(extent * 2, 4, 2, 1)
            assert down == extent
            assert deconv_output_extent(extent, 4, 2, 1) == extent * 2

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_naive_scatter(self, seed):
        rng = spawn_rng(seed, "deconv-oracle")
        x = rng.normal(size=(3, 4, 5))
        w = rng.normal(size=(3, 2, 4, 4))
        got = deconv2d_forward(x, w, stride=(2, 2), padding=(1, 1))
        want = naive_deconv2d(x, w, stride=(2, 2), padding=(1, 1))
        assert np.abs(got - want).max() < 1e-12 * max(1.0, np.abs(want).max())

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients_match_finite_differences(self, seed):
        rng = spawn_rng(seed, "deconv-fd")
        x = rng.normal(size=(2, 3, 3))
        w = rng.normal(size=(2, 3, 4, 4)) * 0.5
        b = rng.normal(size=3) * 0.1
        probe = rng.normal(size=(3, 6, 6))

        def loss_of_x(xv):
            return float(np.sum(deconv2d_forward(xv, w, stride=(2, 2), padding=(1, 1),
                                                 bias=b, activation="tanh") * probe))

        def loss_of_w(wv):
            return float(np.sum(deconv2d_forward(x, wv, stride=(2, 2), padding=(1, 1),
                                                 bias=b, activation="tanh") * probe))

        gx, gw, _ = deconv2d_backward(x, w, probe, stride=(2, 2), padding=(1, 1),
                                      bias=b, activation="tanh")
        assert relative_error(gx, finite_diff_grad(loss_of_x, x)) < 1e-6
        assert relative_error(gw, finite_diff_grad(loss_of_w, w)) < 1e-6


class TestFullyConnected:
    def test_identity_weights_pass_through(self):
        x = np.array([0.3, -0.7, 2.0])
        out = fc_forward(x, np.eye(3))
        np.testing.assert_array_equal(out, x)

    @pytest.mark.parametrize("seed", range(20))
    def test_gradients_match_finite_differences(self, seed):
        rng = spawn_rng(seed, "fc-fd")
        x = rng.normal(size=7)
        w = rng.normal(size=(4, 7)) * 0.5
        b = rng.normal(size=4) * 0.1
        probe = rng.normal(size=4)

        def loss_of_x(xv):
            return float(np.sum(fc_forward(xv, w, bias=b, activation="sigmoid") * probe))

        def loss_of_w(wv):
            return float(np.sum(fc_forward(x, wv, bias=b, activation="sigmoid") * probe))

        gx, gw, gb = fc_backward(x, w, probe, bias=b, activation="sigmoid")
        assert relative_error(gx, finite_diff_grad(loss_of_x, x)) < 1e-6
        assert relative_error(gw, finite_diff_grad(loss_of_w, w)) < 1e-6

    def test_batched_matches_loop(self):
        rng = spawn_rng(3, "fc-batch")
        xs = rng.normal(size=(5, 6))
        w = rng.normal(size=(2, 6))
        batched = fc_forward(xs, w, activation="tanh")
        stacked = np.stack([fc_forward(x, w, activation="tanh") for x in xs])
        np.testing.assert_allclose(batched, stacked, atol=1e-15)


class TestSgdStep:
    def test_zero_grads_leave_params(self):
        p = np.array([1.0, -2.0])
        np.testing.assert_array_equal(sgd_step(p, np.zeros(2), 0.1), p)

    def test_reference_learning_rate(self):
        out = sgd_step(np.array([1.0]), np.array([2.0]), 1e-4)
        assert out[0] == pytest.approx(0.9998)

    def test_elementwise_and_pure(self):
        rng = spawn_rng(4, "sgd")
        p = rng.normal(size=(3, 2))
        g = rng.normal(size=(3, 2))
        p_before = p.copy()
        out = sgd_step(p, g, 0.05)
        np.testing.assert_allclose(out, p_before - 0.05 * g)
        np.testing.assert_array_equal(p, p_before)
        assert out is not p

    def test_shape_mismatch(self):
        with pytest.raises(NumericsError):
            sgd_step(np.zeros(2), np.zeros(3), 0.1)


class TestFiniteDiff:
    def test_sum_of_squares(self):
        g = finite_diff_grad(lambda x: float(np.sum(x * x)), np.array([3.0]))
        assert abs(g[0] - 6.0) < 1e-8

    def test_constant_function(self):
        g = finite_diff_grad(lambda x: 1.5, np.array([0.2, -0.4, 1.0]))
        np.testing.assert_array_equal(g, np.zeros(3))

    def test_tanh_toy_net_matches_analytic(self):
        rng = spawn_rng(5, "fd-toy")
        w = rng.normal(size=4)
        x = rng.normal(size=4)

        def f(wv):
            return float(np.tanh(wv @ x))

        analytic = (1.0 - np.tanh(w @ x) ** 2) * x
        assert relative_error(analytic, finite_diff_grad(f, w)) < 1e-7

    def test_nonfinite_evaluation_raises(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            with pytest.raises(NumericsError):
                finite_diff_grad(lambda x: float(np.log(x[0])), np.array([0.0]))


class TestSymmetricEig:
    def test_identity(self):
        vals, vecs = symmetric_eig(np.eye(4))
        np.testing.assert_allclose(vals, np.ones(4))
        np.testing.assert_allclose(vecs @ vecs.T, np.eye(4), atol=1e-10)

    def test_diagonal(self):
        vals, vecs = symmetric_eig(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(vals, [3.0, 1.0])
        np.testing.assert_allclose(np.abs(vecs), np.eye(2), atol=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_reconstruction_and_trace(self, seed):
        rng = spawn_rng(seed, "eig")
        a = rng.normal(size=(10, 10))
        m = 0.5 * (a + a.T)
        vals, vecs = symmetric_eig(m)
        recon = vecs @ np.diag(vals) @ vecs.T
        assert np.abs(recon - m).max() < 1e-8
        assert abs(vals.sum() - np.trace(m)) < 1e-8
        assert np.abs(vecs.T @ vecs - np.eye(10)).max() < 1e-8
        assert np.all(np.diff(vals) <= 1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_agrees_with_lapack(self, seed):
        rng = spawn_rng(seed, "eig-lapack")
        a = rng.normal(size=(8, 8))
        m = a @ a.T
        vals, _ = symmetric_eig(m)
        want = np.sort(np.linalg.eigvalsh(m))[::-1]
        np.testing.assert_allclose(vals, want, atol=1e-8, rtol=1e-8)

    def test_rejects_asymmetric(self):
        with pytest.raises(NumericsError):
            symmetric_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_eigenpair_identity(self):
        rng = spawn_rng(7, "eig-pairs")
        a = rng.normal(size=(6, 6))
        m = 0.5 * (a + a.T)
        vals, vecs = symmetric_eig(m)
        for i in range(6):
            np.testing.assert_allclose(m @ vecs[:, i], vals[i] * vecs[:, i], atol=1e-8)
