import numpy as np
import pytest

from dualct.errors import ConfigError, FormatError, InputError
from dualct.regularizer import (ConvStack, FeatureField, feature_forward,
                                feature_jvp, feature_vjp, l21_norm,
                                lipschitz_estimate, load_weights,
                                make_random_weights, make_tv_weights,
                                make_zero_weights, save_weights,
                                smoothed_grad, smoothed_relu,
                                smoothed_relu_deriv, smoothed_value)


class TestSmoothedRelu:
    def test_regions(self):
        d = 0.1
        assert smoothed_relu(-0.5, d) == 0.0
        assert smoothed_relu(0.5, d) == 0.5
        # at t = 0 the quadratic piece gives delta/4
        assert smoothed_relu(0.0, d) == pytest.approx(d / 4.0)

    def test_c1_at_knots(self):
        d = 0.05
        for t in (-d, d):
            left = smoothed_relu(t - 1e-9, d)
            right = smoothed_relu(t + 1e-9, d)
            assert abs(left - right) < 1e-8
            dl = smoothed_relu_deriv(t - 1e-9, d)
            dr = smoothed_relu_deriv(t + 1e-9, d)
            assert abs(dl - dr) < 1e-7

    def test_derivative_matches_fd(self, rng):
        d = 0.07
        t = rng.uniform(-0.3, 0.3, size=200)
        h = 1e-7
        fd = (smoothed_relu(t + h, d) - smoothed_relu(t - h, d)) / (2 * h)
        np.testing.assert_allclose(smoothed_relu_deriv(t, d), fd, atol=1e-6)

    def test_bad_delta(self):
        with pytest.raises(ConfigError):
            smoothed_relu(0.0, 0.0)


class TestConvStackValidation:
    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            ConvStack((np.zeros((1, 1, 2, 3)),))

    def test_channel_mismatch_rejected(self):
        layers = (np.zeros((4, 1, 3, 3)), np.zeros((2, 3, 3, 3)))
        with pytest.raises(ConfigError):
            ConvStack(layers)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            ConvStack(())

    def test_nonfinite_rejected(self):
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 0, 0] = np.inf
        with pytest.raises(ConfigError):
            ConvStack((w,))

    def test_zero_stack_flag(self):
        assert make_zero_weights().is_zero()
        assert not make_tv_weights().is_zero()


class TestFeatureExtractor:
    def test_tv_weights_match_forward_differences(self, rng):
        y = rng.standard_normal((9, 7))
        field = feature_forward(y, make_tv_weights())
        dh = np.zeros_like(y)
        dh[:, :-1] = y[:, 1:] - y[:, :-1]
        dh[:, -1] = -y[:, -1]  # zero padding beyond the far edge
        dv = np.zeros_like(y)
        dv[:-1] = y[1:] - y[:-1]
        dv[-1] = -y[-1]
        expected = np.stack([dh.ravel(), dv.ravel()], axis=1)
        np.testing.assert_allclose(field.values, expected, atol=1e-14)

    def test_vjp_is_adjoint_of_jvp(self, rng):
        stack = make_random_weights(3, n_layers=2, n_channels=4)
        y = rng.standard_normal((10, 8))
        for _ in range(20):
            v = rng.standard_normal(y.shape)
            u = rng.standard_normal((y.size, stack.out_channels))
            jv = feature_jvp(y, stack, v)
            jtu = feature_vjp(y, stack, u)
            lhs = np.sum(jv * u)
            rhs = np.sum(v * jtu)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_jvp_matches_finite_differences(self, rng):
        stack = make_random_weights(5, n_layers=2, n_channels=3)
        y = rng.standard_normal((8, 8))
        v = rng.standard_normal((8, 8))
        h = 1e-6
        fplus = feature_forward(y + h * v, stack).values
        fminus = feature_forward(y - h * v, stack).values
        fd = (fplus - fminus) / (2 * h)
        np.testing.assert_allclose(feature_jvp(y, stack, v), fd, atol=1e-6)

    def test_cotangent_shape_checked(self, rng):
        stack = make_tv_weights()
        with pytest.raises(InputError):
            feature_vjp(rng.standard_normal((6, 6)), stack, np.zeros((36, 5)))

    def test_feature_field_shape_checked(self):
        with pytest.raises(InputError):
            FeatureField((4, 4), np.zeros((15, 2)))


class TestSmoothedRegularizer:
    def test_gap_bound(self, rng):
        stack = make_random_weights(7, n_layers=2, n_channels=5)
        for eps in (1.0, 0.1, 0.01):
            for _ in range(10):
                y = rng.standard_normal((9, 9)) * 2.0
                exact = l21_norm(feature_forward(y, stack))
                smooth = smoothed_value(y, stack, eps)
                m = y.size
                assert -1e-12 <= exact - smooth <= m * eps / 2 + 1e-12

    def test_gradient_matches_finite_differences(self, rng):
        stack = make_random_weights(11, n_layers=2, n_channels=4)
        eps = 0.05
        y = rng.standard_normal((7, 7))
        g = smoothed_grad(y, stack, eps)
        h = 1e-6
        for _ in range(25):
            v = rng.standard_normal(y.shape)
            v /= np.linalg.norm(v)
            fd = (smoothed_value(y + h * v, stack, eps)
                  - smoothed_value(y - h * v, stack, eps)) / (2 * h)
            assert abs(np.sum(g * v) - fd) < 1e-6

    def test_zero_weights_vanish(self, rng):
        stack = make_zero_weights()
        y = rng.standard_normal((6, 6))
        assert smoothed_value(y, stack, 0.1) == 0.0
        assert np.all(smoothed_grad(y, stack, 0.1) == 0.0)

    def test_bad_eps(self, rng):
        with pytest.raises(ConfigError):
            smoothed_value(np.zeros((4, 4)), make_tv_weights(), 0.0)


class TestLipschitzEstimate:
    def test_tv_spectral_bound(self):
        # forward differences: J^T J has spectral norm < 8 (approaches 8
        # from below as the grid grows), so the estimate is M^2/eps with
        # M^2 in (4, 8].
        eps = 0.1
        est = lipschitz_estimate(make_tv_weights(), eps, (32, 32))
        assert 4.0 / eps < est <= 8.0 / eps + 1e-9

    def test_scaling_with_eps(self):
        # single linear layer: no curvature term, so the estimate is
        # exactly proportional to 1/eps
        stack = make_tv_weights()
        e1 = lipschitz_estimate(stack, 0.1, (16, 16))
        e2 = lipschitz_estimate(stack, 0.05, (16, 16))
        assert e2 == pytest.approx(2.0 * e1, rel=1e-10)

    def test_gradient_actually_lipschitz(self, rng):
        # empirical check: |grad(y1) - grad(y2)| <= L |y1 - y2|
        stack = make_random_weights(2, n_layers=2, n_channels=4)
        eps = 0.1
        lip = lipschitz_estimate(stack, eps, (8, 8))
        for _ in range(20):
            y1 = rng.standard_normal((8, 8))
            y2 = y1 + 1e-3 * rng.standard_normal((8, 8))
            dg = np.linalg.norm(smoothed_grad(y1, stack, eps)
                                - smoothed_grad(y2, stack, eps))
            assert dg <= lip * np.linalg.norm(y1 - y2) * (1 + 1e-9)


class TestWeightIO:
    def test_roundtrip_exact(self, tmp_path):
        stack = make_random_weights(9, n_layers=3, n_channels=6)
        path = tmp_path / "w.bin"
        save_weights(stack, path)
        loaded = load_weights(path)
        assert loaded.n_layers == stack.n_layers
        assert loaded.activation_delta == stack.activation_delta
        for a, b in zip(loaded.layers, stack.layers):
            np.testing.assert_array_equal(a, b)

    def test_meta_sidecar_written(self, tmp_path):
        import json
        path = tmp_path / "w.bin"
        save_weights(make_tv_weights(), path)
        with open(str(path) + ".meta.json") as fh:
            meta = json.load(fh)
        assert meta["n_layers"] == 1
        assert meta["layer_shapes"] == [[2, 1, 3, 3]]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError) as exc:
            load_weights(path)
        assert exc.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "w.bin"
        save_weights(make_tv_weights(), path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(FormatError):
            load_weights(path)

    def test_random_weights_deterministic(self):
        a = make_random_weights(4)
        b = make_random_weights(4)
        for wa, wb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(wa, wb)
        c = make_random_weights(5)
        assert any(not np.array_equal(wa, wc)
                   for wa, wc in zip(a.layers, c.layers))
