import numpy as np
import pytest

from models.configs import Activation, FTAConfig, ValueHeadKind
from tensor_nn import ops
from tensor_nn.fta import active_bin, fta, fta_backward
from tensor_nn.layers import FTA, Conv2D, ConvTranspose2D, Linear, ReLU
from tensor_nn.network import build_decoder, build_input_trunk, build_trunk, build_value_head
from tensor_nn.optim import Adam, adam_step
from utils.errors import ArchitectureMismatchError, NumericalError, UsageError

from conftest import finite_difference_at, sample_indices


def _check_layer(layer, x, rng, points=100):
    """Compare backward() against central differences for the input and every parameter"""
    out = layer.forward(x)
    upstream = rng.standard_normal(out.shape)
    layer.zero_grad()
    dx = layer.backward(upstream)

    def loss():
        return float(np.sum(layer.forward(x) * upstream))

    idx = sample_indices(x, points, rng)
    numeric = finite_difference_at(loss, x, idx)
    np.testing.assert_allclose(dx.reshape(-1)[idx], numeric, rtol=1e-4, atol=1e-7)
    for key, param in layer.params.items():
        idx = sample_indices(param, points, rng)
        numeric = finite_difference_at(loss, param, idx)
        np.testing.assert_allclose(layer.grads[key].reshape(-1)[idx], numeric, rtol=1e-4, atol=1e-7)


class TestGradients:
    def test_conv2d(self, rng):
        layer = Conv2D('conv', 3, 4, kernel=4, stride=2, pad=2, rng=rng, dtype=np.float64)
        _check_layer(layer, rng.standard_normal((2, 7, 7, 3)), rng)

    def test_conv2d_stride_one(self, rng):
        layer = Conv2D('conv', 2, 3, kernel=4, stride=1, pad=1, rng=rng, dtype=np.float64)
        _check_layer(layer, rng.standard_normal((2, 6, 6, 2)), rng)

    def test_conv_transpose2d(self, rng):
        layer = ConvTranspose2D('deconv', 4, 3, kernel=4, stride=2, pad=2, rng=rng, dtype=np.float64)
        _check_layer(layer, rng.standard_normal((2, 4, 4, 4)), rng)

    def test_linear(self, rng):
        layer = Linear('fc', 10, 6, rng, dtype=np.float64)
        _check_layer(layer, rng.standard_normal((5, 10)), rng)

    def test_relu_away_from_kink(self, rng):
        x = rng.standard_normal((4, 30))
        x[np.abs(x) < 1e-3] = 0.5
        _check_layer(ReLU(), x, rng)

    def test_fta_away_from_kinks(self, rng):
        cfg = FTAConfig(k=20, eta=0.2)
        bins = rng.integers(-13, 13, size=(4, 8))
        offsets = rng.uniform(0.01, 0.19, size=(4, 8))
        z = bins * cfg.eta + offsets
        _check_layer(FTA(cfg), z, rng)

    def test_trunk_end_to_end(self, rng):
        trunk = build_trunk(Activation.RELU32, FTAConfig(), rng, dtype=np.float64)
        x = rng.uniform(-1, 1, size=(2, 15, 15, 3))
        out = trunk.forward(x)
        upstream = rng.standard_normal(out.shape)
        trunk.zero_grad()
        trunk.backward(upstream)
        weight = trunk.parameters()['conv1.W']
        idx = sample_indices(weight, 20, rng)
        numeric = finite_difference_at(lambda: float(np.sum(trunk.forward(x) * upstream)), weight, idx)
        np.testing.assert_allclose(trunk.gradients()['conv1.W'].reshape(-1)[idx], numeric, rtol=1e-4, atol=1e-7)


class TestFTA:
    def test_worked_example(self):
        h = fta(np.array([0.1]), FTAConfig(k=20, eta=0.2))
        expected = np.zeros(20)
        expected[9] = 0.9  # h_10
        expected[10] = 1.0  # h_11
        np.testing.assert_array_equal(h, expected)

    def test_invariants_on_random_scalars(self):
        z = np.random.default_rng(7).uniform(-3, 3, size=(100000, 1))
        h = fta(z, FTAConfig(k=20, eta=0.2))
        assert h.shape == (100000, 20)
        assert np.all((h >= 0) & (h <= 1))
        assert np.all(np.sum(h == 1.0, axis=1) == 1)
        assert np.all(np.count_nonzero(h, axis=1) <= 2)

    def test_clipping(self):
        cfg = FTAConfig(k=20, eta=0.2)
        np.testing.assert_array_equal(fta(np.array([5.0]), cfg), fta(np.array([2.0]), cfg))
        np.testing.assert_array_equal(fta(np.array([-5.0]), cfg), fta(np.array([-2.0]), cfg))
        assert fta(np.array([5.0]), cfg)[-1] == 1.0
        assert fta(np.array([-5.0]), cfg)[0] == 1.0

    def test_edge_belongs_to_higher_bin(self):
        cfg = FTAConfig(k=20, eta=0.2)
        assert active_bin(np.array(0.0), cfg) == 11

    def test_gradient_zero_outside_clip_range(self):
        cfg = FTAConfig(k=4, eta=0.5)
        z = np.array([[3.0, -3.0]])
        grad = fta_backward(np.ones((1, 8)), z, cfg)
        np.testing.assert_array_equal(grad, np.zeros((1, 2)))

    def test_output_width(self):
        cfg = FTAConfig(k=20, eta=0.2)
        assert fta(np.zeros((3, 32)), cfg).shape == (3, 640)


class TestOps:
    def test_im2col_col2im_adjoint(self, rng):
        x = rng.standard_normal((2, 6, 6, 3))
        cols = ops.im2col(x, 4, 2, 2)
        y = rng.standard_normal(cols.shape)
        lhs = np.sum(cols * y)
        rhs = np.sum(x * ops.col2im(y, x.shape, 4, 2, 2))
        assert lhs == pytest.approx(rhs)

    def test_conv_shape_errors(self, rng):
        with pytest.raises(UsageError):
            ops.conv2d_forward(rng.standard_normal((1, 5, 5, 2)), np.zeros((3, 3, 3, 4)), np.zeros(4), 1, 0)
        with pytest.raises(UsageError):
            ops.conv2d_forward(rng.standard_normal((5, 5, 3)), np.zeros((3, 3, 3, 4)), np.zeros(4), 1, 0)

    def test_non_finite_detected(self):
        with pytest.raises(NumericalError):
            ops.check_finite(np.array([1.0, np.nan]), 'test')

    def test_xavier_bounds(self, rng):
        w = ops.xavier_uniform((64, 32), rng)
        limit = np.sqrt(6.0 / 96)
        assert w.dtype == np.float32
        assert np.all(np.abs(w) <= limit)

    def test_random_shift_keeps_shape(self, rng):
        obs = rng.uniform(-1, 1, size=(15, 15, 3)).astype(np.float32)
        shifted = ops.random_shift(obs, pad=4, prob=1.0, rng=rng)
        assert shifted.shape == obs.shape
        assert ops.random_shift(obs, pad=4, prob=0.0, rng=rng) is obs


class TestAdam:
    def test_first_step_moves_by_lr(self):
        param = np.array([1.0])
        adam_step(param, np.array([0.5]), np.zeros(1), np.zeros(1), t=1, lr=0.01)
        assert param[0] == pytest.approx(0.99, abs=1e-6)

    def test_minimises_quadratic(self):
        params = {'w': np.array([3.0, -2.0])}
        opt = Adam(lr=0.1)
        for _ in range(500):
            opt.step(params, {'w': 2 * params['w']})
        assert np.all(np.abs(params['w']) < 0.05)
        assert opt.t == 500

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            adam_step(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), 1, 0.1)


class TestNetworks:
    def test_trunk_widths(self, rng):
        obs = np.zeros((2, 15, 15, 3), dtype=np.float32)
        assert build_trunk(Activation.RELU32, FTAConfig(), rng)(obs).shape == (2, 32)
        assert build_trunk(Activation.RELU640, FTAConfig(), rng)(obs).shape == (2, 640)
        assert build_trunk(Activation.FTA, FTAConfig(k=20), rng)(obs).shape == (2, 640)
        assert build_input_trunk()(obs).shape == (2, 675)

    def test_value_heads(self, rng):
        features = np.zeros((3, 32), dtype=np.float32)
        nonlinear = build_value_head(ValueHeadKind.NONLINEAR, 32, rng)
        linear = build_value_head(ValueHeadKind.LINEAR, 32, rng)
        assert nonlinear(features).shape == (3, 4)
        assert linear(features).shape == (3, 4)
        assert len(linear.layers) == 1

    def test_decoder_reconstructs_observation_shape(self, rng):
        decoder = build_decoder(32, rng)
        assert decoder(np.zeros((2, 32), dtype=np.float32)).shape == (2, 15, 15, 3)

    def test_state_dict_round_trip(self, rng):
        a = build_trunk(Activation.RELU32, FTAConfig(), rng)
        b = build_trunk(Activation.RELU32, FTAConfig(), np.random.default_rng(99))
        b.load_state_dict(a.state_dict())
        for name, value in a.parameters().items():
            np.testing.assert_array_equal(b.parameters()[name], value)

    def test_state_dict_mismatch(self, rng):
        small = build_trunk(Activation.RELU32, FTAConfig(), rng)
        large = build_trunk(Activation.RELU640, FTAConfig(), rng)
        with pytest.raises(ArchitectureMismatchError):
            small.load_state_dict(large.state_dict())
