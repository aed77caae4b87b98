import numpy as np
import pytest

from ctxfill.layers import (Activation, BatchNorm2d, ChannelwiseFC, Conv2d, ConvSpec,
                            Dropout, Linear, MaxPool2d, TConv2d)
from ctxfill.rng import RngState


def run(layer, x, train=True, rng=None):
    return layer.forward(x, train, {}, rng)


class TestConv2d:
    def test_all_ones_3x3_gives_nine(self):
        conv = Conv2d(ConvSpec(1, 1, (3, 3)), name="c")
        conv.weight.value = np.ones((1, 1, 3, 3))
        out = run(conv, np.ones((1, 1, 3, 3)))
        np.testing.assert_array_equal(out, [[[[9.0]]]])

    def test_1x1_identity(self, rng):
        conv = Conv2d(ConvSpec(1, 1, (1, 1)), name="c")
        conv.weight.value = np.ones((1, 1, 1, 1))
        x = rng.uniform((2, 1, 5, 5), -1.0, 1.0)
        np.testing.assert_array_equal(run(conv, x), x)

    def test_channel_mismatch_rejected(self, rng):
        conv = Conv2d(ConvSpec(3, 1, (3, 3)), rng, "c")
        with pytest.raises(ValueError):
            run(conv, np.zeros((1, 2, 8, 8)))

    def test_too_small_input_rejected(self, rng):
        conv = Conv2d(ConvSpec(1, 1, (5, 5)), rng, "c")
        with pytest.raises(ValueError):
            run(conv, np.zeros((1, 1, 3, 3)))


class TestChannelwiseFC:
    def test_paper_scale_weight_count(self):
        layer = ChannelwiseFC(256, 6)
        assert layer.weight_count == 331_776
        assert layer.weight.value.size == 331_776

    def test_weight_count_law(self, rng):
        for _ in range(5):
            m = int(rng.integers(1, 9))
            n = int(rng.integers(1, 5))
            assert ChannelwiseFC(m, n).weight_count == m * n ** 4

    def test_per_channel_identity(self, rng):
        layer = ChannelwiseFC(3, 4)
        layer.weight.value = np.stack([np.eye(16)] * 3)
        x = rng.uniform((2, 3, 4, 4), -1.0, 1.0)
        np.testing.assert_array_equal(run(layer, x), x)

    def test_channels_never_mix(self, rng):
        layer = ChannelwiseFC(3, 4, rng, "cw")
        x = rng.uniform((1, 3, 4, 4), -1.0, 1.0)
        base = run(layer, x)
        bumped = x.copy()
        bumped[0, 1] += 0.5
        out = run(layer, bumped)
        np.testing.assert_array_equal(out[:, 0], base[:, 0])
        np.testing.assert_array_equal(out[:, 2], base[:, 2])
        assert not np.array_equal(out[:, 1], base[:, 1])

    def test_non_square_input_rejected(self, rng):
        layer = ChannelwiseFC(3, 4, rng, "cw")
        with pytest.raises(ValueError):
            run(layer, np.zeros((1, 3, 4, 5)))


class TestLinear:
    def test_identity_weight(self, rng):
        lin = Linear(4, 4)
        lin.weight.value = np.eye(4)
        x = rng.uniform((3, 4), -1.0, 1.0)
        np.testing.assert_array_equal(run(lin, x), x)

    def test_zero_weight_gives_bias(self):
        lin = Linear(4, 2)
        lin.bias.value = np.array([1.5, -2.0])
        out = run(lin, np.ones((3, 4)))
        np.testing.assert_array_equal(out, np.tile([1.5, -2.0], (3, 1)))

    def test_feature_mismatch(self, rng):
        with pytest.raises(ValueError):
            run(Linear(4, 2, rng), np.zeros((3, 5)))


class TestActivation:
    def test_relu(self):
        out = run(Activation("relu"), np.array([[[[-1.0, 2.0]]]]))
        np.testing.assert_array_equal(out, [[[[0.0, 2.0]]]])

    def test_leaky_relu(self):
        out = run(Activation("leaky_relu", 0.2), np.array([[[[-1.0, 2.0]]]]))
        np.testing.assert_allclose(out, [[[[-0.2, 2.0]]]])

    def test_leaky_gradient_on_negative_side(self):
        act = Activation("leaky_relu", 0.2)
        cache = {}
        act.forward(np.array([[[[-1.0]]]]), True, cache)
        dx = act.backward(np.ones((1, 1, 1, 1)), cache)
        np.testing.assert_allclose(dx, [[[[0.2]]]])

    def test_bad_slope_rejected(self):
        with pytest.raises(ValueError):
            Activation("leaky_relu", 1.5)

    def test_sigmoid_range(self, rng):
        out = run(Activation("sigmoid"), rng.uniform((2, 3, 4, 4), -10.0, 10.0))
        assert np.all((out > 0.0) & (out < 1.0))


class TestBatchNorm:
    def test_normalizes_to_unit_statistics(self, rng):
        bn = BatchNorm2d(3)
        x = rng.uniform((4, 3, 5, 5), -2.0, 3.0)
        out = run(bn, x, train=True)
        mean = out.mean(axis=(0, 2, 3))
        var = out.var(axis=(0, 2, 3))
        np.testing.assert_allclose(mean, 0.0, atol=1e-10)
        np.testing.assert_allclose(var, 1.0, atol=1e-4)

    def test_constant_channel_maps_to_zero(self):
        bn = BatchNorm2d(1)
        out = run(bn, np.full((2, 1, 3, 3), 7.0), train=True)
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_running_stats_feed_eval_mode(self, rng):
        bn = BatchNorm2d(2, momentum=1.0)
        x = rng.uniform((4, 2, 3, 3), -1.0, 1.0)
        train_out = run(bn, x, train=True)
        eval_out = run(bn, x, train=False)
        # momentum 1.0 copies the batch statistics into the running buffers
        np.testing.assert_allclose(eval_out, train_out, atol=1e-10)

    def test_degenerate_batch_rejected(self):
        with pytest.raises(ValueError):
            run(BatchNorm2d(1), np.zeros((1, 1, 1, 1)), train=True)


class TestDropout:
    def test_rate_zero_is_identity(self, rng):
        x = rng.uniform((2, 3, 4, 4))
        np.testing.assert_array_equal(run(Dropout(0.0), x, rng=rng), x)

    def test_eval_mode_is_identity(self, rng):
        x = rng.uniform((2, 3, 4, 4))
        np.testing.assert_array_equal(run(Dropout(0.5), x, train=False), x)

    def test_survivor_fraction_and_expectation(self):
        x = np.ones((1, 1, 1000, 100))
        out = run(Dropout(0.5), x, rng=RngState(7))
        survivors = np.count_nonzero(out) / x.size
        assert abs(survivors - 0.5) < 0.01
        assert abs(out.mean() - 1.0) < 0.02

    def test_expectation_over_resamples(self):
        # Train-mode output is an unbiased estimate of the input.
        x = np.full((1, 1, 10, 10), 2.0)
        rng = RngState(3)
        acc = np.zeros_like(x)
        n = 10_000
        for _ in range(n):
            acc += run(Dropout(0.5), x, rng=rng)
        est = acc / n
        assert abs(est.mean() / x.mean() - 1.0) < 0.01
        np.testing.assert_allclose(est, x, rtol=0.05)  # per element: ~4 sigma

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestMaxPool:
    def test_window_maximum(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = run(MaxPool2d((2, 2), (2, 2)), x)
        np.testing.assert_array_equal(out, [[[[4.0]]]])

    def test_constant_ties_route_to_first_element(self):
        pool = MaxPool2d((2, 2), (2, 2))
        cache = {}
        out = pool.forward(np.ones((1, 1, 4, 4)), True, cache)
        np.testing.assert_array_equal(out, np.ones((1, 1, 2, 2)))
        dx = pool.backward(np.ones((1, 1, 2, 2)), cache)
        expected = np.zeros((1, 1, 4, 4))
        expected[0, 0, ::2, ::2] = 1.0
        np.testing.assert_array_equal(dx, expected)

    def test_oversized_window_rejected(self):
        with pytest.raises(ValueError):
            run(MaxPool2d((5, 5), (1, 1)), np.zeros((1, 1, 4, 4)))


class TestTConv2d:
    def test_output_extent_formula(self, rng):
        t = TConv2d(ConvSpec(2, 3, (4, 4), (2, 2), (1, 1)), rng, "t")
        out = run(t, rng.uniform((1, 2, 4, 4)))
        assert out.shape == (1, 3, 8, 8)

    def test_channel_mismatch_rejected(self, rng):
        t = TConv2d(ConvSpec(2, 3, (4, 4), (2, 2), (1, 1)), rng, "t")
        with pytest.raises(ValueError):
            run(t, np.zeros((1, 3, 4, 4)))
