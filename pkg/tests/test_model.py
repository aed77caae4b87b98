import numpy as np
import pytest

from ctxfill.layers import Activation, ChannelwiseFC, Conv2d, ConvSpec
from ctxfill.model import (GeneratorConfig, Network, build_discriminator, build_generator,
                           rebuild_from_descriptor)
from ctxfill.rng import RngState

TINY = dict(base_channels=4, bottleneck_units=8)


class TestGeneratorConfig:
    def test_defaults(self):
        cfg = GeneratorConfig()
        assert cfg.patch == 32
        assert cfg.output_size == 32

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValueError):
            GeneratorConfig(image_size=48)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            GeneratorConfig(image_size=16)

    def test_bad_overlap_rejected(self):
        with pytest.raises(ValueError):
            GeneratorConfig(image_size=32, patch=16, overlap=8)

    def test_full_image_output_for_region_masks(self):
        cfg = GeneratorConfig(image_size=64, mask_kind="random_region")
        assert cfg.output_size == 64


class TestBuildGenerator:
    def test_central_patch_output_shape(self, rng):
        cfg = GeneratorConfig(image_size=64, patch=32, **TINY)
        gen = build_generator(cfg, rng)
        out = gen.forward(rng.uniform((2, 3, 64, 64)))
        assert out.shape == (2, 3, 32, 32)

    def test_full_image_output_shape(self, rng):
        cfg = GeneratorConfig(image_size=64, mask_kind="random_region", **TINY)
        gen = build_generator(cfg, rng)
        out = gen.forward(rng.uniform((1, 3, 64, 64)))
        assert out.shape == (1, 3, 64, 64)

    def test_output_range_is_unit_interval(self, rng):
        gen = build_generator(GeneratorConfig(image_size=32, **TINY), rng)
        out = gen.forward(rng.uniform((2, 3, 32, 32), -3.0, 3.0))
        assert np.all((out >= 0.0) & (out <= 1.0))

    def test_eval_mode_deterministic(self, rng):
        gen = build_generator(GeneratorConfig(image_size=32, **TINY), rng)
        x = rng.uniform((1, 3, 32, 32))
        np.testing.assert_array_equal(gen.forward(x), gen.forward(x))

    def test_bottleneck_weight_count_at_256_channels(self, rng):
        # 4 halvings of 64px with base 32 put 256 maps of 4x4 at the bottleneck.
        cfg = GeneratorConfig(image_size=64, base_channels=32, bottleneck_units=64)
        gen = build_generator(cfg, rng)
        cwfc = next(l for l in gen.layers if isinstance(l, ChannelwiseFC))
        assert cwfc.channels == 256
        assert cwfc.weight_count == 256 * 4 ** 4 == 65_536

    def test_pool_free_variants_share_shapes(self, rng):
        x = RngState(5).uniform((2, 3, 32, 32))
        outs = []
        for pool_free in (True, False):
            cfg = GeneratorConfig(image_size=32, pool_free=pool_free, **TINY)
            gen = build_generator(cfg, RngState(1).child(7))
            caches = []
            out = gen.forward(x, train=True, caches=caches)
            outs.append(out.shape)
            gen.zero_grads()
            gen.backward(np.ones_like(out), caches)  # pooled path backprops too
        assert outs[0] == outs[1]

    def test_linear_bottleneck_variant(self, rng):
        cfg = GeneratorConfig(image_size=32, bottleneck_kind="linear", **TINY)
        gen = build_generator(cfg, rng)
        x = rng.uniform((2, 3, 32, 32))
        assert gen.forward(x).shape == (2, 3, 16, 16)
        from ctxfill.evaluate import embed_context
        emb = embed_context(gen, x)
        assert emb.shape == (2, 8)  # code collapses to bottleneck_units scalars

    def test_linear_bottleneck_trains(self, rng):
        cfg = GeneratorConfig(image_size=32, bottleneck_kind="linear", **TINY)
        gen = build_generator(cfg, rng)
        x = rng.uniform((2, 3, 32, 32))
        caches = []
        out = gen.forward(x, train=True, caches=caches)
        gen.zero_grads()
        gen.backward(np.ones_like(out), caches)
        assert all(np.isfinite(p.grad).all() for p in gen.params())

    def test_descriptor_round_trip(self, rng):
        cfg = GeneratorConfig(image_size=32, **TINY)
        gen = build_generator(cfg, rng)
        rebuilt = rebuild_from_descriptor(gen.descriptor)
        assert [type(l).__name__ for l in rebuilt.layers] == \
               [type(l).__name__ for l in gen.layers]
        rebuilt.load_state(gen.state_arrays())
        x = RngState(2).uniform((1, 3, 32, 32))
        np.testing.assert_array_equal(rebuilt.forward(x), gen.forward(x))


class TestBuildDiscriminator:
    def test_scalar_probability_output(self, rng):
        cfg = GeneratorConfig(image_size=64, patch=32, **TINY)
        disc = build_discriminator(cfg, rng)
        out = disc.forward(rng.uniform((5, 3, 32, 32)))
        assert out.shape == (5, 1, 1, 1)
        assert np.all((out > 0.0) & (out < 1.0))

    def test_fresh_init_is_uncommitted(self):
        # Mean output near 1/2 on random inputs: the sigmoid head starts unbiased.
        cfg = GeneratorConfig(image_size=64, patch=32)
        disc = build_discriminator(cfg, RngState(0).child(1))
        x = RngState(3).uniform((256, 3, 32, 32))
        mean = float(disc.forward(x).mean())
        assert 0.3 < mean < 0.7

    def test_downsampling_stage_count(self, rng):
        cfg = GeneratorConfig(image_size=64, patch=32, **TINY)
        disc = build_discriminator(cfg, rng)
        convs = [l for l in disc.layers if isinstance(l, Conv2d)]
        assert len(convs) == 4  # 3 halvings: 32->16->8->4, then the 4x4 head


class TestInformationMixing:
    def test_bottleneck_with_mix_conv_reaches_everything(self, rng):
        cwfc = ChannelwiseFC(2, 4, rng, "cw")
        mix = Conv2d(ConvSpec(2, 2, (1, 1)), rng, "mix")
        net = Network([cwfc, mix], {"kind": "test", "config": {}})
        x = rng.uniform((1, 2, 4, 4))
        caches = []
        out = net.forward(x, train=True, caches=caches)
        dy = np.zeros_like(out)
        dy[0, 0, 0, 0] = 1.0  # single output pixel
        net.zero_grads()
        dx = net.backward(dy, caches)
        assert np.count_nonzero(dx) == dx.size  # every input pixel matters

    def test_identity_bottleneck_without_mix_is_channel_diagonal(self, rng):
        cwfc = ChannelwiseFC(2, 4)
        cwfc.weight.value = np.stack([np.eye(16)] * 2)
        net = Network([cwfc, Activation("leaky_relu", 0.2)], {"kind": "test", "config": {}})
        x = rng.uniform((1, 2, 4, 4), 0.1, 1.0)
        caches = []
        out = net.forward(x, train=True, caches=caches)
        dy = np.zeros_like(out)
        dy[0, 0] = 1.0  # gradient only into channel 0
        net.zero_grads()
        dx = net.backward(dy, caches)
        np.testing.assert_array_equal(dx[0, 1], np.zeros((4, 4)))
        assert np.count_nonzero(dx[0, 0]) == 16

    def test_full_generator_gradient_is_dense_across_input(self, rng):
        gen = build_generator(GeneratorConfig(image_size=32, **TINY), rng)
        x = rng.uniform((1, 3, 32, 32))
        caches = []
        out = gen.forward(x, train=True, caches=caches)
        dy = np.zeros_like(out)
        dy[0, 1, 3, 7] = 1.0
        gen.zero_grads()
        dx = gen.backward(dy, caches)
        # one output pixel sees (almost) the whole context in every channel
        assert np.count_nonzero(dx) > 0.95 * dx.size
