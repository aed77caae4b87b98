"""Generator and discriminator assembly.

The generator is an encoder (strided 4x4 convs, batch norm, leaky ReLU,
doubling channels while halving spatial extent down to 4x4), a bottleneck
(channel-wise fully-connected map over each 4x4 plane, then a 1x1 conv that
mixes information across channels), and a decoder (strided 4x4 transposed
convs with batch norm and ReLU, sigmoid-squashed output in [0,1]).  The
discriminator is the same downsampling stack ending in a single sigmoid
probability per sample.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from ctxfill.layers import (Activation, BatchNorm2d, ChannelwiseFC, Conv2d, ConvSpec,
                            Dropout, MaxPool2d, TConv2d)
from ctxfill.rng import RngState

MASK_KINDS = ("central", "random_block", "random_region")


@dataclass
class GeneratorConfig:
    image_size: int = 64
    base_channels: int = 64
    bottleneck_units: int = 512
    pool_free: bool = True
    mask_kind: str = "central"
    leaky_slope: float = 0.2
    patch: int | None = None       # central masks only; defaults to image_size // 2
    overlap: int = 4               # context-overlap band width, central masks only
    dropout: float = 0.0           # applied to the channel-wise FC output when > 0
    bottleneck_kind: str = "channelwise"  # "channelwise" | "linear"

    def __post_init__(self):
        if self.image_size < 32 or self.image_size & (self.image_size - 1):
            raise ValueError(f"image_size must be a power of two >= 32, got {self.image_size}")
        if self.mask_kind not in MASK_KINDS:
            raise ValueError(f"mask_kind must be one of {MASK_KINDS}, got {self.mask_kind!r}")
        if self.bottleneck_kind not in ("channelwise", "linear"):
            raise ValueError(f"bottleneck_kind must be 'channelwise' or 'linear', "
                             f"got {self.bottleneck_kind!r}")
        if self.patch is None:
            self.patch = self.image_size // 2
        if self.patch < 8 or self.patch & (self.patch - 1) or self.patch > self.image_size:
            raise ValueError(f"patch must be a power of two in [8, image_size], got {self.patch}")
        if self.overlap < 0 or 2 * self.overlap >= self.patch:
            raise ValueError(f"overlap {self.overlap} is too wide for patch {self.patch}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0,1), got {self.dropout}")

    @property
    def output_size(self) -> int:
        """Side of the predicted region: the patch for central masks, the full
        image for arbitrary masks (whose output is judged as a whole)."""
        return self.patch if self.mask_kind == "central" else self.image_size


class Network:
    """An ordered layer stack with explicit forward/backward and named state."""

    def __init__(self, layers: list, descriptor: dict, bottleneck_end: int | None = None):
        self.layers = layers
        self.descriptor = descriptor
        self.bottleneck_end = bottleneck_end

    def params(self) -> list:
        return [p for layer in self.layers for p in layer.params]

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def forward(self, x, train: bool = False, caches: list | None = None, rng: RngState | None = None):
        for layer in self.layers:
            cache = {}
            if caches is not None:
                caches.append(cache)
            x = layer.forward(x, train, cache, rng)
        return x

    def forward_prefix(self, x, end: int, train: bool = False, rng: RngState | None = None):
        for layer in self.layers[:end]:
            x = layer.forward(x, train, {}, rng)
        return x

    def backward(self, dy, caches: list):
        if len(caches) != len(self.layers):
            raise ValueError(f"expected {len(self.layers)} caches, got {len(caches)}")
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(dy, cache)
        return dy

    def state_arrays(self) -> dict[str, np.ndarray]:
        state = {p.name: p.value for p in self.params()}
        for layer in self.layers:
            if isinstance(layer, BatchNorm2d):
                state.update(layer.state_arrays())
        return state

    def load_state(self, arrays: dict[str, np.ndarray]):
        for p in self.params():
            src = arrays[p.name]
            if src.shape != p.value.shape:
                raise ValueError(f"{p.name}: checkpoint shape {src.shape} != model shape {p.value.shape}")
            p.value = src.copy()
        for layer in self.layers:
            if isinstance(layer, BatchNorm2d):
                layer.load_state(arrays)

    def astype(self, dtype):
        for p in self.params():
            p.value = p.value.astype(dtype)
        for layer in self.layers:
            if isinstance(layer, BatchNorm2d):
                layer.running_mean = layer.running_mean.astype(dtype)
                layer.running_var = layer.running_var.astype(dtype)
        return self


def _encoder_channels(cfg: GeneratorConfig, size: int) -> list[int]:
    stages = int(math.log2(size)) - 2
    cap = cfg.base_channels * 8
    return [min(cfg.base_channels * 2 ** i, cap) for i in range(stages)]


def _down_block(layers, name, in_ch, out_ch, slope, rng, first_pooled=False, batchnorm=True):
    if first_pooled:
        # Stride-1 conv plus overlapping pool halves the extent like the
        # strided conv does, so both variants share every downstream shape.
        layers.append(Conv2d(ConvSpec(in_ch, out_ch, (4, 4), (1, 1), (2, 2)), rng, f"{name}.conv"))
    else:
        layers.append(Conv2d(ConvSpec(in_ch, out_ch, (4, 4), (2, 2), (1, 1)), rng, f"{name}.conv"))
    if batchnorm:
        layers.append(BatchNorm2d(out_ch, name=f"{name}.bn"))
    layers.append(Activation("leaky_relu", slope, name=f"{name}.lrelu"))
    if first_pooled:
        layers.append(MaxPool2d((3, 3), (2, 2), name=f"{name}.pool"))


def build_generator(cfg: GeneratorConfig, rng: RngState | None) -> Network:
    """Encoder + channel-wise bottleneck + decoder, validated by a dry run."""
    layers = []
    enc_chs = _encoder_channels(cfg, cfg.image_size)
    in_ch = 3
    for i, out_ch in enumerate(enc_chs):
        pooled = (i == 0 and not cfg.pool_free)
        _down_block(layers, f"enc{i}", in_ch, out_ch, cfg.leaky_slope, rng, first_pooled=pooled)
        in_ch = out_ch

    if cfg.bottleneck_kind == "channelwise":
        layers.append(ChannelwiseFC(in_ch, 4, rng, name="neck.cwfc"))
        if cfg.dropout > 0:
            layers.append(Dropout(cfg.dropout, name="neck.dropout"))
        layers.append(Activation("leaky_relu", cfg.leaky_slope, name="neck.lrelu"))
        layers.append(Conv2d(ConvSpec(in_ch, cfg.bottleneck_units, (1, 1)), rng, name="neck.mix"))
        layers.append(BatchNorm2d(cfg.bottleneck_units, name="neck.bn"))
        layers.append(Activation("leaky_relu", cfg.leaky_slope, name="neck.lrelu2"))
        bottleneck_end = len(layers)
    else:
        # Dense alternative: a 4x4 conv collapses the maps to a 1x1 code of
        # bottleneck_units, and a 4x4 transposed conv re-expands it.
        layers.append(Conv2d(ConvSpec(in_ch, cfg.bottleneck_units, (4, 4)), rng, name="neck.fc"))
        layers.append(Activation("leaky_relu", cfg.leaky_slope, name="neck.lrelu"))
        bottleneck_end = len(layers)
        layers.append(TConv2d(ConvSpec(cfg.bottleneck_units, cfg.bottleneck_units, (4, 4)),
                              rng, name="neck.expand"))
        layers.append(BatchNorm2d(cfg.bottleneck_units, name="neck.bn"))
        layers.append(Activation("relu", name="neck.relu"))

    target = cfg.output_size
    up_stages = int(math.log2(target)) - 2
    cap = cfg.base_channels * 8
    in_ch = cfg.bottleneck_units
    for i in range(up_stages - 1):
        out_ch = min(cfg.base_channels * 2 ** (up_stages - 2 - i), cap)
        layers.append(TConv2d(ConvSpec(in_ch, out_ch, (4, 4), (2, 2), (1, 1)), rng, f"dec{i}.tconv"))
        layers.append(BatchNorm2d(out_ch, name=f"dec{i}.bn"))
        layers.append(Activation("relu", name=f"dec{i}.relu"))
        in_ch = out_ch
    layers.append(TConv2d(ConvSpec(in_ch, 3, (4, 4), (2, 2), (1, 1)), rng, "out.tconv"))
    layers.append(Activation("sigmoid", name="out.sigmoid"))

    descriptor = {"kind": "generator", "config": asdict(cfg)}
    net = Network(layers, descriptor, bottleneck_end=bottleneck_end)
    _validate_shapes(net, cfg.image_size, (3, target, target))
    return net


def build_discriminator(cfg: GeneratorConfig, rng: RngState | None) -> Network:
    """Downsampling conv stack (no batch norm on the first stage) ending in a
    single probability per sample; input side equals the predicted region."""
    layers = []
    size = cfg.output_size
    enc_chs = _encoder_channels(cfg, size)
    in_ch = 3
    for i, out_ch in enumerate(enc_chs):
        _down_block(layers, f"d{i}", in_ch, out_ch, cfg.leaky_slope, rng, batchnorm=(i > 0))
        in_ch = out_ch
    layers.append(Conv2d(ConvSpec(in_ch, 1, (4, 4)), rng, name="head.conv"))
    layers.append(Activation("sigmoid", name="head.sigmoid"))

    descriptor = {"kind": "discriminator", "config": asdict(cfg)}
    net = Network(layers, descriptor)
    _validate_shapes(net, size, (1, 1, 1))
    return net


def _validate_shapes(net: Network, in_size: int, expected: tuple[int, int, int]):
    probe = np.zeros((1, 3, in_size, in_size))
    try:
        out = net.forward(probe, train=False)
    except ValueError as exc:
        raise ValueError(f"layer chain does not compose for input {in_size}x{in_size}: {exc}") from exc
    if out.shape[1:] != expected:
        raise ValueError(f"network produces {out.shape[1:]}, expected {expected}")


def rebuild_from_descriptor(descriptor: dict) -> Network:
    """Reconstruct an uninitialized network matching a checkpoint descriptor."""
    cfg = GeneratorConfig(**descriptor["config"])
    if descriptor["kind"] == "generator":
        return build_generator(cfg, rng=None)
    if descriptor["kind"] == "discriminator":
        return build_discriminator(cfg, rng=None)
    raise ValueError(f"unknown network kind {descriptor['kind']!r}")


def generator_forward(gen: Network, masked_image: np.ndarray, train: bool = False,
                      caches: list | None = None, rng: RngState | None = None) -> np.ndarray:
    """Predict the designated region from a mean-filled masked image."""
    return gen.forward(masked_image, train=train, caches=caches, rng=rng)


def discriminator_forward(disc: Network, patch: np.ndarray, train: bool = False,
                          caches: list | None = None) -> np.ndarray:
    """Probability in (0,1), shape (N,1,1,1), that each sample is real."""
    return disc.forward(patch, train=train, caches=caches)
