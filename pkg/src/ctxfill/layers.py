"""Network layers: forward passes and analytic backward passes.

Every layer follows the same protocol: ``forward(x, train, cache, rng)``
returns the output and records whatever backward needs in the caller-owned
``cache`` dict; ``backward(dy, cache)`` returns the input gradient and
accumulates parameter gradients into ``Param.grad``.  Caches are per step and
never shared, so layers themselves hold no mutable per-call state (batch-norm
running statistics, which are updated by train-mode forward, are the one
documented exception).
"""

from dataclasses import dataclass, field

import numpy as np

from ctxfill import kernels
from ctxfill.rng import RngState

DEFAULT_INIT_STD = 0.02


@dataclass
class Param:
    """A named learnable array with an accumulated gradient buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray | None = None

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def add_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ValueError(f"invalid conv spec {self}")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding[0] - self.kernel[0]) // self.stride[0] + 1
        ow = (w + 2 * self.padding[1] - self.kernel[1]) // self.stride[1] + 1
        return oh, ow

    def tconv_out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h - 1) * self.stride[0] - 2 * self.padding[0] + self.kernel[0]
        ow = (w - 1) * self.stride[1] - 2 * self.padding[1] + self.kernel[1]
        return oh, ow


def _check_4d(x: np.ndarray):
    if x.ndim != 4:
        raise ValueError(f"expected NCHW tensor, got shape {x.shape}")


class Conv2d:
    def __init__(self, spec: ConvSpec, rng: RngState | None = None, name: str = "conv",
                 bias: bool = True, init_std: float = DEFAULT_INIT_STD):
        self.spec = spec
        self.name = name
        wshape = (spec.out_channels, spec.in_channels, *spec.kernel)
        w = rng.normal(wshape, 0.0, init_std) if rng is not None else np.zeros(wshape)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(spec.out_channels)) if bias else None
        self.params = [self.weight] + ([self.bias] if bias else [])

    def _bias_value(self):
        if self.bias is not None:
            return self.bias.value
        return np.zeros(self.spec.out_channels, dtype=self.weight.value.dtype)

    def forward(self, x, train, cache, rng=None):
        _check_4d(x)
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(f"{self.name}: expected {self.spec.in_channels} input channels, got {x.shape[1]}")
        oh, ow = self.spec.out_hw(x.shape[2], x.shape[3])
        if oh < 1 or ow < 1:
            raise ValueError(f"{self.name}: output extent {oh}x{ow} < 1 for input {x.shape}")
        cache["x"] = x
        return kernels.conv2d_forward(x, self.weight.value, self._bias_value(),
                                      *self.spec.stride, *self.spec.padding)

    def backward(self, dy, cache):
        dx, dw, db = kernels.conv2d_backward(cache["x"], self.weight.value, dy,
                                             *self.spec.stride, *self.spec.padding)
        self.weight.add_grad(dw)
        if self.bias is not None:
            self.bias.add_grad(db)
        return dx


class TConv2d:
    """Transposed convolution; the forward map is the adjoint of Conv2d's."""

    def __init__(self, spec: ConvSpec, rng: RngState | None = None, name: str = "tconv",
                 bias: bool = True, init_std: float = DEFAULT_INIT_STD):
        self.spec = spec
        self.name = name
        wshape = (spec.in_channels, spec.out_channels, *spec.kernel)
        w = rng.normal(wshape, 0.0, init_std) if rng is not None else np.zeros(wshape)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(spec.out_channels)) if bias else None
        self.params = [self.weight] + ([self.bias] if bias else [])

    def _bias_value(self):
        if self.bias is not None:
            return self.bias.value
        return np.zeros(self.spec.out_channels, dtype=self.weight.value.dtype)

    def forward(self, x, train, cache, rng=None):
        _check_4d(x)
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(f"{self.name}: expected {self.spec.in_channels} input channels, got {x.shape[1]}")
        oh, ow = self.spec.tconv_out_hw(x.shape[2], x.shape[3])
        if oh < 1 or ow < 1:
            raise ValueError(f"{self.name}: output extent {oh}x{ow} < 1 for input {x.shape}")
        cache["x"] = x
        return kernels.tconv2d_forward(x, self.weight.value, self._bias_value(),
                                       *self.spec.stride, *self.spec.padding)

    def backward(self, dy, cache):
        dx, dw, db = kernels.tconv2d_backward(cache["x"], self.weight.value, dy,
                                              *self.spec.stride, *self.spec.padding)
        self.weight.add_grad(dw)
        if self.bias is not None:
            self.bias.add_grad(db)
        return dx


class ChannelwiseFC:
    """Independent dense n^2 -> n^2 map per channel; never mixes channels.

    Weight parameter count (excluding bias) is exactly channels * n^4.
    """

    def __init__(self, channels: int, n: int, rng: RngState | None = None,
                 name: str = "cwfc", init_std: float = DEFAULT_INIT_STD):
        self.channels = channels
        self.n = n
        self.name = name
        s = n * n
        w = rng.normal((channels, s, s), 0.0, init_std) if rng is not None else np.zeros((channels, s, s))
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros((channels, s)))
        self.params = [self.weight, self.bias]

    @property
    def weight_count(self) -> int:
        return self.channels * self.n ** 4

    def forward(self, x, train, cache, rng=None):
        _check_4d(x)
        n_, c, h, w = x.shape
        if h != w:
            raise ValueError(f"{self.name}: spatial input must be square, got {h}x{w}")
        if c != self.channels or h != self.n:
            raise ValueError(f"{self.name}: expected ({self.channels},{self.n},{self.n}) maps, got {x.shape[1:]}")
        xf = np.ascontiguousarray(x.reshape(n_, c, h * w))
        cache["xf"] = xf
        y = kernels.cwfc_forward(xf, self.weight.value, self.bias.value)
        return y.reshape(n_, c, h, w)

    def backward(self, dy, cache):
        n_, c, h, w = dy.shape
        dyf = np.ascontiguousarray(dy.reshape(n_, c, h * w))
        dx, dw, db = kernels.cwfc_backward(cache["xf"], self.weight.value, dyf)
        self.weight.add_grad(dw)
        self.bias.add_grad(db)
        return dx.reshape(n_, c, h, w)


class Linear:
    def __init__(self, in_features: int, out_features: int, rng: RngState | None = None,
                 name: str = "linear", init_std: float = DEFAULT_INIT_STD):
        self.in_features = in_features
        self.out_features = out_features
        self.name = name
        w = (rng.normal((out_features, in_features), 0.0, init_std)
             if rng is not None else np.zeros((out_features, in_features)))
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(out_features))
        self.params = [self.weight, self.bias]

    def forward(self, x, train, cache, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"{self.name}: expected (N,{self.in_features}), got {x.shape}")
        cache["x"] = x
        return kernels.linear_forward(x, self.weight.value, self.bias.value)

    def backward(self, dy, cache):
        dx, dw, db = kernels.linear_backward(cache["x"], self.weight.value, dy)
        self.weight.add_grad(dw)
        self.bias.add_grad(db)
        return dx


class Activation:
    """relu, leaky_relu (slope alpha on the negative side), or sigmoid."""

    KINDS = ("relu", "leaky_relu", "sigmoid")

    def __init__(self, kind: str, alpha: float = 0.2, name: str = "act"):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        if kind == "leaky_relu" and not 0.0 < alpha < 1.0:
            raise ValueError(f"leaky_relu slope must be in (0,1), got {alpha}")
        self.kind = kind
        self.alpha = alpha
        self.name = name
        self.params = []

    def forward(self, x, train, cache, rng=None):
        if self.kind == "relu":
            cache["pos"] = x > 0
            return np.where(cache["pos"], x, 0.0)
        if self.kind == "leaky_relu":
            cache["pos"] = x > 0
            return np.where(cache["pos"], x, self.alpha * x)
        y = 1.0 / (1.0 + np.exp(-x))
        cache["y"] = y
        return y

    def backward(self, dy, cache):
        if self.kind == "relu":
            return np.where(cache["pos"], dy, 0.0)
        if self.kind == "leaky_relu":
            return np.where(cache["pos"], dy, self.alpha * dy)
        y = cache["y"]
        return dy * y * (1.0 - y)


class BatchNorm2d:
    """Per-channel batch normalization with running statistics for eval mode."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "bn"):
        if eps <= 0:
            raise ValueError("batch-norm epsilon must be positive")
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self.gamma = Param(f"{name}.gamma", np.ones(channels))
        self.beta = Param(f"{name}.beta", np.zeros(channels))
        self.params = [self.gamma, self.beta]
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def load_state(self, arrays: dict[str, np.ndarray]):
        self.running_mean = arrays[f"{self.name}.running_mean"].copy()
        self.running_var = arrays[f"{self.name}.running_var"].copy()

    def forward(self, x, train, cache, rng=None):
        _check_4d(x)
        n, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"{self.name}: expected {self.channels} channels, got {c}")
        if train:
            m = n * h * w
            if m < 2:
                raise ValueError(f"{self.name}: batch*H*W must be >= 2 in train mode, got {m}")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            ivar = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean[None, :, None, None]) * ivar[None, :, None, None]
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
            cache["xhat"] = xhat
            cache["ivar"] = ivar
            cache["m"] = m
        else:
            ivar = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None, None]) * ivar[None, :, None, None]
        return self.gamma.value[None, :, None, None] * xhat + self.beta.value[None, :, None, None]

    def backward(self, dy, cache):
        xhat, ivar, m = cache["xhat"], cache["ivar"], cache["m"]
        dgamma = np.sum(dy * xhat, axis=(0, 2, 3))
        dbeta = np.sum(dy, axis=(0, 2, 3))
        self.gamma.add_grad(dgamma)
        self.beta.add_grad(dbeta)
        # Full chain rule through the batch statistics.
        g = self.gamma.value[None, :, None, None] * ivar[None, :, None, None]
        dx = g * (dy
                  - dbeta[None, :, None, None] / m
                  - xhat * dgamma[None, :, None, None] / m)
        return dx


class Dropout:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""

    def __init__(self, rate: float, name: str = "dropout"):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate
        self.name = name
        self.params = []

    def forward(self, x, train, cache, rng=None):
        if not train or self.rate == 0.0:
            cache["mask"] = None
            return x
        if rng is None:
            raise ValueError(f"{self.name}: train-mode dropout needs an RngState")
        keep = rng.uniform(x.shape) >= self.rate
        scale = 1.0 / (1.0 - self.rate)
        cache["mask"] = keep
        cache["scale"] = scale
        return np.where(keep, x * scale, 0.0)

    def backward(self, dy, cache):
        if cache["mask"] is None:
            return dy
        return np.where(cache["mask"], dy * cache["scale"], 0.0)


class MaxPool2d:
    def __init__(self, kernel: tuple[int, int], stride: tuple[int, int], name: str = "pool"):
        self.kernel = kernel
        self.stride = stride
        self.name = name
        self.params = []

    def forward(self, x, train, cache, rng=None):
        _check_4d(x)
        n, c, h, w = x.shape
        if self.kernel[0] > h or self.kernel[1] > w:
            raise ValueError(f"{self.name}: window {self.kernel} larger than input {h}x{w}")
        y, arg = kernels.maxpool_forward(x, *self.kernel, *self.stride)
        cache["arg"] = arg
        cache["hw"] = (h, w)
        return y

    def backward(self, dy, cache):
        h, w = cache["hw"]
        return kernels.maxpool_backward(dy, cache["arg"], h, w)
