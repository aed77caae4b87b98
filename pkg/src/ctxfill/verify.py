"""Gradient-check suite: every layer and loss against the central-difference
oracle, plus end-to-end checks through full generator/discriminator stacks.

Used by the ``gradcheck`` CLI subcommand and the acceptance tests.  All checks
run at 64-bit with eps 1e-5; single layers must agree within relative error
1e-4, whole networks within 1e-3.
"""

from dataclasses import dataclass

import numpy as np

from ctxfill.gradcheck import finite_diff_grad, rel_error
from ctxfill.layers import (Activation, BatchNorm2d, ChannelwiseFC, Conv2d, ConvSpec,
                            Dropout, Linear, MaxPool2d, TConv2d)
from ctxfill.loss import discriminator_loss, generator_adv_loss, reconstruction_loss
from ctxfill.model import GeneratorConfig, build_discriminator, build_generator
from ctxfill.rng import RngState

LAYER_TOL = 1e-4
NETWORK_TOL = 1e-3
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error <= self.tol


def _weighted_sum(y: np.ndarray, r: np.ndarray) -> float:
    return float(np.sum(y * r))


def _check_layer_inputs(layer, x, r, train=True, rng_factory=None):
    """Gradient of sum(layer(x) * r) wrt x and wrt each parameter."""
    results = {}

    def run(inp):
        cache = {}
        rng = rng_factory() if rng_factory else None
        return layer.forward(inp, train, cache, rng), cache

    def f_x(inp):
        y, _ = run(inp)
        return _weighted_sum(y, r)

    y, cache = run(x)
    for p in layer.params:
        p.zero_grad()
    dx = layer.backward(r.astype(np.float64), cache)
    results["x"] = rel_error(dx, finite_diff_grad(f_x, x.copy(), EPS))

    for p in layer.params:
        orig = p.value

        def f_p(val, p=p):
            p.value = val
            out = _weighted_sum(run(x)[0], r)
            p.value = orig
            return out

        results[p.name] = rel_error(p.grad, finite_diff_grad(f_p, orig.copy(), EPS))
        p.value = orig
    return results


def run_gradient_suite(seed: int = 0) -> list[CheckResult]:
    rng = RngState(seed)
    results = []

    def add(name, err, tol=LAYER_TOL):
        results.append(CheckResult(name, float(err), tol))

    # conv2d
    conv = Conv2d(ConvSpec(3, 4, (3, 3), (2, 2), (1, 1)), rng.child(1), "conv")
    x = rng.uniform((2, 3, 8, 8), -1.0, 1.0)
    r = rng.uniform((2, 4, 4, 4), -1.0, 1.0)
    for key, err in _check_layer_inputs(conv, x, r).items():
        add(f"conv2d/{key}", err)

    # transposed conv
    tconv = TConv2d(ConvSpec(3, 2, (4, 4), (2, 2), (1, 1)), rng.child(2), "tconv")
    x = rng.uniform((2, 3, 4, 4), -1.0, 1.0)
    r = rng.uniform((2, 2, 8, 8), -1.0, 1.0)
    for key, err in _check_layer_inputs(tconv, x, r).items():
        add(f"tconv2d/{key}", err)

    # channel-wise fully connected
    cwfc = ChannelwiseFC(3, 4, rng.child(3), "cwfc")
    x = rng.uniform((2, 3, 4, 4), -1.0, 1.0)
    r = rng.uniform((2, 3, 4, 4), -1.0, 1.0)
    for key, err in _check_layer_inputs(cwfc, x, r).items():
        add(f"channelwise_fc/{key}", err)

    # linear
    lin = Linear(5, 3, rng.child(4), "linear")
    x = rng.uniform((3, 5), -1.0, 1.0)
    r = rng.uniform((3, 3), -1.0, 1.0)
    for key, err in _check_layer_inputs(lin, x, r).items():
        add(f"linear/{key}", err)

    # batch norm (train mode)
    bn = BatchNorm2d(3, name="bn")
    bn.gamma.value = rng.uniform(3, 0.5, 1.5)
    bn.beta.value = rng.uniform(3, -0.5, 0.5)
    x = rng.uniform((4, 3, 5, 5), -1.0, 1.0)
    r = rng.uniform((4, 3, 5, 5), -1.0, 1.0)
    for key, err in _check_layer_inputs(bn, x, r).items():
        add(f"batchnorm2d/{key}", err)

    # activations; inputs nudged away from the relu kink at 0
    for kind in ("relu", "leaky_relu", "sigmoid"):
        act = Activation(kind, 0.2)
        x = rng.uniform((2, 3, 4, 4), -1.0, 1.0)
        x = np.where(np.abs(x) < 1e-2, x + 0.05, x)
        r = rng.uniform((2, 3, 4, 4), -1.0, 1.0)
        add(f"activation_{kind}/x", _check_layer_inputs(act, x, r)["x"])

    # max pooling; a distinct ramp rules out within-window ties
    pool = MaxPool2d((2, 2), (2, 2))
    x = rng.uniform((1, 2, 6, 6), -1.0, 1.0) + np.arange(72).reshape(1, 2, 6, 6) * 1e-3
    r = rng.uniform((1, 2, 3, 3), -1.0, 1.0)
    add("maxpool2d/x", _check_layer_inputs(pool, x, r)["x"])

    # dropout: replay the same stream for every probe so the mask is fixed
    drop = Dropout(0.3)
    x = rng.uniform((2, 3, 4, 4), -1.0, 1.0)
    r = rng.uniform((2, 3, 4, 4), -1.0, 1.0)
    add("dropout/x", _check_layer_inputs(drop, x, r, rng_factory=lambda: RngState(seed, 77))["x"])

    # reconstruction loss with a 10x band in the weight map
    pred = rng.uniform((1, 3, 8, 8), 0.0, 1.0)
    target = rng.uniform((1, 3, 8, 8), 0.0, 1.0)
    weights = np.zeros((1, 1, 8, 8))
    weights[:, :, 2:6, 2:6] = 10.0
    weights[:, :, 3:5, 3:5] = 1.0
    for norm in ("l2", "l1"):
        err = rel_error(
            reconstruction_loss(pred, target, weights, norm).grad,
            finite_diff_grad(lambda p: reconstruction_loss(p, target, weights, norm).value,
                             pred.copy(), EPS))
        add(f"reconstruction_loss_{norm}/pred", err)

    # adversarial losses over probabilities safely inside (0,1)
    d_real = rng.uniform((4, 1, 1, 1), 0.15, 0.85)
    d_fake = rng.uniform((4, 1, 1, 1), 0.15, 0.85)
    dl = discriminator_loss(d_real, d_fake)
    add("discriminator_loss/d_real", rel_error(
        dl.grad_real,
        finite_diff_grad(lambda p: discriminator_loss(p, d_fake).value, d_real.copy(), EPS)))
    add("discriminator_loss/d_fake", rel_error(
        dl.grad_fake,
        finite_diff_grad(lambda p: discriminator_loss(d_real, p).value, d_fake.copy(), EPS)))
    add("generator_adv_loss/d_fake", rel_error(
        generator_adv_loss(d_fake).grad,
        finite_diff_grad(lambda p: generator_adv_loss(p).value, d_fake.copy(), EPS)))

    # end-to-end stacks at reduced width
    gcfg = GeneratorConfig(image_size=32, base_channels=4, bottleneck_units=8,
                           patch=16, overlap=2)
    gen = build_generator(gcfg, rng.child(9))
    x = rng.uniform((1, 3, 32, 32), 0.0, 1.0)
    r = rng.uniform((1, 3, 16, 16), -1.0, 1.0)

    def f_gen(inp):
        return _weighted_sum(gen.forward(inp, train=True, caches=[]), r)

    caches = []
    gen.forward(x, train=True, caches=caches)
    gen.zero_grads()
    dx = gen.backward(r, caches)
    add("generator_end_to_end/x", rel_error(dx, finite_diff_grad(f_gen, x.copy(), EPS)),
        tol=NETWORK_TOL)

    disc = build_discriminator(gcfg, rng.child(10))
    xd = rng.uniform((1, 3, 16, 16), 0.0, 1.0)
    rd = rng.uniform((1, 1, 1, 1), -1.0, 1.0)

    def f_disc(inp):
        return _weighted_sum(disc.forward(inp, train=True, caches=[]), rd)

    caches = []
    disc.forward(xd, train=True, caches=caches)
    disc.zero_grads()
    dxd = disc.backward(rd, caches)
    add("discriminator_end_to_end/x", rel_error(dxd, finite_diff_grad(f_disc, xd.copy(), EPS)),
        tol=NETWORK_TOL)

    return results
