"""Kernel equivalence: naive-loop oracles, cross-backend equality, adjoints."""

import numpy as np
import pytest

from oracles import (conv2d_naive, cwfc_naive, linear_naive, maxpool_naive, tconv2d_naive,
                     zero_stuff_conv_tconv)

from ctxfill import kernels
from ctxfill.backend import HAS_NUMBA, set_backend
from ctxfill.ops import inner
from ctxfill.rng import RngState


def random_conv_case(rng, i):
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    co = int(rng.integers(1, 4))
    kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    sh, sw = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    ph, pw = int(rng.integers(0, 2)), int(rng.integers(0, 2))
    h = int(rng.integers(kh + sh, kh + sh + 5))
    w = int(rng.integers(kw + sw, kw + sw + 5))
    x = rng.uniform((n, c, h, w), -1.0, 1.0)
    wgt = rng.uniform((co, c, kh, kw), -1.0, 1.0)
    b = rng.uniform((co,), -1.0, 1.0)
    return x, wgt, b, sh, sw, ph, pw


def test_conv2d_matches_naive_oracle_exactly():
    rng = RngState(100)
    for i in range(30):
        x, w, b, sh, sw, ph, pw = random_conv_case(rng, i)
        got = kernels.conv2d_forward(x, w, b, sh, sw, ph, pw)
        np.testing.assert_array_equal(got, conv2d_naive(x, w, b, sh, sw, ph, pw))


def test_tconv2d_matches_naive_oracle_exactly():
    rng = RngState(200)
    for i in range(30):
        n = int(rng.integers(1, 3))
        ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.integers(1, 5))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, min(k, 2)))
        h = int(rng.integers(2, 6))
        x = rng.uniform((n, ci, h, h), -1.0, 1.0)
        w = rng.uniform((ci, co, k, k), -1.0, 1.0)
        b = rng.uniform((co,), -1.0, 1.0)
        if (h - 1) * s - 2 * p + k < 1:
            continue
        got = kernels.tconv2d_forward(x, w, b, s, s, p, p)
        np.testing.assert_array_equal(got, tconv2d_naive(x, w, b, s, s, p, p))


def test_tconv2d_equals_zero_stuff_plus_conv():
    rng = RngState(300)
    x = rng.uniform((1, 2, 4, 4), -1.0, 1.0)
    w = rng.uniform((2, 3, 4, 4), -1.0, 1.0)
    b = rng.uniform((3,), -1.0, 1.0)
    got = kernels.tconv2d_forward(x, w, b, 2, 2, 1, 1)
    assert got.shape == (1, 3, 8, 8)
    np.testing.assert_allclose(got, zero_stuff_conv_tconv(x, w, b, 2, 1), rtol=0, atol=1e-12)


def test_tconv2d_constant_upsampling():
    # One pixel of value v through a 2x2 kernel of ones at stride 2 tiles v.
    x = np.full((1, 1, 1, 1), 1.75)
    w = np.ones((1, 1, 2, 2))
    b = np.zeros(1)
    out = kernels.tconv2d_forward(x, w, b, 2, 2, 0, 0)
    np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 1.75))


def test_conv_tconv_adjoint_identity():
    # <conv(x), y> == <x, tconv(y)> for shared weights and zero bias.
    rng = RngState(400)
    for _ in range(20):
        c, co, k, s, p = (int(rng.integers(1, 4)), int(rng.integers(1, 4)),
                          int(rng.integers(1, 4)), int(rng.integers(1, 3)),
                          int(rng.integers(0, 2)))
        h = int(rng.integers(k + s, k + s + 4))
        h -= (h + 2 * p - k) % s  # exact stride fit so the adjoint shape matches
        x = rng.uniform((2, c, h, h), -1.0, 1.0)
        w = rng.uniform((co, c, k, k), -1.0, 1.0)
        oh = (h + 2 * p - k) // s + 1
        if oh < 1:
            continue
        y = rng.uniform((2, co, oh, oh), -1.0, 1.0)
        ax = kernels.conv2d_forward(x, w, np.zeros(co), s, s, p, p)
        # tconv weights are indexed (in, out): reuse w directly with y as input.
        aty = kernels.tconv2d_forward(y, w, np.zeros(c), s, s, p, p)
        lhs, rhs = inner(ax, y), inner(x, aty)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1e-30)


def test_cwfc_matches_per_channel_dense_oracle():
    rng = RngState(500)
    for _ in range(20):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        s = int(rng.integers(1, 4)) ** 2
        x = rng.uniform((n, c, s), -1.0, 1.0)
        w = rng.uniform((c, s, s), -1.0, 1.0)
        b = rng.uniform((c, s), -1.0, 1.0)
        np.testing.assert_array_equal(kernels.cwfc_forward(x, w, b), cwfc_naive(x, w, b))


def test_cwfc_is_two_independent_matmuls():
    rng = RngState(501)
    x = rng.uniform((1, 2, 4), -1.0, 1.0)
    w = rng.uniform((2, 4, 4), -1.0, 1.0)
    b = np.zeros((2, 4))
    out = kernels.cwfc_forward(x, w, b)
    for c in range(2):
        np.testing.assert_allclose(out[0, c], w[c] @ x[0, c], rtol=0, atol=1e-12)


def test_linear_matches_dot_oracle():
    rng = RngState(600)
    x = rng.uniform((3, 5), -1.0, 1.0)
    w = rng.uniform((4, 5), -1.0, 1.0)
    b = rng.uniform((4,), -1.0, 1.0)
    np.testing.assert_allclose(kernels.linear_forward(x, w, b), linear_naive(x, w, b),
                               rtol=0, atol=1e-12)


def test_maxpool_matches_naive_oracle_exactly():
    rng = RngState(700)
    for _ in range(20):
        x = rng.uniform((1, 2, 6, 6), -1.0, 1.0)
        y, arg = kernels.maxpool_forward(x, 2, 2, 2, 2)
        ey, earg = maxpool_naive(x, 2, 2, 2, 2)
        np.testing.assert_array_equal(y, ey)
        np.testing.assert_array_equal(arg, earg)


def test_maxpool_tie_goes_to_first_window_element():
    x = np.zeros((1, 1, 2, 2))
    y, arg = kernels.maxpool_forward(x, 2, 2, 2, 2)
    assert y[0, 0, 0, 0] == 0.0
    assert arg[0, 0, 0, 0] == 0
    dx = kernels.maxpool_backward(np.ones((1, 1, 1, 1)), arg, 2, 2)
    np.testing.assert_array_equal(dx, [[[[1.0, 0.0], [0.0, 0.0]]]])


@pytest.mark.skipif(not HAS_NUMBA, reason="numba backend unavailable")
def test_backends_bit_identical_forward():
    rng = RngState(800)
    cases = []
    for i in range(10):
        cases.append(random_conv_case(rng, i))
    xt = rng.uniform((2, 3, 4, 4), -1.0, 1.0)
    wt = rng.uniform((3, 2, 3, 3), -1.0, 1.0)
    bt = rng.uniform((2,), -1.0, 1.0)
    xc = rng.uniform((2, 3, 9), -1.0, 1.0)
    wc = rng.uniform((3, 9, 9), -1.0, 1.0)
    bc = rng.uniform((3, 9), -1.0, 1.0)
    xm = rng.uniform((2, 2, 8, 8), -1.0, 1.0)

    def run_all():
        outs = [kernels.conv2d_forward(*case) for case in cases]
        outs.append(kernels.tconv2d_forward(xt, wt, bt, 2, 2, 1, 1))
        outs.append(kernels.cwfc_forward(xc, wc, bc))
        outs.extend(kernels.maxpool_forward(xm, 2, 2, 2, 2))
        return outs

    try:
        set_backend("numpy")
        a = run_all()
        set_backend("numba")
        b = run_all()
    finally:
        set_backend(None)
    for left, right in zip(a, b):
        np.testing.assert_array_equal(left, right)


@pytest.mark.skipif(not HAS_NUMBA, reason="numba backend unavailable")
def test_backends_agree_backward():
    rng = RngState(900)
    x = rng.uniform((2, 3, 8, 8), -1.0, 1.0)
    w = rng.uniform((4, 3, 3, 3), -1.0, 1.0)
    dy = rng.uniform((2, 4, 4, 4), -1.0, 1.0)
    try:
        set_backend("numpy")
        a = kernels.conv2d_backward(x, w, dy, 2, 2, 1, 1)
        set_backend("numba")
        b = kernels.conv2d_backward(x, w, dy, 2, 2, 1, 1)
    finally:
        set_backend(None)
    for left, right in zip(a, b):
        np.testing.assert_allclose(left, right, rtol=1e-12, atol=1e-13)
