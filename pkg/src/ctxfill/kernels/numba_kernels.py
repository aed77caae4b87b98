"""Numba @njit kernel implementations.

Same accumulation-order contract as :mod:`ctxfill.kernels.numpy_kernels`:
per output element the accumulator starts at the bias and adds reduction terms
with ascending indices.  No fastmath, so LLVM neither reassociates nor fuses,
keeping results bit-identical to the numpy backend and the naive oracles.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _pad_hw(x, ph, pw):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    out[:, :, ph:ph + h, pw:pw + w] = x
    return out


@njit(cache=True)
def conv2d_forward(x, w, b, sh, sw, ph, pw):
    n, c, h, wid = x.shape
    co, _, kh, kw = w.shape
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wid + 2 * pw - kw) // sw + 1
    y = np.empty((n, co, oh, ow), dtype=x.dtype)
    for nn in range(n):
        for o in range(co):
            for r in range(oh):
                for q in range(ow):
                    acc = b[o]
                    for ci in range(c):
                        for i in range(kh):
                            ih = r * sh + i - ph
                            if ih < 0 or ih >= h:
                                continue
                            for j in range(kw):
                                iw = q * sw + j - pw
                                if 0 <= iw < wid:
                                    acc = acc + x[nn, ci, ih, iw] * w[o, ci, i, j]
                    y[nn, o, r, q] = acc
    return y


@njit(cache=True)
def conv2d_backward(x, w, dy, sh, sw, ph, pw):
    n, c, h, wid = x.shape
    co, _, kh, kw = w.shape
    _, _, oh, ow = dy.shape
    xp = _pad_hw(x, ph, pw)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    db = np.zeros(co, dtype=dy.dtype)
    for nn in range(n):
        for o in range(co):
            for r in range(oh):
                for q in range(ow):
                    g = dy[nn, o, r, q]
                    db[o] += g
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                ih = r * sh + i
                                iw = q * sw + j
                                dxp[nn, ci, ih, iw] += g * w[o, ci, i, j]
                                dw[o, ci, i, j] += g * xp[nn, ci, ih, iw]
    dx = dxp[:, :, ph:ph + h, pw:pw + wid].copy()
    return dx, dw, db


@njit(cache=True)
def tconv2d_forward(x, w, b, sh, sw, ph, pw):
    n, ci, h, wid = x.shape
    _, co, kh, kw = w.shape
    oh = (h - 1) * sh - 2 * ph + kh
    ow = (wid - 1) * sw - 2 * pw + kw
    y = np.empty((n, co, oh, ow), dtype=x.dtype)
    for nn in range(n):
        for o in range(co):
            for r in range(oh):
                for q in range(ow):
                    acc = b[o]
                    # Gather form of the scatter adjoint: (ci, i, j) ascending.
                    for c in range(ci):
                        for i in range(kh):
                            ihs = r + ph - i
                            if ihs < 0 or ihs % sh != 0:
                                continue
                            ih = ihs // sh
                            if ih >= h:
                                continue
                            for j in range(kw):
                                iws = q + pw - j
                                if iws < 0 or iws % sw != 0:
                                    continue
                                iw = iws // sw
                                if iw < wid:
                                    acc = acc + x[nn, c, ih, iw] * w[c, o, i, j]
                    y[nn, o, r, q] = acc
    return y


@njit(cache=True)
def tconv2d_backward(x, w, dy, sh, sw, ph, pw):
    n, ci, h, wid = x.shape
    _, co, kh, kw = w.shape
    dyp = _pad_hw(dy, ph, pw)
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(co, dtype=dy.dtype)
    _, _, oh, ow = dy.shape
    for nn in range(n):
        for o in range(co):
            for r in range(oh):
                for q in range(ow):
                    db[o] += dy[nn, o, r, q]
    for nn in range(n):
        for c in range(ci):
            for ih in range(h):
                for iw in range(wid):
                    xv = x[nn, c, ih, iw]
                    acc = 0.0
                    for o in range(co):
                        for i in range(kh):
                            for j in range(kw):
                                g = dyp[nn, o, ih * sh + i, iw * sw + j]
                                acc += w[c, o, i, j] * g
                                dw[c, o, i, j] += xv * g
                    dx[nn, c, ih, iw] = acc
    return dx, dw, db


@njit(cache=True)
def cwfc_forward(x, w, b):
    n, c, s = x.shape
    y = np.empty((n, c, s), dtype=x.dtype)
    for nn in range(n):
        for cc in range(c):
            for jj in range(s):
                acc = b[cc, jj]
                for ii in range(s):
                    acc = acc + w[cc, jj, ii] * x[nn, cc, ii]
                y[nn, cc, jj] = acc
    return y


@njit(cache=True)
def cwfc_backward(x, w, dy):
    n, c, s = x.shape
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros((c, s), dtype=dy.dtype)
    for nn in range(n):
        for cc in range(c):
            for jj in range(s):
                g = dy[nn, cc, jj]
                db[cc, jj] += g
                for ii in range(s):
                    dx[nn, cc, ii] += w[cc, jj, ii] * g
                    dw[cc, jj, ii] += g * x[nn, cc, ii]
    return dx, dw, db


@njit(cache=True)
def linear_forward(x, w, b):
    n, f = x.shape
    o = w.shape[0]
    y = np.empty((n, o), dtype=x.dtype)
    for nn in range(n):
        for oo in range(o):
            acc = b[oo]
            for ff in range(f):
                acc = acc + x[nn, ff] * w[oo, ff]
            y[nn, oo] = acc
    return y


@njit(cache=True)
def linear_backward(x, w, dy):
    n, f = x.shape
    o = w.shape[0]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(o, dtype=dy.dtype)
    for nn in range(n):
        for oo in range(o):
            g = dy[nn, oo]
            db[oo] += g
            for ff in range(f):
                dx[nn, ff] += g * w[oo, ff]
                dw[oo, ff] += g * x[nn, ff]
    return dx, dw, db


@njit(cache=True)
def maxpool_forward(x, kh, kw, sh, sw):
    n, c, h, w = x.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    y = np.empty((n, c, oh, ow), dtype=x.dtype)
    arg = np.zeros((n, c, oh, ow), dtype=np.int64)
    for nn in range(n):
        for cc in range(c):
            for r in range(oh):
                for q in range(ow):
                    best = -np.inf
                    bidx = 0
                    # Row-major window scan; strict > keeps the first maximum.
                    for i in range(kh):
                        for j in range(kw):
                            ih = r * sh + i
                            iw = q * sw + j
                            v = x[nn, cc, ih, iw]
                            if v > best:
                                best = v
                                bidx = ih * w + iw
                    y[nn, cc, r, q] = best
                    arg[nn, cc, r, q] = bidx
    return y, arg


@njit(cache=True)
def maxpool_backward(dy, arg, h, w):
    n, c, oh, ow = dy.shape
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    for nn in range(n):
        for cc in range(c):
            for r in range(oh):
                for q in range(ow):
                    idx = arg[nn, cc, r, q]
                    dx[nn, cc, idx // w, idx % w] += dy[nn, cc, r, q]
    return dx
