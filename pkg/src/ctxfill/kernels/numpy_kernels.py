"""Pure-numpy kernel implementations.

Forward kernels accumulate in a fixed order -- bias first, then reduction
indices ascending -- by looping over the reduction axes and doing vectorized
adds over the output plane.  Each partial sum is therefore formed by the same
sequence of IEEE operations as a naive nested loop, which keeps results
bit-identical to the numba backend and to the test oracles.  Backward kernels
are free to use BLAS reductions; they only need to satisfy the
finite-difference checks.
"""

import numpy as np


def _pad_hw(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    out[:, :, ph:ph + h, pw:pw + w] = x
    return out


def conv2d_forward(x, w, b, sh, sw, ph, pw):
    """Strided cross-correlation.

    x (N,C,H,W), w (CO,C,KH,KW), b (CO,).  Per output element the accumulator
    starts at the bias and adds x*w terms in ascending (c, kh, kw) order.
    """
    n, c, h, wid = x.shape
    co, _, kh, kw = w.shape
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wid + 2 * pw - kw) // sw + 1
    xp = _pad_hw(x, ph, pw)
    y = np.empty((n, co, oh, ow), dtype=x.dtype)
    y[:] = b[None, :, None, None]
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, ci, i:i + oh * sh:sh, j:j + ow * sw:sw]
                y += patch[:, None, :, :] * w[None, :, ci, i, j, None, None]
    return y


def conv2d_backward(x, w, dy, sh, sw, ph, pw):
    n, c, h, wid = x.shape
    co, _, kh, kw = w.shape
    _, _, oh, ow = dy.shape
    xp = _pad_hw(x, ph, pw)
    db = dy.sum(axis=(0, 2, 3))
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + oh * sh:sh, j:j + ow * sw:sw]
            dw[:, :, i, j] = np.tensordot(dy, patch, axes=([0, 2, 3], [0, 2, 3]))
            contrib = np.tensordot(dy, w[:, :, i, j], axes=([1], [0]))
            dxp[:, :, i:i + oh * sh:sh, j:j + ow * sw:sw] += np.moveaxis(contrib, 3, 1)
    dx = dxp[:, :, ph:ph + h, pw:pw + wid]
    return np.ascontiguousarray(dx), dw, db


def tconv2d_forward(x, w, b, sh, sw, ph, pw):
    """Transposed (fractionally strided) convolution, the adjoint of conv2d_forward.

    x (N,CI,H,W), w (CI,CO,KH,KW), b (CO,).  Output spatial extent is
    (H-1)*sh - 2*ph + kh.  Accumulation: bias first, then scatter terms in
    ascending (ci, kh, kw) order.
    """
    n, ci, h, wid = x.shape
    _, co, kh, kw = w.shape
    oh = (h - 1) * sh - 2 * ph + kh
    ow = (wid - 1) * sw - 2 * pw + kw
    # Scatter into a padded buffer, then crop ph/pw; the bias fills the whole
    # buffer up front so each surviving pixel accumulates bias-first.
    yp = np.empty((n, co, (h - 1) * sh + kh, (wid - 1) * sw + kw), dtype=x.dtype)
    yp[:] = b[None, :, None, None]
    for c in range(ci):
        plane = x[:, c]
        for i in range(kh):
            for j in range(kw):
                yp[:, :, i:i + h * sh:sh, j:j + wid * sw:sw] += (
                    plane[:, None, :, :] * w[None, c, :, i, j, None, None]
                )
    y = yp[:, :, ph:ph + oh, pw:pw + ow]
    return np.ascontiguousarray(y)


def tconv2d_backward(x, w, dy, sh, sw, ph, pw):
    n, ci, h, wid = x.shape
    _, co, kh, kw = w.shape
    db = dy.sum(axis=(0, 2, 3))
    dyp = _pad_hw(dy, ph, pw)
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            ds = dyp[:, :, i:i + h * sh:sh, j:j + wid * sw:sw]
            dx += np.moveaxis(np.tensordot(ds, w[:, :, i, j], axes=([1], [1])), 3, 1)
            dw[:, :, i, j] = np.tensordot(x, ds, axes=([0, 2, 3], [0, 2, 3]))
    return dx, dw, db


def cwfc_forward(x, w, b):
    """Per-channel dense map: y[n,c] = w[c] @ x[n,c] + b[c], no channel mixing.

    x (N,C,S) with S the flattened spatial size, w (C,S,S), b (C,S).
    Accumulator starts at the bias and adds terms in ascending input-unit order.
    """
    n, c, s = x.shape
    y = np.empty((n, c, s), dtype=x.dtype)
    y[:] = b[None, :, :]
    for i in range(s):
        y += x[:, :, i, None] * w[None, :, :, i]
    return y


def cwfc_backward(x, w, dy):
    dx = np.einsum("cji,ncj->nci", w, dy)
    dw = np.einsum("ncj,nci->cji", dy, x)
    db = dy.sum(axis=0)
    return dx, dw, db


def linear_forward(x, w, b):
    """Dense layer y = x @ w.T + b with x (N,F), w (O,F), b (O,)."""
    return x @ w.T + b[None, :]


def linear_backward(x, w, dy):
    dx = dy @ w
    dw = dy.T @ x
    db = dy.sum(axis=0)
    return dx, dw, db


def maxpool_forward(x, kh, kw, sh, sw):
    """Windowed max; arg holds the flat H*W index of the first-scanned maximum.

    Ties go to the earliest window element in row-major order (strict >
    comparison against the running best).
    """
    n, c, h, w = x.shape
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    best = np.full((n, c, oh, ow), -np.inf, dtype=x.dtype)
    arg = np.zeros((n, c, oh, ow), dtype=np.int64)
    rows = np.arange(oh) * sh
    cols = np.arange(ow) * sw
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i:i + oh * sh:sh, j:j + ow * sw:sw]
            idx = ((rows + i)[:, None] * w + (cols + j)[None, :])
            better = patch > best
            best = np.where(better, patch, best)
            arg = np.where(better, idx[None, None, :, :], arg)
    return best, arg


def maxpool_backward(dy, arg, h, w):
    n, c, oh, ow = dy.shape
    dx = np.zeros((n, c, h * w), dtype=dy.dtype)
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(dx, (ni, ci, arg), dy)
    return dx.reshape(n, c, h, w)
