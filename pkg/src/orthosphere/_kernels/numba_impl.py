"""Numba-jitted twins of the numpy kernels.

Direct convolution, row-vectorized: inputs are zero-padded up front so the
inner loops are branch-free, and stride 1 (the only stride the bundled
models use) gets a specialized loop whose unit-stride indexing LLVM can
SIMD; other strides take a generic loop. Accumulation order per output
element is fixed, so results are deterministic; float32 and float64 both
compile. ``cache=True`` keeps compilation a one-off per machine.
"""

import numpy as np
from numba import njit


def _pad(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


@njit(cache=True, fastmath=True)
def _conv_fwd_s1(xp, k, h2, w2):
    n, c = xp.shape[0], xp.shape[1]
    m, _, f, _ = k.shape
    out = np.zeros((n, m, h2, w2), dtype=xp.dtype)
    for b in range(n):
        for o in range(m):
            for ch in range(c):
                for fi in range(f):
                    for fj in range(f):
                        kv = k[o, ch, fi, fj]
                        for i in range(h2):
                            orow = out[b, o, i]
                            xrow = xp[b, ch, i + fi]
                            for j in range(w2):
                                orow[j] += kv * xrow[j + fj]
    return out


@njit(cache=True, fastmath=True)
def _conv_fwd_gen(xp, k, stride, h2, w2):
    n, c = xp.shape[0], xp.shape[1]
    m, _, f, _ = k.shape
    out = np.zeros((n, m, h2, w2), dtype=xp.dtype)
    for b in range(n):
        for o in range(m):
            for ch in range(c):
                for fi in range(f):
                    for fj in range(f):
                        kv = k[o, ch, fi, fj]
                        for i in range(h2):
                            orow = out[b, o, i]
                            xrow = xp[b, ch, i * stride + fi]
                            for j in range(w2):
                                orow[j] += kv * xrow[j * stride + fj]
    return out


def conv2d_forward(x, k, stride, pad):
    h2 = (x.shape[2] + 2 * pad - k.shape[2]) // stride + 1
    w2 = (x.shape[3] + 2 * pad - k.shape[3]) // stride + 1
    xp = _pad(x, pad)
    if stride == 1:
        return _conv_fwd_s1(xp, k, h2, w2)
    return _conv_fwd_gen(xp, k, stride, h2, w2)


@njit(cache=True, fastmath=True)
def _conv_bwd_input_s1(gout, k, hp, wp):
    n, m, h2, w2 = gout.shape
    c, f = k.shape[1], k.shape[2]
    gxp = np.zeros((n, c, hp, wp), dtype=gout.dtype)
    for b in range(n):
        for o in range(m):
            for ch in range(c):
                for fi in range(f):
                    for fj in range(f):
                        kv = k[o, ch, fi, fj]
                        for i in range(h2):
                            grow = gout[b, o, i]
                            xrow = gxp[b, ch, i + fi]
                            for j in range(w2):
                                xrow[j + fj] += kv * grow[j]
    return gxp


@njit(cache=True, fastmath=True)
def _conv_bwd_input_gen(gout, k, stride, hp, wp):
    n, m, h2, w2 = gout.shape
    c, f = k.shape[1], k.shape[2]
    gxp = np.zeros((n, c, hp, wp), dtype=gout.dtype)
    for b in range(n):
        for o in range(m):
            for ch in range(c):
                for fi in range(f):
                    for fj in range(f):
                        kv = k[o, ch, fi, fj]
                        for i in range(h2):
                            grow = gout[b, o, i]
                            xrow = gxp[b, ch, i * stride + fi]
                            for j in range(w2):
                                xrow[j * stride + fj] += kv * grow[j]
    return gxp


def conv2d_backward_input(gout, x_shape, k, stride, pad):
    n, c, h, w = x_shape
    if stride == 1:
        gxp = _conv_bwd_input_s1(gout, k, h + 2 * pad, w + 2 * pad)
    else:
        gxp = _conv_bwd_input_gen(gout, k, stride, h + 2 * pad, w + 2 * pad)
    if pad > 0:
        gxp = np.ascontiguousarray(gxp[:, :, pad : pad + h, pad : pad + w])
    return gxp


@njit(cache=True, fastmath=True)
def _conv_bwd_kernel_s1(gout, xp, m, c, f):
    n, _, h2, w2 = gout.shape
    gk = np.zeros((m, c, f, f), dtype=gout.dtype)
    for b in range(n):
        for o in range(m):
            for ch in range(c):
                for fi in range(f):
                    for fj in range(f):
                        acc = 0.0
                        for i in range(h2):
                            grow = gout[b, o, i]
                            xrow = xp[b, ch, i + fi]
                            for j in range(w2):
                                acc += grow[j] * xrow[j + fj]
                        gk[o, ch, fi, fj] += acc
    return gk


@njit(cache=True, fastmath=True)
def _conv_bwd_kernel_gen(gout, xp, m, c, f, stride):
    n, _, h2, w2 = gout.shape
    gk = np.zeros((m, c, f, f), dtype=gout.dtype)
    for b in range(n):
        for o in range(m):
            for ch in range(c):
                for fi in range(f):
                    for fj in range(f):
                        acc = 0.0
                        for i in range(h2):
                            grow = gout[b, o, i]
                            xrow = xp[b, ch, i * stride + fi]
                            for j in range(w2):
                                acc += grow[j] * xrow[j * stride + fj]
                        gk[o, ch, fi, fj] += acc
    return gk


def conv2d_backward_kernel(gout, x, k_shape, stride, pad):
    m, c, f, _ = k_shape
    xp = _pad(x, pad)
    if stride == 1:
        return _conv_bwd_kernel_s1(gout, xp, m, c, f)
    return _conv_bwd_kernel_gen(gout, xp, m, c, f, stride)


@njit(cache=True)
def maxpool_forward(x, window, stride):
    n, c, h, w = x.shape
    h2 = (h - window) // stride + 1
    w2 = (w - window) // stride + 1
    out = np.empty((n, c, h2, w2), dtype=x.dtype)
    idx = np.empty((n, c, h2, w2), dtype=np.int64)
    for b in range(n):
        for ch in range(c):
            for i in range(h2):
                for j in range(w2):
                    best = x[b, ch, i * stride, j * stride]
                    arg = 0
                    for wi in range(window):
                        for wj in range(window):
                            v = x[b, ch, i * stride + wi, j * stride + wj]
                            if v > best:  # strict: first occurrence wins ties
                                best = v
                                arg = wi * window + wj
                    out[b, ch, i, j] = best
                    idx[b, ch, i, j] = arg
    return out, idx


@njit(cache=True)
def maxpool_backward(gout, idx, x_shape, window, stride):
    n, c, h, w = x_shape
    h2 = gout.shape[2]
    w2 = gout.shape[3]
    gx = np.zeros((n, c, h, w), dtype=gout.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(h2):
                for j in range(w2):
                    a = idx[b, ch, i, j]
                    gx[b, ch, i * stride + a // window, j * stride + a % window] += gout[b, ch, i, j]
    return gx
