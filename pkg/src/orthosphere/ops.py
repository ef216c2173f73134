"""Neural-network primitives over :class:`~orthosphere.tensor.Tensor`.

The convolution and pooling forwards/backwards dispatch to the kernel
backend in ``orthosphere._kernels``; everything else is numpy expressed
through the autodiff graph. All primitives are differentiable with respect
to every Tensor argument unless noted.
"""

import numpy as np

from . import _kernels as K
from .tensor import Tensor


def conv2d(x, kernel, stride=1, pad=0):
    """2-D cross-correlation, zero padding. x: (N,C,H,W), kernel: (M,C,f,f)."""
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    n, c, h, w = x.shape
    m, ck, f, fw = kernel.shape
    if f != fw:
        raise ValueError(f"conv2d kernels must be square, got {f}x{fw}")
    if ck != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, kernel expects {ck}")
    if h + 2 * pad < f or w + 2 * pad < f:
        raise ValueError(f"conv2d window {f} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    out = Tensor._result(K.conv2d_forward(x.data, kernel.data, stride, pad), (x, kernel), "conv2d")
    if out._prev:
        def _bw(g, x=x, kernel=kernel, stride=stride, pad=pad):
            g = np.ascontiguousarray(g)
            if x.requires_grad:
                x._accum(K.conv2d_backward_input(g, x.shape, kernel.data, stride, pad))
            if kernel.requires_grad:
                kernel._accum(K.conv2d_backward_kernel(g, x.data, kernel.shape, stride, pad))
        out._backward = _bw
    return out


def max_pool2d(x, window, stride=None):
    """Max pooling; gradient routes to the first maximum in row-major window order."""
    stride = window if stride is None else stride
    if window < 1:
        raise ValueError(f"max_pool2d window must be >= 1, got {window}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ValueError(f"max_pool2d window {window} exceeds spatial extent {h}x{w}")
    vals, idx = K.maxpool_forward(np.ascontiguousarray(x.data), window, stride)
    out = Tensor._result(vals, (x,), "max_pool2d")
    if out._prev:
        def _bw(g, x=x, idx=idx, window=window, stride=stride):
            x._accum(K.maxpool_backward(np.ascontiguousarray(g), idx, x.shape, window, stride))
        out._backward = _bw
    return out


def global_avg_pool(x):
    """(N,M,h,w) -> (N,M), each channel averaged over its h*w values."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects (N,M,h,w), got {x.shape}")
    return x.mean(axis=(2, 3))


def dense(x, weight, bias):
    """Affine map: (N,A) @ (A,B) + (B,)."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dense shape mismatch: {x.shape} @ {weight.shape}")
    return x @ weight + bias


def leaky_relu(x, alpha=0.1):
    """x if x > 0 else alpha*x; derivative alpha at exactly 0."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"leaky_relu alpha must be in [0,1), got {alpha}")
    factor = np.where(x.data > 0, x.data.dtype.type(1), x.data.dtype.type(alpha))
    out = Tensor._result(x.data * factor, (x,), "leaky_relu")
    if out._prev:
        def _bw(g, x=x, factor=factor):
            x._accum(g * factor)
        out._backward = _bw
    return out


def relu(x):
    return leaky_relu(x, 0.0)


def softmax(logits):
    """Row-wise softmax with max-subtraction; (N,K) -> (N,K)."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError(f"softmax expects (N,K) with K >= 2, got {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor._result(s, (logits,), "softmax")
    if out._prev:
        def _bw(g, logits=logits, s=s):
            dot = (g * s).sum(axis=1, keepdims=True)
            logits._accum(s * (g - dot))
        out._backward = _bw
    return out


def batch_norm(x, gamma, beta, state, mode, momentum=0.9, eps=1e-5):
    """Per-channel batch normalization for (N,C,H,W) or (N,C).

    Train mode normalizes with batch statistics (biased variance) and
    updates ``state`` -- a dict with 'mean' and 'var' arrays of shape (C,) --
    in place with the given momentum. Eval mode normalizes with the stored
    running statistics. Differentiable w.r.t. x, gamma and beta; the train
    path differentiates through the batch statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    elif x.ndim == 2:
        axes, bshape = (0,), (1, -1)
    else:
        raise ValueError(f"batch_norm expects (N,C,H,W) or (N,C), got {x.shape}")
    g = gamma.reshape(bshape)
    b = beta.reshape(bshape)
    if mode == "eval":
        mean = state["mean"].reshape(bshape)
        var = state["var"].reshape(bshape)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - Tensor(mean)) * Tensor(inv.astype(x.dtype))
        return xhat * g + b
    if x.shape[0] < 2:
        raise ValueError("batch_norm train mode needs N >= 2 (variance undefined for N=1)")
    mu = x.mean(axis=axes, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = (var + eps) ** -0.5
    xhat = centered * inv
    # running statistics track the batch moments outside the graph
    ndata = float(np.prod([x.shape[a] for a in axes]))
    unbiased = var.data.reshape(-1) * (ndata / max(ndata - 1.0, 1.0))
    state["mean"][:] = momentum * state["mean"] + (1.0 - momentum) * mu.data.reshape(-1)
    state["var"][:] = momentum * state["var"] + (1.0 - momentum) * unbiased
    return xhat * g + b


def dropout(x, rate, rng, mode):
    """Zero each element with probability `rate` (train), scale survivors by
    1/(1-rate); eval mode returns the input unchanged."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = x.data.dtype.type(1.0 / (1.0 - rate))
    return x * Tensor(keep * scale)


def bn_state(channels, dtype=np.float32):
    """Fresh running-statistics record for batch_norm."""
    return {"mean": np.zeros(channels, dtype=dtype), "var": np.ones(channels, dtype=dtype)}
