"""Differentiable primitives.

Each function takes :class:`Tensor` operands and returns a new node.  Reductions
(batch statistics, the loss) accumulate in float64 and cast back.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, as_tensor, make_node

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _dtype(*ts: Tensor):
    return np.float64 if any(t.data.dtype == np.float64 for t in ts) else np.float32


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out.astype(_dtype(a, b), copy=False), (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out.astype(_dtype(a, b), copy=False), (a, b), backward, "mul")


def neg(x: Tensor) -> Tensor:
    return make_node(-x.data, (x,), lambda g: (-g,), "neg")


def sum_all(x: Tensor) -> Tensor:
    total = np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype)

    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return make_node(total, (x,), backward, "sum")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return make_node(out, (x,), lambda g: (g * (out > 0),), "relu")


def tanh_op(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1 - out * out),), "tanh")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def index_row(x: Tensor, i: int) -> Tensor:
    """``x[i]`` along the leading axis."""
    out = x.data[i].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[i] = g
        return (full,)

    return make_node(out, (x,), backward, "index")


def roll(x: Tensor, shift, axis) -> Tensor:
    out = np.roll(x.data, shift, axis=axis)
    back = tuple(-s for s in shift) if isinstance(shift, tuple) else -shift
    return make_node(out, (x,), lambda g: (np.roll(g, back, axis=axis),), "roll")


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = list(xs)
    if len(xs) == 1:
        return xs[0]
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, xs, backward, "concat")


def slice_channels(x: Tensor, n: int) -> Tensor:
    """First ``n`` channels of an [N, C, ...] tensor."""
    if n == x.shape[1]:
        return x
    if n > x.shape[1]:
        raise ShapeError(f"cannot take {n} channels from input of shape {x.shape}")
    out = x.data[:, :n].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, :n] = g
        return (full,)

    return make_node(out, (x,), backward, "slice")


def add_n(xs: Sequence[Tensor]) -> Tensor:
    xs = list(xs)
    if len(xs) == 1:
        return xs[0]
    shape = xs[0].shape
    for t in xs[1:]:
        if t.shape != shape:
            raise ShapeError(f"add_n operands disagree: {shape} vs {t.shape}")
    out = xs[0].data.copy()
    for t in xs[1:]:
        out += t.data
    return make_node(out, xs, lambda g: tuple(g for _ in xs), "add_n")


def mask_channels(x: Tensor, keep: np.ndarray) -> Tensor:
    """Multiply channel c by the constant ``keep[c]``."""
    shape = (1, -1) + (1,) * (x.ndim - 2)
    m = keep.reshape(shape).astype(x.data.dtype)
    return make_node(x.data * m, (x,), lambda g: (g * m,), "mask")


def neuron_mix(x: Tensor, mix: Tensor, shift, axis) -> Tensor:
    """Per-channel weighted sum of the relu, max and coincidence responses.

    The second input is ``roll(x, shift, axis)``.  ``mix`` has shape [3, C]
    and weights, per channel, ``relu(x)``, ``relu(x) + relu(-x) * relu(tanh(x2))``
    and ``relu(x) * relu(tanh(x2))``.  One fused node; the result equals the
    composition of the elementary ops.
    """
    mix = as_tensor(mix)
    if x.ndim < 2 or mix.shape != (3, x.shape[1]):
        raise ShapeError(f"mixture weights {mix.shape} do not fit activations {x.shape}")
    dtype = _dtype(x, mix)
    xd = x.data.astype(dtype, copy=False)
    r = np.maximum(xd, 0)
    n = r - xd  # relu(-x)
    # relu(tanh(x2)) == max(tanh(x2), 0) since tanh keeps the sign
    q = np.maximum(np.tanh(np.roll(xd, shift, axis=axis)), 0)
    bshape = (1, -1) + (1,) * (xd.ndim - 2)
    m0, m1, m2 = (mix.data[k].reshape(bshape).astype(dtype, copy=False) for k in range(3))
    nq = n * q
    out = r * (m0 + m1 + m2 * q) + m1 * nq
    red = (0,) + tuple(range(2, xd.ndim))

    def backward(g):
        # first input: slope m0 + m1 + m2*q above 0, -m1*q below
        gx = g * np.where(xd > 0, m0 + m1 + m2 * q, -m1 * q)
        # second input through max(tanh(x2), 0), rolled back into place
        gq = g * (m1 * n + m2 * r) * np.where(q > 0, 1 - q * q, 0)
        back = tuple(-s for s in shift) if isinstance(shift, tuple) else -shift
        gx += np.roll(gq, back, axis=axis)
        gm = np.stack([
            (g * r).sum(axis=red, dtype=np.float64),
            (g * (r + nq)).sum(axis=red, dtype=np.float64),
            (g * r * q).sum(axis=red, dtype=np.float64),
        ]).astype(mix.data.dtype)
        return gx.astype(x.data.dtype, copy=False), gm

    return make_node(out.astype(dtype, copy=False), (x, mix), backward, "neuron_mix")


# --------------------------------------------------------------------------
# convolution


def conv_output_size(size: int, stride: int) -> int:
    return -(-size // stride)


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Patch matrix of shape [C*K*K, N*H'*W'] (channel-major rows)."""
    n, c, h, w = x.shape
    if k == 1:
        return np.ascontiguousarray(x[:, :, ::stride, ::stride].transpose(1, 0, 2, 3)).reshape(c, -1)
    p = (k - 1) // 2
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + w] = x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, -1)


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlation with "same" padding ``(K-1)/2``.

    Args:
        x: input of shape [N, C_in, H, W].
        w: kernel of shape [C_out, C_in, K, K] with K odd.
        stride: spatial stride; the output extent is ``ceil(H / stride)``.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    c_out, c_in, k, k2 = w.shape
    if c != c_in:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} has {c} channels, kernel {w.shape} expects {c_in}"
        )
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d needs a square odd kernel, got {w.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    ho, wo = conv_output_size(h, stride), conv_output_size(wd, stride)
    dtype = _dtype(x, w)
    wmat = w.data.reshape(c_out, -1)
    cols = _im2col(x.data, k, stride)
    out = (wmat @ cols).reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out, dtype=dtype)

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(c_out, -1)
        gw = (gm @ cols.T).reshape(w.shape)
        # input gradient: "same" correlation of the zero-dilated output
        # gradient with the spatially flipped, channel-transposed kernel
        if stride == 1:
            gd = g
        else:
            gd = np.zeros((n, c_out, h, wd), dtype=g.dtype)
            gd[:, :, ::stride, ::stride] = g
        wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c_in, -1)
        gx = (wflip @ _im2col(gd, k, 1)).reshape(c_in, n, h, wd).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(gx), gw

    return make_node(out, (x, w), backward, "conv2d")


# --------------------------------------------------------------------------
# normalization and heads


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalization over every axis except 1.

    In training mode the running buffers are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.ndim < 2 or x.shape[1] != gamma.shape[0] or gamma.shape != beta.shape:
        raise ShapeError(f"batch_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    if x.shape[0] == 0:
        raise ShapeError("batch_norm on an empty batch")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    dtype = x.data.dtype
    x64 = x.data.astype(np.float64)
    if training:
        mean = x64.mean(axis=axes)
        var = x64.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mean.reshape(bshape)) * inv_std.reshape(bshape)
    g64 = gamma.data.astype(np.float64).reshape(bshape)
    out = (xhat * g64 + beta.data.astype(np.float64).reshape(bshape)).astype(dtype)
    m = x.size // x.shape[1]

    def backward(g):
        g = g.astype(np.float64)
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * g64
        if training:
            dx = (inv_std.reshape(bshape) / m) * (
                m * dxhat
                - dxhat.sum(axis=axes).reshape(bshape)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
            )
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx.astype(dtype), dgamma.astype(gamma.data.dtype), dbeta.astype(beta.data.dtype)

    return make_node(out, (x, gamma, beta), backward, "batch_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_node(s.astype(x.data.dtype), (x,), backward, "softmax")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), dtype=np.float64).astype(x.data.dtype)

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.data.dtype),)

    return make_node(out, (x,), backward, "gap")


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {weight.shape}")
    out = x.data @ weight.data
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense: bias {bias.shape} vs weights {weight.shape}")
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return make_node(out.astype(_dtype(*parents), copy=False), parents, backward, "dense")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, m = logits.shape
    if n == 0:
        raise ShapeError("cross_entropy on an empty batch")
    if labels.min() < 0 or labels.max() >= m:
        raise ValueError(f"labels must lie in [0, {m}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return ((p * (float(np.asarray(g).reshape(-1)[0]) / n)).astype(logits.data.dtype),)

    return make_node(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward, "cross_entropy")
