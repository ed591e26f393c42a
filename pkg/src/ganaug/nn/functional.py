"""Differentiable layer kernels on NCHW tensors.

Convolutions are cross-correlations computed with an im2col view and a
tensordot; the transposed convolution reuses the same two helpers with the
roles of forward and backward swapped.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ChannelMismatch, OutputTooSmall, ShapeMismatch, SingleElementBatch
from ..tensor import Tensor, get_dtype, make_result
from ..tensor import leaky_relu, relu, sigmoid, tanh  # noqa: F401  (re-exported)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def conv_transpose_output_size(size: int, k: int, s: int, p: int) -> int:
    return (size - 1) * s - 2 * p + k


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Strided view of shape (N, C, Ho, Wo, kh, kw) over a padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def _col2im(cols: np.ndarray, out_hw: tuple[int, int], sh: int, sw: int) -> np.ndarray:
    """Scatter-add (N, Ho, Wo, C, kh, kw) patches into an (N, C, H, W) canvas."""
    n, ho, wo, c, kh, kw = cols.shape
    out = np.zeros((n, c) + out_hw, dtype=cols.dtype)
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # N, C, kh, kw, Ho, Wo
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """Cross-correlate ``x[N,C,H,W]`` with ``weight[O,C,kh,kw]``."""
    if x.ndim != 4:
        raise ShapeMismatch(f"conv2d expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if c != ci:
        raise ChannelMismatch(f"input has {c} channels, kernel expects {ci}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    ho, wo = conv_output_size(h, kh, sh, ph), conv_output_size(w, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise OutputTooSmall(f"conv2d output {ho}x{wo} for input {h}x{w}, kernel {kh}x{kw}")

    xp = _pad(x.data, ph, pw)
    cols = _im2col(xp, kh, kw, sh, sw)
    wd = weight.data
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)
    hp, wp = xp.shape[2], xp.shape[3]

    def bw(g):
        dcols = np.tensordot(g, wd, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
        dxp = _col2im(dcols, (hp, wp), sh, sw)
        dx = dxp[:, :, ph:ph + h, pw:pw + w]
        dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride=1, padding=0) -> Tensor:
    """Transposed convolution with ``weight[C_in,C_out,kh,kw]``.

    The forward pass is the input-gradient of :func:`conv2d` with the same
    kernel, stride and padding.
    """
    if x.ndim != 4:
        raise ShapeMismatch(f"conv_transpose2d expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    ci, o, kh, kw = weight.shape
    if c != ci:
        raise ChannelMismatch(f"input has {c} channels, kernel expects {ci}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    ho, wo = conv_transpose_output_size(h, kh, sh, ph), conv_transpose_output_size(w, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise OutputTooSmall(f"conv_transpose2d output {ho}x{wo} for input {h}x{w}")

    xd, wd = x.data, weight.data
    full_hw = ((h - 1) * sh + kh, (w - 1) * sw + kw)
    cols = np.tensordot(xd, wd, axes=([1], [0]))  # N, H, W, O, kh, kw
    full = _col2im(cols, full_hw, sh, sw)
    out = full[:, :, ph:ph + ho, pw:pw + wo]
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def bw(g):
        gfull = np.zeros((n, o) + full_hw, dtype=g.dtype)
        gfull[:, :, ph:ph + ho, pw:pw + wo] = g
        gcols = _im2col(gfull, kh, kw, sh, sw)  # N, O, H, W, kh, kw
        dx = np.tensordot(gcols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        dw = np.tensordot(xd, gcols, axes=([0, 2, 3], [0, 2, 3]))
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return np.ascontiguousarray(dx), dw, db

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W) of an NCHW tensor.

    In training mode the running buffers are updated in place: the mean with
    the batch mean and the variance with the unbiased batch variance.
    """
    if x.ndim not in (2, 4):
        raise ShapeMismatch(f"batch_norm expects NC or NCHW input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,):
        raise ShapeMismatch(f"batch_norm has {gamma.shape[0]} channels, input has {c}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xd = x.data
    dt = xd.dtype
    if training:
        m = xd.size // c
        if m < 2:
            raise SingleElementBatch("train-mode batch norm needs at least two values per channel")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= (1 - momentum)
        running_mean += momentum * mu
        running_var *= (1 - momentum)
        running_var += momentum * var * (m / (m - 1))
    else:
        mu, var = running_mean.astype(dt), running_var.astype(dt)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (xd - mu.reshape(bshape)) * inv_std.reshape(bshape)
    gd, bd = gamma.data.reshape(bshape), beta.data.reshape(bshape)
    out = xhat * gd + bd

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gd
        if training:
            dx = (dxhat - dxhat.mean(axis=axes, keepdims=True)
                  - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)) * inv_std.reshape(bshape)
        else:
            dx = dxhat * inv_std.reshape(bshape)
        return dx, dgamma, dbeta

    return make_result(out.astype(dt, copy=False), (x, gamma, beta), bw)


def max_pool2d(x: Tensor, kernel=2, stride=None) -> Tensor:
    """Windowed max; ties route the gradient to the first element in row-major order."""
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else kernel)
    n, c, h, w = x.shape
    ho, wo = conv_output_size(h, kh, sh, 0), conv_output_size(w, kw, sw, 0)
    if ho < 1 or wo < 1:
        raise OutputTooSmall(f"max_pool2d output {ho}x{wo} for input {h}x{w}")
    win = _im2col(x.data, kh, kw, sh, sw).reshape(n, c, ho, wo, kh * kw)
    arg = win.argmax(axis=-1)  # argmax returns the first maximal index
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        onehot = np.zeros((n, c, ho, wo, kh * kw), dtype=g.dtype)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        cols = onehot.reshape(n, c, ho, wo, kh, kw).transpose(0, 2, 3, 1, 4, 5)
        return (_col2im(cols, (h, w), sh, sw),)

    return make_result(np.ascontiguousarray(out), (x,), bw)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x[N,in]`` and ``weight[out,in]``."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"dense input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        return g @ wd, g.T @ xd, (g.sum(axis=0) if bias is not None else None)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw)


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], int(np.prod(x.shape[1:])))


def _log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    """Row softmax of ``x[N,K]`` with max subtraction."""
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeMismatch(f"softmax expects [N,K>=2], got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return make_result(y, (x,), bw)


def log_softmax(x: Tensor) -> Tensor:
    y = _log_softmax_np(x.data)
    p = np.exp(y)

    def bw(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return make_result(y, (x,), bw)


def activation(kind: str, x: Tensor, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


__all__ = [
    "conv2d", "conv_transpose2d", "batch_norm", "max_pool2d", "dense", "flatten",
    "softmax", "log_softmax", "activation", "relu", "leaky_relu", "tanh", "sigmoid",
    "conv_output_size", "conv_transpose_output_size", "get_dtype",
]
