"""Differentiable array ops used by the spiking pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    DimensionError,
    NumericError,
    PreconditionError,
    Tensor,
    as_tensor,
    make_result,
    sum_array,
    unbroadcast,
)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch axes."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise DimensionError("matmul needs at least 1-d operands")
    ka = a.shape[-1]
    kb = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if ka != kb:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    out = np.matmul(x, y)

    def adjoint(g):
        if y.ndim == 1:
            ga = g[..., None] * y
            gb = (x * g[..., None]).reshape(-1, y.shape[0]).sum(axis=0)
            return unbroadcast(ga, x.shape), gb
        if x.ndim == 1:
            ga = np.matmul(y, g[..., None])[..., 0]
            gb = x[:, None] * g[..., None, :]
            return unbroadcast(ga, x.shape), unbroadcast(gb, y.shape)
        ga = np.matmul(g, np.swapaxes(y, -1, -2))
        gb = np.matmul(np.swapaxes(x, -1, -2), g)
        return unbroadcast(ga, x.shape), unbroadcast(gb, y.shape)

    return make_result(out, (a, b), adjoint)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis: ``x @ weight + bias``.

    ``weight`` is stored ``(in_features, out_features)``.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    cin, cout = weight.shape
    if x.shape[-1] != cin:
        raise DimensionError(f"linear expects {cin} input features, got {x.shape[-1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, cin)
    w = weight.data
    out = x2 @ w
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(*lead, cout)

    def adjoint(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ w.T).reshape(x.shape)
        gw = x2.T @ g2
        gb = sum_array(g2, axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make_result(out, parents, lambda g: adjoint(g)[: len(parents)])


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x, kernel, stride: int = 1, pad: int | None = None) -> Tensor:
    """Cross-correlation of channel-last images.

    ``x`` has shape ``(..., H, W, Cin)`` (leading axes are flattened into a
    batch) and ``kernel`` has shape ``(k, k, Cin, Cout)``.  ``pad`` defaults to
    ``k // 2``.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise DimensionError(f"kernel must be (k, k, Cin, Cout), got {kernel.shape}")
    k, _, cin, cout = kernel.shape
    if k % 2 == 0:
        raise DimensionError("kernel size must be odd")
    if x.ndim < 3 or x.shape[-1] != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    pad = k // 2 if pad is None else pad
    lead = x.shape[:-3]
    h, w = x.shape[-3], x.shape[-2]
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(w, k, stride, pad)
    if ho < 1 or wo < 1:
        raise DimensionError("conv2d output would be empty")
    xb = x.data.reshape(-1, h, w, cin)
    n = xb.shape[0]
    xp = np.pad(xb, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xb
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, k * k * cin)
    wm = kernel.data.reshape(k * k * cin, cout)
    out = (cols @ wm).reshape(*lead, ho, wo, cout)

    def adjoint(g):
        g2 = g.reshape(n * ho * wo, cout)
        gw = (cols.T @ g2).reshape(kernel.shape)
        dcols = (g2 @ wm.T).reshape(n, ho, wo, k, k, cin)
        gxp = np.zeros_like(xp)
        for ky in range(k):
            for kx in range(k):
                gxp[:, ky : ky + stride * ho : stride, kx : kx + stride * wo : stride, :] += dcols[:, :, :, ky, kx, :]
        gx = gxp[:, pad : pad + h, pad : pad + w, :] if pad else gxp
        return gx.reshape(x.shape), gw

    return make_result(out, (x, kernel), adjoint)


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32) -> "BatchNormState":
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype), momentum, eps)


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool = True) -> Tensor:
    """Per-channel normalisation over every axis except the last."""
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,) or state.running_mean.shape != (c,):
        raise DimensionError(f"batch_norm channel mismatch: input has {c} channels")
    xd = x.data
    n = xd.size // c if c else 0
    if n == 0:
        raise PreconditionError("batch_norm needs a non-empty batch")
    axes = tuple(range(xd.ndim - 1))
    g_, b_ = gamma.data, beta.data

    if training:
        mean = sum_array(xd, axis=axes) / n
        centered = xd - mean
        var = sum_array(centered * centered, axis=axes) / n
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = centered * inv_std
        m = state.momentum
        unbiased = var * (n / (n - 1)) if n > 1 else var
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(state.running_var.dtype)
        out = xhat * g_ + b_

        def adjoint(g):
            gxhat = g * g_
            s1 = sum_array(gxhat, axis=axes)
            s2 = sum_array(gxhat * xhat, axis=axes)
            gx = (inv_std / n) * (n * gxhat - s1 - xhat * s2)
            return gx, sum_array(g * xhat, axis=axes), sum_array(g, axis=axes)

    else:
        inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).astype(xd.dtype)
        xhat = (xd - state.running_mean) * inv_std
        out = xhat * g_ + b_

        def adjoint(g):
            return g * (g_ * inv_std), sum_array(g * xhat, axis=axes), sum_array(g, axis=axes)

    return make_result(out.astype(xd.dtype, copy=False), (x, gamma, beta), adjoint)


def avg_pool2d(x) -> Tensor:
    """Global spatial mean: ``(..., H, W, C) -> (..., C)``."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise DimensionError("avg_pool2d expects (..., H, W, C)")
    h, w = x.shape[-3], x.shape[-2]
    xd = x.data
    out = sum_array(xd, axis=(-3, -2)) / (h * w)

    def adjoint(g):
        return (np.broadcast_to(g[..., None, None, :] / (h * w), xd.shape).astype(xd.dtype),)

    return make_result(np.asarray(out, dtype=xd.dtype), (x,), adjoint)


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    x = as_tensor(x)
    xd = x.data
    if np.isnan(xd).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def adjoint(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result(y, (x,), adjoint)
