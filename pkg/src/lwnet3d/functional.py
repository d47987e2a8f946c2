"""Stateless forward/backward kernels for 3-D layers.

Every ``*_backward`` function takes the same arguments as its forward
counterpart plus the upstream gradient, and returns gradients in the order
of the differentiable inputs. Convolutions are cross-correlations without a
bias term.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import triple


def conv_output_size(n: int, k: int, stride: int = 1, pad: int = 0) -> int:
    if n + 2 * pad < k:
        raise ValueError(f"kernel {k} larger than padded input {n + 2 * pad}")
    return (n + 2 * pad - k) // stride + 1


def _pad(x: np.ndarray, padding) -> np.ndarray:
    if not any(padding):
        return x
    pd, ph, pw = padding
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))


def _unpad(x: np.ndarray, padding) -> np.ndarray:
    pd, ph, pw = padding
    D, H, W = x.shape[2:]
    return x[:, :, pd : D - pd, ph : H - ph, pw : W - pw]


def _tap(offsets, stride, out_shape):
    """Slices selecting, for one kernel tap, the input voxel of every output."""
    return tuple(
        slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offsets, stride, out_shape)
    )


def _check_conv(x, w, groups):
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError("conv3d expects 5-D input and weight")
    C, O = x.shape[1], w.shape[0]
    if C % groups or O % groups:
        raise ValueError(f"channels {C}->{O} not divisible by groups={groups}")
    if w.shape[1] * groups != C:
        raise ValueError(
            f"input has {C} channels, weight expects {w.shape[1] * groups}"
        )


def _out_spatial(x, w, stride, padding):
    return tuple(
        conv_output_size(n, k, s, p)
        for n, k, s, p in zip(x.shape[2:], w.shape[2:], stride, padding)
    )


def conv3d(x, w, stride=1, padding=0, groups=1):
    stride, padding = triple(stride, "stride"), triple(padding, "padding", 0)
    _check_conv(x, w, groups)
    out_sp = _out_spatial(x, w, stride, padding)
    xp = _pad(x, padding)
    O, C = w.shape[0], x.shape[1]
    if groups == 1:
        return _dense_forward(xp, w, stride, out_sp)
    if groups == C and O == C:
        return _depthwise_forward(xp, w, stride, out_sp)
    ci, co = C // groups, O // groups
    parts = [
        _dense_forward(xp[:, g * ci : (g + 1) * ci], w[g * co : (g + 1) * co], stride, out_sp)
        for g in range(groups)
    ]
    return np.concatenate(parts, axis=1)


def conv3d_backward(x, w, grad_out, stride=1, padding=0, groups=1):
    """Return ``(grad_x, grad_w)``."""
    stride, padding = triple(stride, "stride"), triple(padding, "padding", 0)
    _check_conv(x, w, groups)
    out_sp = _out_spatial(x, w, stride, padding)
    if grad_out.shape != (x.shape[0], w.shape[0]) + out_sp:
        raise ValueError(f"grad_out has shape {grad_out.shape}, expected "
                         f"{(x.shape[0], w.shape[0]) + out_sp}")
    xp = _pad(x, padding)
    O, C = w.shape[0], x.shape[1]
    if groups == 1:
        gxp, gw = _dense_backward(xp, w, grad_out, stride, out_sp)
    elif groups == C and O == C:
        gxp, gw = _depthwise_backward(xp, w, grad_out, stride, out_sp)
    else:
        ci, co = C // groups, O // groups
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for g in range(groups):
            gx_g, gw_g = _dense_backward(
                xp[:, g * ci : (g + 1) * ci],
                w[g * co : (g + 1) * co],
                grad_out[:, g * co : (g + 1) * co],
                stride,
                out_sp,
            )
            gxp[:, g * ci : (g + 1) * ci] = gx_g
            gw[g * co : (g + 1) * co] = gw_g
    return _unpad(gxp, padding), gw


def _windows(xp, kernel, stride):
    v = sliding_window_view(xp, kernel, axis=(2, 3, 4))
    sd, sh, sw = stride
    return v[:, :, ::sd, ::sh, ::sw]


def _dense_forward(xp, w, stride, out_sp):
    kernel = w.shape[2:]
    if kernel == (1, 1, 1):
        xs = xp[(slice(None), slice(None)) + _tap((0, 0, 0), stride, out_sp)]
        out = np.tensordot(w[:, :, 0, 0, 0], xs, axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3, 4))
    win = _windows(xp, kernel, stride)
    out = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))


def _dense_backward(xp, w, g, stride, out_sp):
    kernel = w.shape[2:]
    if kernel == (1, 1, 1):
        sl = (slice(None), slice(None)) + _tap((0, 0, 0), stride, out_sp)
        gw = np.tensordot(g, xp[sl], axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        gxp = np.zeros_like(xp)
        gxp[sl] = np.tensordot(w[:, :, 0, 0, 0], g, axes=([0], [1])).transpose(1, 0, 2, 3, 4)
        return gxp, gw.reshape(w.shape)
    win = _windows(xp, kernel, stride)
    gw = np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    # (N, oD, oH, oW, C, kD, kH, kW)
    dcol = np.tensordot(g, w, axes=([1], [0]))
    gxp = np.zeros_like(xp)
    for tap in itertools.product(*(range(k) for k in kernel)):
        sl = (slice(None), slice(None)) + _tap(tap, stride, out_sp)
        gxp[sl] += dcol[(Ellipsis,) + tap].transpose(0, 4, 1, 2, 3)
    return gxp, gw


# Depthwise kernels loop over taps in channel-last layout, where every tap is
# a contiguous broadcast multiply over the channel axis.


def _taps(kernel):
    return enumerate(itertools.product(*(range(k) for k in kernel)))


def _depthwise_forward(xp, w, stride, out_sp):
    C = xp.shape[1]
    xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 4, 1))
    wl = w.reshape(C, -1).T
    out = np.zeros((xp.shape[0],) + tuple(out_sp) + (C,), dtype=np.result_type(xp, w))
    for t, tap in _taps(w.shape[2:]):
        out += xl[(slice(None),) + _tap(tap, stride, out_sp)] * wl[t]
    return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))


def _depthwise_backward(xp, w, g, stride, out_sp):
    C = xp.shape[1]
    xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 4, 1))
    gl = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1))
    wl = w.reshape(C, -1).T
    gxl = np.zeros_like(xl, dtype=np.result_type(xp, g))
    gwl = np.empty_like(wl, dtype=np.result_type(xp, g))
    g_flat = gl.reshape(-1, C)
    for t, tap in _taps(w.shape[2:]):
        sl = (slice(None),) + _tap(tap, stride, out_sp)
        gwl[t] = np.einsum("mc,mc->c", g_flat, xl[sl].reshape(-1, C))
        gxl[sl] += gl * wl[t]
    return gxl.transpose(0, 4, 1, 2, 3), gwl.T.reshape(w.shape).astype(w.dtype, copy=False)


def conv3d_reference(x, w, stride=1, padding=0, groups=1):
    """Direct nested-loop cross-correlation; slow, used as a test oracle."""
    stride, padding = triple(stride, "stride"), triple(padding, "padding", 0)
    _check_conv(x, w, groups)
    oD, oH, oW = _out_spatial(x, w, stride, padding)
    xp = _pad(x, padding)
    N = x.shape[0]
    O, Cg, kD, kH, kW = w.shape
    Og = O // groups
    out = np.zeros((N, O, oD, oH, oW), dtype=np.result_type(x, w))
    sd, sh, sw = stride
    for n in range(N):
        for o in range(O):
            c0 = (o // Og) * Cg
            for d in range(oD):
                for h in range(oH):
                    for ww in range(oW):
                        acc = 0.0
                        for c in range(Cg):
                            for i in range(kD):
                                for j in range(kH):
                                    for k in range(kW):
                                        acc += (
                                            xp[n, c0 + c, d * sd + i, h * sh + j, ww * sw + k]
                                            * w[o, c, i, j, k]
                                        )
                        out[n, o, d, h, ww] = acc
    return out


# pooling ------------------------------------------------------------------


def maxpool3d(x, kernel, stride):
    """Return ``(out, argmax)``; ``argmax`` indexes the flattened window and
    picks the first maximum in scan order."""
    kernel, stride = triple(kernel, "kernel"), triple(stride, "stride")
    out_sp = tuple(conv_output_size(n, k, s) for n, k, s in zip(x.shape[2:], kernel, stride))
    win = _windows(x, kernel, stride).reshape(x.shape[:2] + out_sp + (-1,))
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool3d_backward(x, argmax, grad_out, kernel, stride):
    kernel, stride = triple(kernel, "kernel"), triple(stride, "stride")
    out_sp = grad_out.shape[2:]
    gx = np.zeros_like(x, dtype=grad_out.dtype)
    for flat, tap in enumerate(itertools.product(*(range(k) for k in kernel))):
        sl = (slice(None), slice(None)) + _tap(tap, stride, out_sp)
        gx[sl] += np.where(argmax == flat, grad_out, 0)
    return gx


def _pool_extent(n, k, s, ceil_mode):
    if not ceil_mode:
        return conv_output_size(n, k, s)
    if n < 1:
        raise ValueError("empty pooling input")
    o = max(math.ceil((n - k) / s), 0) + 1
    if (o - 1) * s >= n:
        o -= 1
    return o


def _window_counts(n, k, s, o):
    starts = np.arange(o) * s
    return np.minimum(starts + k, n) - starts


def _avgpool_geometry(shape, kernel, stride, ceil_mode):
    out_sp = tuple(
        _pool_extent(n, k, s, ceil_mode) for n, k, s in zip(shape[2:], kernel, stride)
    )
    pad_end = tuple(
        max((o - 1) * s + k - n, 0) for n, k, s, o in zip(shape[2:], kernel, stride, out_sp)
    )
    cd, ch, cw = (
        _window_counts(n, k, s, o) for n, k, s, o in zip(shape[2:], kernel, stride, out_sp)
    )
    counts = cd[:, None, None] * ch[None, :, None] * cw[None, None, :]
    return out_sp, pad_end, counts


def avgpool3d(x, kernel, stride, ceil_mode=False):
    """Window means. With ``ceil_mode`` a partial window at the far edge is
    kept and averaged over its in-bounds elements only."""
    kernel, stride = triple(kernel, "kernel"), triple(stride, "stride")
    out_sp, pad_end, counts = _avgpool_geometry(x.shape, kernel, stride, ceil_mode)
    if any(pad_end):
        x = np.pad(x, ((0, 0), (0, 0)) + tuple((0, p) for p in pad_end))
    out = np.zeros(x.shape[:2] + out_sp, dtype=x.dtype)
    for tap in itertools.product(*(range(k) for k in kernel)):
        out += x[(slice(None), slice(None)) + _tap(tap, stride, out_sp)]
    return out / counts.astype(x.dtype)


def avgpool3d_backward(x_shape, grad_out, kernel, stride, ceil_mode=False):
    kernel, stride = triple(kernel, "kernel"), triple(stride, "stride")
    out_sp, pad_end, counts = _avgpool_geometry(x_shape, kernel, stride, ceil_mode)
    padded = tuple(n + p for n, p in zip(x_shape[2:], pad_end))
    gx = np.zeros(tuple(x_shape[:2]) + padded, dtype=grad_out.dtype)
    g = grad_out / counts.astype(grad_out.dtype)
    for tap in itertools.product(*(range(k) for k in kernel)):
        gx[(slice(None), slice(None)) + _tap(tap, stride, out_sp)] += g
    D, H, W = x_shape[2:]
    return gx[:, :, :D, :H, :W]


def adaptive_avgpool3d(x):
    if min(x.shape[2:]) < 1:
        raise ValueError(f"adaptive pooling needs non-empty extents, got {x.shape}")
    return x.mean(axis=(2, 3, 4), keepdims=True)


def adaptive_avgpool3d_backward(x_shape, grad_out):
    count = x_shape[2] * x_shape[3] * x_shape[4]
    return np.broadcast_to(grad_out / grad_out.dtype.type(count), x_shape).copy()


# normalization / activations / dense ---------------------------------------


def batchnorm_train(x, gamma, beta, eps):
    """Normalize with batch statistics over (N, D, H, W).

    Returns ``(out, x_hat, inv_std, batch_mean, batch_var)`` where
    ``batch_var`` is the biased estimate.
    """
    m = x.shape[0] * x.shape[2] * x.shape[3] * x.shape[4]
    if m < 2:
        raise ValueError("batch norm in train mode needs at least 2 values per channel")
    axes = (0, 2, 3, 4)
    mean = x.mean(axis=axes)
    centered = x - mean.reshape(1, -1, 1, 1, 1)
    var = (centered * centered).mean(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std.reshape(1, -1, 1, 1, 1)
    out = x_hat * gamma.reshape(1, -1, 1, 1, 1) + beta.reshape(1, -1, 1, 1, 1)
    return out, x_hat, inv_std, mean, var


def batchnorm_train_backward(grad_out, x_hat, inv_std, gamma):
    """Return ``(grad_x, grad_gamma, grad_beta)``."""
    axes = (0, 2, 3, 4)
    m = grad_out.size // grad_out.shape[1]
    grad_beta = grad_out.sum(axis=axes)
    grad_gamma = (grad_out * x_hat).sum(axis=axes)
    dx_hat = grad_out * gamma.reshape(1, -1, 1, 1, 1)
    grad_x = (
        inv_std.reshape(1, -1, 1, 1, 1)
        / m
        * (
            m * dx_hat
            - dx_hat.sum(axis=axes).reshape(1, -1, 1, 1, 1)
            - x_hat * (dx_hat * x_hat).sum(axis=axes).reshape(1, -1, 1, 1, 1)
        )
    )
    return grad_x, grad_gamma, grad_beta


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def linear(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear expects (N, {weight.shape[1]}) input, got {x.shape}")
    return x @ weight.T + bias


def linear_backward(x, weight, grad_out):
    """Return ``(grad_x, grad_weight, grad_bias)``."""
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


def log_softmax(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_backward(out, grad_out):
    return grad_out - np.exp(out) * grad_out.sum(axis=1, keepdims=True)
